"""Readers and writers for scans, poses, labels and classifier scores.

Formats (all little-endian):

* KITTI Velodyne ``.bin``: N x (x, y, z, intensity) float32, no header.
* Pose text: one pose per line, 12 floats, row-major 3x4 ``[R|t]``.
* ``PSCR`` scores: ``b"PSCR"``, u32 version=1, u32 N, u32 C, N*C float32.
* ``PLBL`` labels: ``b"PLBL"``, u32 version=1, u32 N, N uint8.

Every reader has a ``decode_*`` twin working on ``bytes`` so that parsing can be
tested without touching the filesystem.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import DEFAULT_CLASS_NAMES

log = logging.getLogger(__name__)

PathLike = str | os.PathLike

SCORES_MAGIC = b"PSCR"
LABELS_MAGIC = b"PLBL"
FORMAT_VERSION = 1

_POINT_DTYPE = np.dtype("<f4")
_HEADER3 = struct.Struct("<4sIII")  # magic, version, N, C
_HEADER2 = struct.Struct("<4sII")  # magic, version, N

# rows whose sum is off by more than this are rescaled; below it they are
# float32 softmax rounding and kept verbatim
_RENORM_SKIP_TOL = 1e-6
ROW_SUM_TOL = 1e-3
_RANGE_SLACK = 1e-6
POSE_ORTHO_TOL = 1e-3


class FormatError(ValueError):
    """A file does not follow its declared layout."""


class MalformedPointError(FormatError):
    def __init__(self, index: int, message: str = "non-finite value"):
        super().__init__(f"point {index}: {message}")
        self.index = index


class PoseParseError(FormatError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class PoseValidationError(FormatError):
    pass


class DistributionError(FormatError):
    def __init__(self, row: int, total: float):
        super().__init__(f"row {row}: scores sum to {total:.6g}, expected 1")
        self.row = row


class ScoreRangeError(FormatError):
    def __init__(self, row: int, col: int, value: float):
        super().__init__(f"row {row}, class {col}: score {value!r} outside [0, 1]")
        self.row = row
        self.col = col


@dataclass
class PointCloud:
    """One LiDAR sweep. ``points`` is an (N, 4) array of x, y, z, intensity."""

    points: np.ndarray
    scan_id: int = 0
    n_clamped: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    @classmethod
    def from_xyz(cls, xyz, intensity=None, scan_id: int = 0) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if intensity is None:
            intensity = np.zeros(len(xyz))
        return cls(np.column_stack([xyz, np.asarray(intensity, dtype=np.float64)]), scan_id)


@dataclass
class Pose:
    """Rigid transform mapping sensor coordinates into a world frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation

    def orthonormality_error(self) -> float:
        return float(np.abs(self.rotation @ self.rotation.T - np.eye(3)).max())

    def is_rigid(self, tol: float = 1e-6) -> bool:
        return (self.orthonormality_error() <= tol
                and abs(np.linalg.det(self.rotation) - 1.0) <= tol)


@dataclass
class ClassScores:
    """Per-point class probabilities, shape (N, C)."""

    scores: np.ndarray
    class_names: tuple = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError(f"scores must be 2-D, got shape {s.shape}")
        self.scores = s
        if len(self.class_names) != s.shape[1]:
            if self.class_names is DEFAULT_CLASS_NAMES:
                self.class_names = tuple(f"class_{i}" for i in range(s.shape[1]))
            else:
                raise ValueError(
                    f"{len(self.class_names)} class names for {s.shape[1]} score columns")
        self.class_names = tuple(self.class_names)

    def __len__(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    def argmax(self) -> np.ndarray:
        return np.argmax(self.scores, axis=1).astype(np.uint8)


def check_distribution(scores: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Raise if any row is not a probability vector within ``tol``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return
    if not np.all(np.isfinite(scores)):
        row, col = np.argwhere(~np.isfinite(scores))[0]
        raise ScoreRangeError(int(row), int(col), float(scores[row, col]))
    bad = (scores < -_RANGE_SLACK) | (scores > 1 + _RANGE_SLACK)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ScoreRangeError(int(row), int(col), float(scores[row, col]))
    sums = scores.sum(axis=1)
    off = np.abs(sums - 1.0) > tol
    if off.any():
        row = int(np.flatnonzero(off)[0])
        raise DistributionError(row, float(sums[row]))


# --------------------------------------------------------------------------
# Velodyne scans


def decode_velodyne(data: bytes, scan_id: int = 0) -> PointCloud:
    if len(data) % 16:
        raise FormatError(f"velodyne scan has {len(data)} bytes, not a multiple of 16")
    raw = np.frombuffer(data, dtype=_POINT_DTYPE).reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(raw).all(axis=1)
    if not finite.all():
        raise MalformedPointError(int(np.flatnonzero(~finite)[0]))
    inten = raw[:, 3]
    outside = (inten < 0.0) | (inten > 1.0)
    n_clamped = int(outside.sum())
    if n_clamped:
        log.warning("clamped %d intensity values into [0, 1]", n_clamped)
        raw[:, 3] = np.clip(inten, 0.0, 1.0)
    return PointCloud(raw, scan_id=scan_id, n_clamped=n_clamped)


def encode_velodyne(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype=_POINT_DTYPE).tobytes()


def read_velodyne_bin(path: PathLike, scan_id: int = 0) -> PointCloud:
    return decode_velodyne(Path(path).read_bytes(), scan_id=scan_id)


def write_velodyne_bin(cloud: PointCloud, path: PathLike) -> None:
    Path(path).write_bytes(encode_velodyne(cloud))


# --------------------------------------------------------------------------
# Poses


def _nearest_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def parse_poses(text: str) -> list[Pose]:
    poses = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 12:
            raise PoseParseError(line_no, f"expected 12 values, found {len(tokens)}")
        try:
            vals = np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise PoseParseError(line_no, str(exc)) from None
        if not np.all(np.isfinite(vals)):
            raise PoseParseError(line_no, "non-finite value")
        m = vals.reshape(3, 4)
        pose = Pose(m[:, :3], m[:, 3])
        err = pose.orthonormality_error()
        if err > POSE_ORTHO_TOL:
            raise PoseValidationError(
                f"line {line_no}: rotation not orthonormal (max |RR^T - I| = {err:.3g})")
        if np.linalg.det(pose.rotation) < 0:
            raise PoseValidationError(f"line {line_no}: rotation has negative determinant")
        if err > 1e-9:
            # printed poses lose digits; snap back onto SO(3)
            pose.rotation = _nearest_rotation(pose.rotation)
        poses.append(pose)
    return poses


def format_poses(poses: Iterable[Pose]) -> str:
    lines = []
    for pose in poses:
        m = np.column_stack([pose.rotation, pose.translation]).ravel()
        lines.append(" ".join(repr(float(v)) for v in m))
    return "".join(line + "\n" for line in lines)


def read_pose_file(path: PathLike) -> list[Pose]:
    return parse_poses(Path(path).read_text())


def write_pose_file(poses: Sequence[Pose], path: PathLike) -> None:
    Path(path).write_text(format_poses(poses))


# --------------------------------------------------------------------------
# Scores


def decode_scores(data: bytes, class_names: Sequence[str] | None = None) -> ClassScores:
    if len(data) < _HEADER3.size:
        raise FormatError(f"score file too short for header ({len(data)} bytes)")
    magic, version, n, c = _HEADER3.unpack_from(data)
    if magic != SCORES_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SCORES_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported score format version {version}")
    # python ints: no overflow in n * c
    expected = _HEADER3.size + 4 * n * c
    if len(data) != expected:
        raise FormatError(
            f"score file declares N={n}, C={c} ({expected} bytes) but has {len(data)} bytes")
    scores = np.frombuffer(data, dtype=_POINT_DTYPE, offset=_HEADER3.size)
    scores = scores.reshape(n, c).astype(np.float64)
    check_distribution(scores)
    np.clip(scores, 0.0, 1.0, out=scores)
    if n:
        sums = scores.sum(axis=1)
        rescale = np.abs(sums - 1.0) > _RENORM_SKIP_TOL
        if rescale.any():
            scores[rescale] /= sums[rescale, None]
    if class_names is None:
        class_names = DEFAULT_CLASS_NAMES if c == len(DEFAULT_CLASS_NAMES) else \
            tuple(f"class_{i}" for i in range(c))
    return ClassScores(scores, tuple(class_names))


def encode_scores(scores: ClassScores | np.ndarray) -> bytes:
    arr = scores.scores if isinstance(scores, ClassScores) else np.asarray(scores)
    arr = np.ascontiguousarray(arr, dtype=_POINT_DTYPE)
    if arr.ndim != 2:
        raise ValueError("scores must be 2-D")
    n, c = arr.shape
    return _HEADER3.pack(SCORES_MAGIC, FORMAT_VERSION, n, c) + arr.tobytes()


def read_scores(path: PathLike, class_names: Sequence[str] | None = None) -> ClassScores:
    return decode_scores(Path(path).read_bytes(), class_names)


def write_scores(scores: ClassScores | np.ndarray, path: PathLike) -> None:
    Path(path).write_bytes(encode_scores(scores))


# --------------------------------------------------------------------------
# Labels


def decode_labels(data: bytes) -> np.ndarray:
    if len(data) < _HEADER2.size:
        raise FormatError(f"label file too short for header ({len(data)} bytes)")
    magic, version, n = _HEADER2.unpack_from(data)
    if magic != LABELS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LABELS_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported label format version {version}")
    present = len(data) - _HEADER2.size
    if present != n:
        raise FormatError(f"label file declares N={n} but carries {present} label bytes")
    return np.frombuffer(data, dtype=np.uint8, offset=_HEADER2.size).copy()


def encode_labels(labels) -> bytes:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be 1-D")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("labels must fit in an unsigned byte")
    arr = arr.astype(np.uint8)
    return _HEADER2.pack(LABELS_MAGIC, FORMAT_VERSION, arr.size) + arr.tobytes()


def read_labels(path: PathLike) -> np.ndarray:
    return decode_labels(Path(path).read_bytes())


def write_labels(labels, path: PathLike) -> None:
    Path(path).write_bytes(encode_labels(labels))
