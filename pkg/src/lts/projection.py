"""Spherical projection of a scan onto a 5-channel range image and back.

Channel order is (depth, intensity, x, y, z). Columns bin azimuth
``atan2(y, x)`` in increasing order across the azimuth FOV; rows bin elevation
``asin(z / r)`` with row 0 at the top (maximum elevation). Bins are half-open
``[lo, hi)``; an angle exactly at the FOV maximum lands in the edge pixel on
that side. On collisions the point with the smallest range wins, ties going to
the lower point index.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scan_io import FormatError, PathLike, PointCloud

NUM_CHANNELS = 5
CH_DEPTH, CH_INTENSITY, CH_X, CH_Y, CH_Z = range(NUM_CHANNELS)

# point_status codes
IN_VIEW = 0
OUT_OF_FOV = 1
OCCLUDED = 2
AT_ORIGIN = 3

RIMG_MAGIC = b"RIMG"
_RIMG_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class ProjectionConfig:
    height: int = 64
    width: int = 512
    azimuth_fov: tuple[float, float] = (-math.pi / 4, math.pi / 4)
    elevation_fov: tuple[float, float] = (math.radians(-24.8), math.radians(2.0))

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"image size must be positive, got {self.height}x{self.width}")
        for name, (lo, hi) in (("azimuth", self.azimuth_fov), ("elevation", self.elevation_fov)):
            if not lo < hi:
                raise ValueError(f"{name} FOV must satisfy min < max, got ({lo}, {hi})")


@dataclass
class RangeImage:
    channels: np.ndarray        # (H, W, 5) float32
    pixel_to_point: np.ndarray  # (H, W) int32, -1 where empty
    point_to_pixel: np.ndarray  # (N, 2) int32 (row, col), -1 where not shown
    point_status: np.ndarray    # (N,) uint8, one of IN_VIEW / OUT_OF_FOV / OCCLUDED / AT_ORIGIN

    @property
    def valid_mask(self) -> np.ndarray:
        return self.pixel_to_point >= 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixel_to_point.shape

    def counts(self) -> dict[str, int]:
        st = self.point_status
        return {"in_view": int((st == IN_VIEW).sum()),
                "out_of_fov": int((st == OUT_OF_FOV).sum()),
                "occluded": int((st == OCCLUDED).sum()),
                "at_origin": int((st == AT_ORIGIN).sum())}


def _bin(values: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    idx = np.floor((values - lo) / (hi - lo) * n).astype(np.int64)
    return np.minimum(idx, n - 1)


def project(cloud: PointCloud, cfg: ProjectionConfig = ProjectionConfig()) -> RangeImage:
    h, w = cfg.height, cfg.width
    n = len(cloud)
    xyz = cloud.xyz
    r = np.sqrt(np.sum(xyz * xyz, axis=1))

    status = np.full(n, OUT_OF_FOV, dtype=np.uint8)
    at_origin = r == 0.0
    status[at_origin] = AT_ORIGIN

    with np.errstate(invalid="ignore", divide="ignore"):
        azimuth = np.arctan2(xyz[:, 1], xyz[:, 0])
        elevation = np.arcsin(np.clip(xyz[:, 2] / r, -1.0, 1.0))
    az_lo, az_hi = cfg.azimuth_fov
    el_lo, el_hi = cfg.elevation_fov
    in_fov = (~at_origin & (azimuth >= az_lo) & (azimuth <= az_hi)
              & (elevation >= el_lo) & (elevation <= el_hi))

    idx = np.flatnonzero(in_fov)
    cols = _bin(azimuth[idx], az_lo, az_hi, w)
    rows = h - 1 - _bin(elevation[idx], el_lo, el_hi, h)
    flat = rows * w + cols

    # per pixel: nearest range first, then lowest point index
    order = np.lexsort((idx, r[idx], flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = idx[order[first]]
    win_flat = flat_sorted[first]

    pixel_to_point = np.full(h * w, -1, dtype=np.int32)
    pixel_to_point[win_flat] = winners
    pixel_to_point = pixel_to_point.reshape(h, w)

    status[idx] = OCCLUDED
    status[winners] = IN_VIEW
    point_to_pixel = np.full((n, 2), -1, dtype=np.int32)
    point_to_pixel[winners, 0] = win_flat // w
    point_to_pixel[winners, 1] = win_flat % w

    channels = np.zeros((h * w, NUM_CHANNELS), dtype=np.float32)
    if len(winners):
        pts32 = cloud.points[winners].astype(np.float32)
        # depth from the stored (rounded) coordinates keeps the channels self-consistent
        p64 = pts32[:, :3].astype(np.float64)
        channels[win_flat, CH_DEPTH] = np.sqrt(np.sum(p64 * p64, axis=1))
        channels[win_flat, CH_INTENSITY] = pts32[:, 3]
        channels[win_flat, CH_X:] = pts32[:, :3]
    channels = channels.reshape(h, w, NUM_CHANNELS)
    return RangeImage(channels, pixel_to_point, point_to_pixel, status)


def unproject_labels(image_labels, img: RangeImage, default_class: int = 0) -> np.ndarray:
    """Give each point the label of its pixel; unseen points get ``default_class``."""
    image_labels = np.asarray(image_labels)
    if image_labels.shape != img.shape:
        raise ValueError(
            f"label image shape {image_labels.shape} does not match range image {img.shape}")
    labels = np.full(len(img.point_status), default_class, dtype=np.uint8)
    shown = img.point_status == IN_VIEW
    rc = img.point_to_pixel[shown]
    labels[shown] = image_labels[rc[:, 0], rc[:, 1]]
    return labels


def encode_range_image(img: RangeImage) -> bytes:
    h, w = img.shape
    head = _RIMG_HEADER.pack(RIMG_MAGIC, 1, h, w)
    return (head + np.ascontiguousarray(img.channels, dtype="<f4").tobytes()
            + np.ascontiguousarray(img.pixel_to_point, dtype="<i4").tobytes())


def decode_range_image(data: bytes) -> RangeImage:
    """Decode an RIMG dump.

    The dump does not record the scan size, so ``point_to_pixel`` covers
    indices up to the largest stored winner; points that won no pixel are
    marked occluded, which is all a consumer of the image can tell.
    """
    if len(data) < _RIMG_HEADER.size:
        raise FormatError(f"range image too short for header ({len(data)} bytes)")
    magic, version, h, w = _RIMG_HEADER.unpack_from(data)
    if magic != RIMG_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RIMG_MAGIC!r}")
    if version != 1:
        raise FormatError(f"unsupported range image version {version}")
    expected = _RIMG_HEADER.size + h * w * (NUM_CHANNELS * 4 + 4)
    if len(data) != expected:
        raise FormatError(f"range image {h}x{w} needs {expected} bytes, found {len(data)}")
    off = _RIMG_HEADER.size
    channels = np.frombuffer(data, dtype="<f4", count=h * w * NUM_CHANNELS, offset=off)
    channels = channels.reshape(h, w, NUM_CHANNELS).astype(np.float32)
    off += h * w * NUM_CHANNELS * 4
    p2p = np.frombuffer(data, dtype="<i4", count=h * w, offset=off).reshape(h, w).astype(np.int32)
    if p2p.size and p2p.min() < -1:
        raise FormatError("pixel_to_point holds indices below -1")

    n = int(p2p.max()) + 1 if p2p.size else 0
    n = max(n, 0)
    point_to_pixel = np.full((n, 2), -1, dtype=np.int32)
    status = np.full(n, OCCLUDED, dtype=np.uint8)
    rows, cols = np.nonzero(p2p >= 0)
    pts = p2p[rows, cols]
    point_to_pixel[pts, 0] = rows
    point_to_pixel[pts, 1] = cols
    status[pts] = IN_VIEW
    return RangeImage(channels, p2p, point_to_pixel, status)


def write_range_image(img: RangeImage, path: PathLike) -> None:
    Path(path).write_bytes(encode_range_image(img))


def read_range_image(path: PathLike) -> RangeImage:
    return decode_range_image(Path(path).read_bytes())
