"""Synthetic scan sequences with ground truth, poses and noisy class scores.

Scenes are a flat ground square plus axis-aligned boxes moving at constant
velocity. Points are sampled uniformly over box surfaces and the ground, once
per sequence by default, so every point keeps its identity from scan to scan.
Scores are one-hot labels corrupted either by symmetric label flips or by
Dirichlet sampling around the one-hot vector. These noise models stand in for a
real classifier; they say nothing about how a trained network errs.

Randomness comes from Philox streams keyed by (seed, purpose, scan, item), so
any scan or object can be regenerated on its own with identical output.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import DEFAULT_CLASS_NAMES
from .scan_io import ClassScores, PathLike, PointCloud, Pose

_GEOMETRY, _NOISE = 0, 1


@dataclass(frozen=True)
class BoxObject:
    cls: int
    center: tuple[float, float, float]
    extents: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    num_points: int = 500


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[BoxObject, ...] = ()
    ground_extent: float = 40.0
    ground_z: float = -1.73
    ground_points: int = 2000
    num_scans: int = 10
    sensor_start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sensor_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sensor_yaw_rate: float = 0.0  # radians per scan
    resample: bool = False
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def validate(self) -> None:
        if self.num_scans < 1:
            raise ValueError("num_scans must be at least 1")
        if self.ground_extent <= 0:
            raise ValueError("ground_extent must be positive")
        if self.ground_points < 0:
            raise ValueError("ground_points must be non-negative")
        for k, obj in enumerate(self.objects):
            if min(obj.extents) <= 0:
                raise ValueError(f"object {k}: extents must be positive")
            if obj.num_points <= 0:
                raise ValueError(f"object {k}: num_points must be positive")
            if not 0 <= obj.cls < len(self.class_names):
                raise ValueError(f"object {k}: class index {obj.cls} out of range")
        if self.ground_points == 0 and not self.objects:
            raise ValueError("scene has no points")


@dataclass(frozen=True)
class NoiseSpec:
    mode: str = "flip"  # "flip" or "dirichlet"
    flip_p: float = 0.0
    kappa: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("flip", "dirichlet"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if not 0.0 <= self.flip_p < 1.0:
            raise ValueError(f"flip probability must lie in [0, 1), got {self.flip_p}")
        if not self.kappa > 0:
            raise ValueError(f"dirichlet concentration must be positive, got {self.kappa}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SimFrame:
    cloud: PointCloud
    labels: np.ndarray     # uint8 ground truth
    pose: Pose             # sensor to world
    scores: ClassScores
    point_ids: np.ndarray  # identity of each point across scans


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _sample_box_surface(rng: np.random.Generator, extents, n: int) -> np.ndarray:
    ex, ey, ez = extents
    areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.random((n, 3)) - 0.5
    pts = uv * np.array([ex, ey, ez])
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    pts[np.arange(n), axis] = sign * np.array([ex, ey, ez])[axis]
    return pts


def _sample_static(scene: SceneSpec, seed: int, scan: int):
    """Local point samples, labels, object index (-1 = ground) and intensity."""
    parts, labels, owner, inten = [], [], [], []
    if scene.ground_points:
        rng = _rng(seed, _GEOMETRY, scan, 0)
        xy = (rng.random((scene.ground_points, 2)) - 0.5) * scene.ground_extent
        parts.append(np.column_stack([xy, np.full(scene.ground_points, scene.ground_z)]))
        labels.append(np.zeros(scene.ground_points, dtype=np.uint8))
        owner.append(np.full(scene.ground_points, -1))
        inten.append(rng.random(scene.ground_points))
    for k, obj in enumerate(scene.objects):
        rng = _rng(seed, _GEOMETRY, scan, k + 1)
        parts.append(_sample_box_surface(rng, obj.extents, obj.num_points))
        labels.append(np.full(obj.num_points, obj.cls, dtype=np.uint8))
        owner.append(np.full(obj.num_points, k))
        inten.append(rng.random(obj.num_points))
    return (np.concatenate(parts), np.concatenate(labels),
            np.concatenate(owner), np.concatenate(inten))


def sensor_pose(scene: SceneSpec, t: int) -> Pose:
    yaw = scene.sensor_yaw_rate * t
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    origin = np.asarray(scene.sensor_start) + t * np.asarray(scene.sensor_velocity)
    return Pose(rot, origin)


def corrupt(labels: np.ndarray, num_classes: int, noise: NoiseSpec, scan: int) -> np.ndarray:
    """Noisy score rows for ``labels`` at scan index ``scan``."""
    rng = _rng(noise.seed, _NOISE, scan)
    n = len(labels)
    if noise.mode == "flip":
        flip = rng.random(n) < noise.flip_p
        # uniform over the other classes
        shift = rng.integers(1, num_classes, size=n)
        noisy = np.where(flip, (labels.astype(np.int64) + shift) % num_classes, labels)
        scores = np.zeros((n, num_classes))
        scores[np.arange(n), noisy] = 1.0
        return scores
    alpha = np.ones((n, num_classes))
    alpha[np.arange(n), labels] += noise.kappa
    g = rng.standard_gamma(alpha)
    scores = g / g.sum(axis=1, keepdims=True)
    # keep values float32-exact so in-memory and on-disk runs agree
    return scores.astype(np.float32).astype(np.float64)


def generate(scene: SceneSpec, noise: NoiseSpec) -> list[SimFrame]:
    scene.validate()
    noise.validate()
    c = len(scene.class_names)
    velocity = np.array([o.velocity for o in scene.objects] or np.zeros((0, 3)))
    centers = np.array([o.center for o in scene.objects] or np.zeros((0, 3)))

    frames = []
    static = None
    for t in range(scene.num_scans):
        if static is None or scene.resample:
            static = _sample_static(scene, noise.seed, t if scene.resample else 0)
            offset = t * len(static[0]) if scene.resample else 0
            ids = np.arange(len(static[0]), dtype=np.int64) + offset
        local, labels, owner, inten = static
        world = local.copy()
        on_obj = owner >= 0
        world[on_obj] += centers[owner[on_obj]] + t * velocity[owner[on_obj]]
        pose = sensor_pose(scene, t)
        sensor_xyz = pose.inverse().apply(world)
        # coordinates pass through float32 on disk; keep them exact in memory too
        pts = np.column_stack([sensor_xyz, inten]).astype(np.float32).astype(np.float64)
        cloud = PointCloud(pts, scan_id=t)
        scores = ClassScores(corrupt(labels, c, noise, t), scene.class_names)
        frames.append(SimFrame(cloud, labels.copy(), pose, scores, ids.copy()))
    return frames


def oracle_posterior(score_sequence, prior_logodds) -> np.ndarray:
    """Batch log-odds of a point observed T times: sum of logits minus (T-1) priors.

    Straight summation with no clamping, kept independent of the recursive
    filter so it can check it.
    """
    seq = [list(np.atleast_1d(np.asarray(row, dtype=float))) for row in score_sequence]
    if not seq:
        raise ValueError("empty score sequence")
    c = len(seq[0])
    prior = np.broadcast_to(np.asarray(prior_logodds, dtype=float), (c,))
    out = []
    for k in range(c):
        total = 0.0
        for row in seq:
            total += math.log(row[k] / (1.0 - row[k]))
        out.append(total - (len(seq) - 1) * float(prior[k]))
    return np.array(out)


# --------------------------------------------------------------------------
# Config files


class SimConfigError(ValueError):
    def __init__(self, line_no: int | None, message: str):
        where = f"line {line_no}: " if line_no else ""
        super().__init__(where + message)
        self.line_no = line_no


_SCALAR_KEYS = {
    "num_scans": (int, lambda v: v >= 1, "must be at least 1"),
    "seed": (int, lambda v: 0 <= v < 2**64, "must be a 64-bit unsigned integer"),
    "ground_extent": (float, lambda v: v > 0, "must be positive"),
    "ground_z": (float, math.isfinite, "must be finite"),
    "ground_points": (int, lambda v: v >= 0, "must be non-negative"),
    "sensor_yaw_rate": (float, math.isfinite, "must be finite"),
    "flip_p": (float, lambda v: 0.0 <= v < 1.0, "must lie in [0, 1)"),
    "kappa": (float, lambda v: v > 0, "must be positive"),
}
_NOISE_KEYS = ("seed", "flip_p", "kappa")
_VECTOR_KEYS = ("sensor_start", "sensor_velocity")


def _class_index(token: str, names: Sequence[str]) -> int:
    idx = list(names).index(token) if token in names else int(token)
    if not 0 <= idx < len(names):
        raise ValueError(f"class index {idx} out of range")
    return idx


def _parse_object(value: str) -> BoxObject:
    tok = shlex.split(value)
    if len(tok) != 11:
        raise ValueError("object needs: class cx cy cz ex ey ez vx vy vz points")
    nums = [float(v) for v in tok[1:10]]
    obj = BoxObject(_class_index(tok[0], DEFAULT_CLASS_NAMES), tuple(nums[0:3]),
                    tuple(nums[3:6]), tuple(nums[6:9]), int(tok[10]))
    if min(obj.extents) <= 0:
        raise ValueError("object extents must be positive")
    if obj.num_points <= 0:
        raise ValueError("object point count must be positive")
    return obj


def parse_config(text: str) -> tuple[SceneSpec, NoiseSpec]:
    """Parse the ``key = value`` scene/noise description (see README)."""
    scene_kw: dict = {}
    noise_kw: dict = {}
    objects = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SimConfigError(line_no, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "object":
                objects.append(_parse_object(value))
            elif key in _SCALAR_KEYS:
                conv, ok, why = _SCALAR_KEYS[key]
                val = conv(value)
                if not ok(val):
                    raise ValueError(f"{key} {why}")
                (noise_kw if key in _NOISE_KEYS else scene_kw)[key] = val
            elif key in _VECTOR_KEYS:
                vec = tuple(float(v) for v in value.split())
                if len(vec) != 3:
                    raise ValueError(f"{key} needs 3 values")
                scene_kw[key] = vec
            elif key == "noise":
                if value not in ("flip", "dirichlet"):
                    raise ValueError(f"noise must be 'flip' or 'dirichlet', got {value!r}")
                noise_kw["mode"] = value
            elif key == "resample":
                if value not in ("0", "1", "true", "false"):
                    raise ValueError("resample must be 0/1/true/false")
                scene_kw["resample"] = value in ("1", "true")
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise SimConfigError(line_no, str(exc)) from None

    scene = SceneSpec(objects=tuple(objects), **scene_kw)
    noise = NoiseSpec(**noise_kw)
    for spec in (scene, noise):
        try:
            spec.validate()
        except ValueError as exc:
            raise SimConfigError(None, str(exc)) from None
    return scene, noise


def load_config(path: PathLike) -> tuple[SceneSpec, NoiseSpec]:
    return parse_config(Path(path).read_text())


def static_scene(num_scans: int = 10, ground_points: int = 2000, car_points: int = 1500,
                 pedestrian_points: int = 800, bicyclist_points: int = 800) -> SceneSpec:
    """A parked car, a standing pedestrian and a bicyclist in front of a static sensor."""
    return SceneSpec(
        objects=(
            BoxObject(1, (10.0, 2.0, -0.93), (4.2, 1.8, 1.6), num_points=car_points),
            BoxObject(2, (8.0, -3.0, -0.85), (0.6, 0.6, 1.75), num_points=pedestrian_points),
            BoxObject(3, (14.0, -1.0, -0.9), (1.8, 0.6, 1.7), num_points=bicyclist_points),
        ),
        ground_points=ground_points,
        num_scans=num_scans,
    )

