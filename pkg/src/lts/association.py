"""Point correspondences between consecutive scans.

The previous scan is moved into the current scan's frame by a motion provider,
then every current point takes its Euclidean nearest neighbour among the moved
points, provided it lies within ``max_dist``. Matching is many-to-one. Among
equidistant candidates the lower previous index wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .scan_io import PointCloud, Pose

DEFAULT_MAX_DIST = 0.5
UNMATCHED = -1


class MotionProvider(Protocol):
    def relative(self, prev_id: int, curr_id: int) -> Pose:
        """Transform taking points of scan ``prev_id`` into the frame of ``curr_id``."""
        ...


class IdentityMotion:
    def relative(self, prev_id: int, curr_id: int) -> Pose:
        return Pose.identity()


class PoseMotion:
    """Ego-motion from per-scan sensor-to-world poses (KITTI odometry style)."""

    def __init__(self, poses: Sequence[Pose]):
        self.poses = list(poses)

    def relative(self, prev_id: int, curr_id: int) -> Pose:
        try:
            prev, curr = self.poses[prev_id], self.poses[curr_id]
        except IndexError:
            raise IndexError(
                f"no pose for scan pair ({prev_id}, {curr_id}); {len(self.poses)} poses loaded"
            ) from None
        return curr.inverse().compose(prev)


@dataclass
class Correspondence:
    prev_index: np.ndarray  # (N_curr,) int64, UNMATCHED where no partner
    distance: np.ndarray    # (N_curr,) float64, inf where unmatched

    def __len__(self) -> int:
        return len(self.prev_index)

    @property
    def matched(self) -> np.ndarray:
        return self.prev_index != UNMATCHED

    @classmethod
    def unmatched(cls, n: int) -> "Correspondence":
        return cls(np.full(n, UNMATCHED, dtype=np.int64), np.full(n, np.inf))


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def nearest_neighbors(ref: np.ndarray, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest ``ref`` index and distance for every ``query`` point.

    Distances are recomputed in float64 from the coordinates so that ties are
    decided on exact values, lower ``ref`` index first.
    """
    ref = np.asarray(ref, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    nq = len(query)
    if len(ref) == 0 or nq == 0:
        return np.full(nq, UNMATCHED, dtype=np.int64), np.full(nq, np.inf)

    tree = cKDTree(ref)
    k = min(2, len(ref))
    d, j = tree.query(query, k=k)
    d = d.reshape(nq, k)
    j = j.reshape(nq, k)
    best = j[:, 0].astype(np.int64)
    best_sq = _sq_dist(ref[best], query)

    if k == 2:
        # kd-tree distances and ours may differ in the last bits; anything
        # close to a tie is re-resolved against all candidates in a ball
        second_sq = _sq_dist(ref[j[:, 1]], query)
        gap = np.abs(second_sq - best_sq)
        suspect = np.flatnonzero(gap <= 1e-9 * np.maximum(best_sq, 1e-300) + 1e-24)
        suspect = np.union1d(suspect, np.flatnonzero(second_sq < best_sq))
        for i in suspect:
            radius = np.sqrt(max(best_sq[i], second_sq[i])) * (1 + 1e-9) + 1e-12
            cand = np.asarray(tree.query_ball_point(query[i], radius), dtype=np.int64)
            cand_sq = _sq_dist(ref[cand], query[i])
            m = cand_sq.min()
            best[i] = cand[cand_sq == m].min()
            best_sq[i] = m
    return best, np.sqrt(best_sq)


def associate(prev: PointCloud, curr: PointCloud, motion: MotionProvider | None = None,
              max_dist: float = DEFAULT_MAX_DIST) -> Correspondence:
    if not max_dist > 0:
        raise ValueError(f"max_dist must be positive, got {max_dist}")
    if len(prev) == 0:
        return Correspondence.unmatched(len(curr))
    motion = motion or IdentityMotion()
    moved = motion.relative(prev.scan_id, curr.scan_id).apply(prev.xyz)
    idx, dist = nearest_neighbors(moved, curr.xyz)
    far = dist > max_dist
    idx[far] = UNMATCHED
    dist[far] = np.inf
    return Correspondence(idx, dist)
