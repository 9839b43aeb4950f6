"""Scan-by-scan temporal fusion: associate, update, infer."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .association import MotionProvider, associate
from .bayes_filter import FilterConfig, FilterState, infer, update
from .scan_io import ClassScores, PointCloud


def filter_sequence(frames: Iterable[tuple[PointCloud, ClassScores]], cfg: FilterConfig,
                    motion: MotionProvider | None = None,
                    max_dist: float = 0.5) -> Iterator[np.ndarray]:
    """Yield fused labels for each scan in order.

    ``max_dist <= 0`` turns association off, so every scan is labelled from its
    own scores alone.
    """
    state = FilterState.empty(cfg.num_classes)
    prev = None
    for cloud, scores in frames:
        if len(scores) != len(cloud):
            raise ValueError(
                f"scan {cloud.scan_id}: {len(cloud)} points but {len(scores)} score rows")
        corr = None
        if prev is not None and max_dist > 0:
            corr = associate(prev, cloud, motion, max_dist)
        state = update(state, scores, corr, cfg, scan_id=cloud.scan_id)
        prev = cloud
        yield infer(state)
