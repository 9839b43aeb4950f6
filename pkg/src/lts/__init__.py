"""Temporally consistent semantic labels for LiDAR scans.

Per-point classifier scores are fused over time with independent static-state
binary Bayes filters (one per class) kept in log-odds form. Around the filter
sit the pieces needed to run it on real or synthetic data: KITTI-style readers,
spherical range-image projection, scan-to-scan association, IoU evaluation, a
synthetic scene generator and a shape/parameter calculator for DBLiDARNet.
"""

__version__ = "0.1.0"

DEFAULT_CLASS_NAMES = ("background", "car", "pedestrian", "bicyclist")
