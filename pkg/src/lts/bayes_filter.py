"""Per-point, per-class static-state binary Bayes filters in log-odds form.

Each class c of each point carries its own binary filter. With the classifier
score as the measurement, one step is

    l_t = logit(score_c) + l_{t-1} - l_0

where ``l_{t-1}`` is the belief of the matched point in the previous scan. An
unmatched point starts from ``l_{t-1} = l_0`` so its belief is just the logit
of the current score. Labels are the class with the largest log-odds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .association import Correspondence, UNMATCHED
from .scan_io import ClassScores, check_distribution

DEFAULT_SCORE_EPS = 1e-7
DEFAULT_LOGODDS_CLAMP = 50.0


def logit(p, eps: float = DEFAULT_SCORE_EPS):
    """``ln(p / (1 - p))`` after clamping ``p`` to ``[eps, 1 - eps]``.

    Works on scalars and arrays; raises on NaN.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError("logit of NaN")
    q = np.clip(arr, eps, 1.0 - eps)
    out = np.log(q) - np.log1p(-q)
    return float(out) if out.ndim == 0 else out


def prob_to_logodds(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"prior probability must lie in (0, 1), got {p}")
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class FilterConfig:
    num_classes: int = 4
    prior_logodds: tuple[float, ...] | float = 0.0
    score_eps: float = DEFAULT_SCORE_EPS
    logodds_clamp: float = DEFAULT_LOGODDS_CLAMP  # math.inf disables clamping

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if not 0.0 < self.score_eps <= 0.01:
            raise ValueError(f"score_eps must lie in (0, 0.01], got {self.score_eps}")
        if not self.logodds_clamp > 0:
            raise ValueError(f"logodds_clamp must be positive, got {self.logodds_clamp}")
        prior = np.broadcast_to(np.asarray(self.prior_logodds, dtype=np.float64),
                                (self.num_classes,))
        if not np.all(np.isfinite(prior)):
            raise ValueError("prior log-odds must be finite")
        object.__setattr__(self, "prior_logodds", tuple(float(v) for v in prior))

    @property
    def prior(self) -> np.ndarray:
        return np.array(self.prior_logodds)


@dataclass
class FilterState:
    """Beliefs for the points of the most recent scan."""

    logodds: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    last_seen: int = -1

    def __len__(self) -> int:
        return self.logodds.shape[0]

    @classmethod
    def empty(cls, num_classes: int) -> "FilterState":
        return cls(np.zeros((0, num_classes)), -1)


def update(state: FilterState, scores: ClassScores | np.ndarray, corr: Correspondence | None,
           cfg: FilterConfig, scan_id: int | None = None) -> FilterState:
    """Fold one scan of scores into the beliefs and return the new state.

    ``corr`` maps every current point to a point of ``state`` (or to nothing).
    ``None`` means no point has a predecessor.
    """
    xi = scores.scores if isinstance(scores, ClassScores) else np.asarray(scores, dtype=np.float64)
    if xi.ndim != 2 or xi.shape[1] != cfg.num_classes:
        raise ValueError(f"scores shape {xi.shape} does not fit {cfg.num_classes} classes")
    check_distribution(xi)
    n = xi.shape[0]
    if corr is None:
        corr = Correspondence.unmatched(n)
    if len(corr) != n:
        raise ValueError(f"correspondence covers {len(corr)} points, scores cover {n}")

    prior = cfg.prior
    measurement = logit(xi, cfg.score_eps).reshape(n, cfg.num_classes)
    prev_belief = np.broadcast_to(prior, (n, cfg.num_classes)).copy()

    j = corr.prev_index
    hit = j != UNMATCHED
    if hit.any():
        if len(state) == 0 or j[hit].min() < 0 or j[hit].max() >= len(state):
            raise IndexError(
                f"correspondence refers to previous point {int(j[hit].max())} "
                f"but the state tracks {len(state)} points")
        prev_belief[hit] = state.logodds[j[hit]]

    l_t = measurement + prev_belief - prior
    np.clip(l_t, -cfg.logodds_clamp, cfg.logodds_clamp, out=l_t)
    seen = state.last_seen + 1 if scan_id is None else scan_id
    return FilterState(l_t, seen)


def infer(state: FilterState) -> np.ndarray:
    """Class with the largest log-odds per point; ties go to the lower index."""
    if len(state) == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.argmax(state.logodds, axis=1).astype(np.uint8)


def probabilities(state: FilterState) -> np.ndarray:
    """Per-class belief ``P(O_c)`` recovered from the log-odds (not normalised across classes)."""
    return 1.0 / (1.0 + np.exp(-state.logodds))
