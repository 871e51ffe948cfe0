"""Split conformal prediction and its inversion for risk assessment.

The forward direction turns a miss-coverage level alpha into a prediction
set with coverage >= 1 - alpha (:func:`cp_interval`). The inverse
direction (:func:`invcp_alpha`, :func:`invcp_estimate`) starts from the
model's own top-k output and asks for the smallest-size conformal set
that still contains it; the miss-coverage level of that set estimates the
probability that the top-k output misses the true label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    PredictionRecord,
    PredictionSet,
    ScoreFunction,
    descending_classes,
    set_scores,
    true_label_scores,
)

__all__ = [
    "ConformalCalibration",
    "InvCPResult",
    "calibrate_scores",
    "cp_interval",
    "invcp_alpha",
    "invcp_estimate",
    "empirical_coverage",
]


@dataclass(frozen=True)
class ConformalCalibration:
    """Sorted conformity scores of the hold-out set, the basis of quantiles."""

    sorted_scores: np.ndarray  # ascending; duplicates kept (multiset semantics)
    score_fn: ScoreFunction = ScoreFunction.APS

    def __post_init__(self) -> None:
        s = np.asarray(self.sorted_scores, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("need at least one calibration score")
        if not np.isfinite(s).all():
            raise ValueError("scores must be finite")
        if (np.diff(s) < 0).any():
            raise ValueError("scores must be sorted ascending")
        s.setflags(write=False)
        object.__setattr__(self, "sorted_scores", s)

    @property
    def n(self) -> int:
        return self.sorted_scores.size


@dataclass(frozen=True)
class InvCPResult:
    """Per-point inverse-conformal levels and their mean.

    ``gammas[i]`` is the 1-based rank of the first calibration score at or
    above the i-th test point's set score (n+1 when none is), and
    ``per_point_alphas[i] = 1 - gammas[i] / (n + 1)``.
    """

    per_point_alphas: np.ndarray
    gammas: np.ndarray
    alpha_hat: float
    n_calibration: int

    def __post_init__(self) -> None:
        a = np.asarray(self.per_point_alphas, dtype=float)
        g = np.asarray(self.gammas, dtype=np.int64)
        n = int(self.n_calibration)
        if a.shape != g.shape or a.ndim != 1 or a.size == 0:
            raise ValueError("alphas and gammas must be matching nonempty vectors")
        if g.min() < 1 or g.max() > n + 1:
            raise ValueError("gamma ranks must lie in [1, n+1]")
        a.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "per_point_alphas", a)
        object.__setattr__(self, "gammas", g)


def calibrate_scores(
    calib: Dataset, score_fn: ScoreFunction = ScoreFunction.APS
) -> ConformalCalibration:
    """Conformity scores of the true labels on the hold-out set, sorted."""
    scores = np.sort(true_label_scores(calib, score_fn))
    return ConformalCalibration(sorted_scores=scores, score_fn=score_fn)


def _quantile_rank(n: int, alpha: float) -> int:
    """1-based rank ceil((n+1)(1-alpha)); may exceed n for small alpha.

    Levels of the form 1 - i/(n+1) must map back to rank i exactly, so the
    product is snapped to the nearest integer when it is within rounding
    noise of one.
    """
    target = (n + 1) * (1.0 - alpha)
    nearest = round(target)
    if abs(target - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(target))


def cp_interval(
    calibration: ConformalCalibration, record: PredictionRecord, alpha: float
) -> PredictionSet:
    """Prediction set with coverage >= 1 - alpha for one record.

    Collects the classes whose conformity score is at most the
    ceil((n+1)(1-alpha))-th smallest calibration score; when that rank
    exceeds n the threshold is infinite and every class is returned. The
    set may be empty at large alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rank = _quantile_rank(calibration.n, alpha)
    q_hat = np.inf if rank > calibration.n else float(calibration.sorted_scores[rank - 1])
    return _classes_within(record, q_hat, calibration.score_fn)


def _classes_within(
    record: PredictionRecord, q_hat: float, score_fn: ScoreFunction
) -> PredictionSet:
    """Classes with conformity score <= q_hat, most probable first.

    Scores are nondecreasing along the descending-probability order for
    both score families, so the result is a prefix of that order.
    """
    order = descending_classes(record.probabilities)
    sorted_probs = record.probabilities[order]
    if score_fn is ScoreFunction.APS:
        along = sorted_probs.cumsum()
    elif score_fn is ScoreFunction.LAC:
        along = 1.0 - sorted_probs
    else:
        raise ValueError(f"unknown score function {score_fn!r}")
    count = int(np.searchsorted(along, q_hat, side="right"))
    return PredictionSet(classes=tuple(int(c) for c in order[:count]))


def invcp_alpha(calibration: ConformalCalibration, s_star: float) -> tuple[int, float]:
    """Miss-coverage level of the smallest conformal set covering score ``s_star``.

    Returns (gamma, alpha): gamma is the smallest 1-based index with
    sorted_scores[gamma-1] >= s_star (n+1 when s_star exceeds every
    calibration score, where the all-class set is the smallest valid one),
    and alpha = 1 - gamma / (n + 1).
    """
    if not np.isfinite(s_star):
        raise ValueError("set score must be finite")
    n = calibration.n
    gamma = int(np.searchsorted(calibration.sorted_scores, s_star, side="left")) + 1
    return gamma, 1.0 - gamma / (n + 1)


def invcp_estimate(
    calib: Dataset,
    test: Dataset,
    k: int,
    score_fn: ScoreFunction = ScoreFunction.APS,
) -> InvCPResult:
    """Inverse-conformal risk estimate for the top-k output on a test set.

    For each test record, scores its top-k set, finds the per-point
    miss-coverage level via :func:`invcp_alpha`, and averages.
    """
    if calib.n_classes != test.n_classes:
        raise ValueError("calibration and test sets must share the class count")
    if not 1 <= k <= test.n_classes:
        raise ValueError(f"k must be in [1, {test.n_classes}], got {k}")
    calibration = calibrate_scores(calib, score_fn)
    star = set_scores(test, k, score_fn)
    n = calibration.n
    gammas = np.searchsorted(calibration.sorted_scores, star, side="left") + 1
    alphas = 1.0 - gammas / (n + 1)
    return InvCPResult(
        per_point_alphas=alphas,
        gammas=gammas,
        alpha_hat=float(alphas.mean()),
        n_calibration=n,
    )


def empirical_coverage(
    calibration: ConformalCalibration, test: Dataset, alpha: float
) -> float:
    """Fraction of test records whose true label the CP set covers.

    Membership of the true label in :func:`cp_interval` is equivalent to
    its conformity score being at most the quantile threshold, which this
    computes vectorised; the test suite pins the equivalence.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rank = _quantile_rank(calibration.n, alpha)
    if rank > calibration.n:
        return 1.0
    q_hat = float(calibration.sorted_scores[rank - 1])
    return float((true_label_scores(test, calibration.score_fn) <= q_hat).mean())
