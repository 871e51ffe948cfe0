"""Confidence calibrators: histogram binning, isotonic regression, temperature.

Each ``fit_*`` function returns an immutable fitted model; the matching
``apply_*`` function evaluates it. Models map a model confidence score for
a top-k output to a calibrated probability that the output is correct.

Multi-class outputs are reduced to one binary problem per record: the
confidence of the top-k set (its summed probability) against the indicator
that the true label lies inside the set. :func:`correctness_pairs` builds
those (score, target) pairs from a dataset.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    Dataset,
    PredictionRecord,
    descending_classes,
    label_in_top_k,
    softmax,
    top_k_mass,
)

__all__ = [
    "CalibrationPair",
    "HistogramBinningModel",
    "IsotonicModel",
    "TemperatureModel",
    "correctness_pairs",
    "fit_histogram_binning",
    "apply_histogram_binning",
    "fit_isotonic",
    "apply_isotonic",
    "fit_temperature",
    "apply_temperature",
    "temperature_confidence",
    "pseudo_logits",
    "BINNING_STRATEGIES",
    "LOG_T_BOUND",
]

BINNING_STRATEGIES = ("equal-width", "equal-frequency")

# Temperature search runs over log T in [-LOG_T_BOUND, LOG_T_BOUND],
# i.e. T in [e^-3, e^3] ~ [0.05, 20], to absolute tolerance LOG_T_TOL.
LOG_T_BOUND = 3.0
LOG_T_TOL = 1e-4

# softmax(log(p + eps)) reproduces p up to eps, so probability-only models
# (trees) behave identically to logit models at T = 1.
PSEUDO_LOGIT_EPS = 1e-12


class CalibrationPair(NamedTuple):
    """One calibration observation: a confidence score and a 0/1 target."""

    score: float
    target: float


def correctness_pairs(dataset: Dataset, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(confidence, correctness) arrays for the top-k output of each record.

    Confidence is the summed top-k probability; the target is 1 when the
    true label lies inside the top-k set.
    """
    scores = top_k_mass(dataset, k)
    targets = label_in_top_k(dataset, k).astype(float)
    return scores, targets


def _validated_scores_targets(scores, targets) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("need at least one calibration pair")
    if s.shape != t.shape:
        raise ValueError("scores and targets must have the same length")
    if not np.isfinite(s).all() or not np.isfinite(t).all():
        raise ValueError("scores and targets must be finite")
    if (s < 0).any() or (s > 1).any():
        raise ValueError("scores must lie in [0, 1]")
    if (t < 0).any() or (t > 1).any():
        raise ValueError("targets must lie in [0, 1]")
    return s, t


# ---------------------------------------------------------------------------
# Histogram binning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HistogramBinningModel:
    """Piecewise-constant calibrator on fixed bins over [0, 1].

    Bins are half-open [a_j, a_{j+1}) with the last bin closed at 1. Each
    bin's value is the mean correctness of the calibration points inside
    it, which minimises the binned squared error exactly. Bins that
    received no points fall back to their midpoint and are recorded in
    ``empty_bins``.
    """

    boundaries: np.ndarray  # length M + 1, strictly increasing, 0 .. 1
    thetas: np.ndarray  # length M, values in [0, 1]
    strategy: str = "equal-frequency"
    empty_bins: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        b = np.asarray(self.boundaries, dtype=float)
        t = np.asarray(self.thetas, dtype=float)
        if b.ndim != 1 or t.ndim != 1 or b.size != t.size + 1:
            raise ValueError("need M+1 boundaries for M bin values")
        if b[0] != 0.0 or b[-1] != 1.0 or (np.diff(b) <= 0).any():
            raise ValueError("boundaries must increase strictly from 0 to 1")
        if (t < 0).any() or (t > 1).any():
            raise ValueError("bin values must lie in [0, 1]")
        b.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "thetas", t)

    @property
    def n_bins(self) -> int:
        return self.thetas.size


def _bin_indices(boundaries: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # Half-open bins: a score equal to an interior boundary belongs to the
    # right bin; 1.0 stays in the last bin.
    return np.searchsorted(boundaries[1:-1], scores, side="right")


def fit_histogram_binning(
    scores,
    targets,
    n_bins: int = 10,
    strategy: str = "equal-frequency",
) -> HistogramBinningModel:
    """Fit a histogram-binning calibrator.

    Parameters
    ----------
    scores, targets : array-like, shape (n,)
        Confidence scores in [0, 1] and their correctness targets.
    n_bins : int
        Number of bins M.
    strategy : str
        "equal-width" spaces boundaries uniformly; "equal-frequency"
        places them at score quantiles so bins hold equally many points.
    """
    s, t = _validated_scores_targets(scores, targets)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if strategy not in BINNING_STRATEGIES:
        raise ValueError(f"strategy must be one of {BINNING_STRATEGIES}")

    if strategy == "equal-width":
        boundaries = np.linspace(0.0, 1.0, n_bins + 1)
    else:
        if n_bins > s.size:
            raise ValueError(
                f"equal-frequency binning needs n_bins <= {s.size} points, got {n_bins}"
            )
        interior = np.quantile(s, np.arange(1, n_bins) / n_bins)
        boundaries = np.concatenate(([0.0], interior, [1.0]))
        # Tied quantiles would collapse bins; nudge by one ulp in each
        # direction so boundaries stay strictly increasing within [0, 1].
        for j in range(1, n_bins):
            if boundaries[j] <= boundaries[j - 1]:
                boundaries[j] = np.nextafter(boundaries[j - 1], np.inf)
        for j in range(n_bins - 1, 0, -1):
            if boundaries[j] >= boundaries[j + 1]:
                boundaries[j] = np.nextafter(boundaries[j + 1], -np.inf)
        if (np.diff(boundaries) <= 0).any():
            raise ValueError("scores are too degenerate for equal-frequency bins")

    idx = _bin_indices(boundaries, s)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=t, minlength=n_bins)
    midpoints = 0.5 * (boundaries[:-1] + boundaries[1:])
    empty = counts == 0
    thetas = np.where(empty, midpoints, sums / np.maximum(counts, 1))
    return HistogramBinningModel(
        boundaries=boundaries,
        thetas=thetas,
        strategy=strategy,
        empty_bins=tuple(int(j) for j in np.nonzero(empty)[0]),
    )


def apply_histogram_binning(model: HistogramBinningModel, score):
    """Calibrated probability of the bin containing ``score``.

    Accepts a scalar or an array; the return matches the input shape.
    """
    s = np.asarray(score, dtype=float)
    if (s < 0).any() or (s > 1).any() or not np.isfinite(s).all():
        raise ValueError("score must lie in [0, 1]")
    out = model.thetas[_bin_indices(model.boundaries, s)]
    return float(out) if np.isscalar(score) or s.ndim == 0 else out


# ---------------------------------------------------------------------------
# Isotonic regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IsotonicModel:
    """Nondecreasing step-function calibrator.

    ``values[i]`` applies to scores in [breakpoints[i], breakpoints[i+1]);
    scores below the first breakpoint map to the first value.
    """

    breakpoints: np.ndarray  # strictly increasing score positions
    values: np.ndarray  # nondecreasing, in [0, 1]

    def __post_init__(self) -> None:
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if b.ndim != 1 or v.shape != b.shape or b.size == 0:
            raise ValueError("breakpoints and values must be matching 1-D arrays")
        if (np.diff(b) <= 0).any():
            raise ValueError("breakpoints must be strictly increasing")
        if (np.diff(v) < 0).any():
            raise ValueError("values must be nondecreasing")
        if (v < 0).any() or (v > 1).any():
            raise ValueError("values must lie in [0, 1]")
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)


def _pool_adjacent_violators(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted monotone least-squares fit (nondecreasing), exact.

    Classic stack formulation: push each point as a block, then merge the
    top two blocks (weighted mean) while they violate monotonicity.
    """
    means: list[float] = []
    wts: list[float] = []
    sizes: list[int] = []
    for x, w in zip(values, weights):
        means.append(float(x))
        wts.append(float(w))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), wts.pop(), sizes.pop()
            m1, w1, s1 = means.pop(), wts.pop(), sizes.pop()
            means.append((m1 * w1 + m2 * w2) / (w1 + w2))
            wts.append(w1 + w2)
            sizes.append(s1 + s2)
    return np.repeat(means, sizes)


def fit_isotonic(scores, targets) -> IsotonicModel:
    """Fit a nondecreasing step function by pool-adjacent-violators.

    Points are sorted by score; exactly tied scores are pooled (target
    mean) before the monotone fit, so the result is a function of score.
    """
    s, t = _validated_scores_targets(scores, targets)
    order = np.argsort(s, kind="stable")
    s, t = s[order], t[order]
    breakpoints, start = np.unique(s, return_index=True)
    counts = np.diff(np.append(start, s.size))
    pooled = np.add.reduceat(t, start) / counts
    fitted = _pool_adjacent_violators(pooled, counts.astype(float))
    # Weighted means of [0, 1] targets can drift past the endpoints by an ulp.
    fitted = np.clip(fitted, 0.0, 1.0)
    return IsotonicModel(breakpoints=breakpoints, values=fitted)


def apply_isotonic(model: IsotonicModel, score):
    """Step-function lookup: value of the largest breakpoint <= score."""
    s = np.asarray(score, dtype=float)
    if (s < 0).any() or (s > 1).any() or not np.isfinite(s).all():
        raise ValueError("score must lie in [0, 1]")
    idx = np.searchsorted(model.breakpoints, s, side="right") - 1
    out = model.values[np.maximum(idx, 0)]
    return float(out) if np.isscalar(score) or s.ndim == 0 else out


# ---------------------------------------------------------------------------
# Temperature scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TemperatureModel:
    """Single-parameter logit rescaling z -> z / T.

    Rescaling never changes the ranking of the classes, so the model's
    output set is identical before and after calibration.
    """

    T: float
    degenerate: bool = False  # NLL was constant in T; T defaulted to 1

    def __post_init__(self) -> None:
        lo, hi = np.exp(-LOG_T_BOUND), np.exp(LOG_T_BOUND)
        if not (lo <= self.T <= hi):
            raise ValueError(f"T must lie in [{lo:.4g}, {hi:.4g}]")


def pseudo_logits(probabilities: np.ndarray) -> np.ndarray:
    """Logits for probability-only models: log(p + eps)."""
    return np.log(np.asarray(probabilities, dtype=float) + PSEUDO_LOGIT_EPS)


def _logit_matrix(dataset: Dataset) -> np.ndarray:
    if dataset.logits is not None:
        return dataset.logits
    return pseudo_logits(dataset.probabilities)


def _nll(logits: np.ndarray, labels: np.ndarray, log_t: float) -> float:
    """Mean negative log-likelihood of softmax(z / T) at T = exp(log_t)."""
    z = logits / np.exp(log_t)
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    return float(np.mean(lse - z[np.arange(z.shape[0]), labels]))


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimise a unimodal function on [lo, hi] to absolute tolerance tol."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def fit_temperature(calib: Dataset) -> TemperatureModel:
    """Fit T by minimising the multi-class NLL over the calibration set.

    Uses logits when the dataset has them, pseudo-logits otherwise, and a
    golden-section search over log T in [-3, 3].
    """
    logits = _logit_matrix(calib)
    if np.ptp(logits, axis=1).max() == 0.0:
        warnings.warn(
            "all records have constant logits; NLL does not depend on T",
            stacklevel=2,
        )
        return TemperatureModel(T=1.0, degenerate=True)
    labels = calib.labels
    log_t = _golden_section(
        lambda u: _nll(logits, labels, u), -LOG_T_BOUND, LOG_T_BOUND, LOG_T_TOL
    )
    if _nll(logits, labels, log_t) > _nll(logits, labels, 0.0):
        # Search can only land here on a non-unimodal NLL; T=1 (the raw
        # model) is then the safer fit.
        return TemperatureModel(T=1.0)
    return TemperatureModel(T=float(np.exp(log_t)))


def apply_temperature(model: TemperatureModel, record: PredictionRecord, k: int) -> float:
    """Calibrated top-k confidence: summed softmax(z / T) of the top-k classes."""
    if not 1 <= k <= record.n_classes:
        raise ValueError(f"k must be in [1, {record.n_classes}], got {k}")
    z = record.logits if record.logits is not None else pseudo_logits(record.probabilities)
    calibrated = softmax(z / model.T)
    top = descending_classes(record.probabilities)[:k]
    return float(calibrated[top].sum())


def temperature_confidence(model: TemperatureModel, dataset: Dataset, k: int) -> np.ndarray:
    """Vectorised :func:`apply_temperature` over a dataset."""
    if not 1 <= k <= dataset.n_classes:
        raise ValueError(f"k must be in [1, {dataset.n_classes}], got {k}")
    calibrated = softmax(_logit_matrix(dataset) / model.T)
    order = descending_classes(dataset.probabilities)
    gathered = np.take_along_axis(calibrated, order[:, :k], axis=1)
    return gathered.sum(axis=1)
