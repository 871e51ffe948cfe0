"""Risk estimates, evaluation metrics, and the repeated-split experiment.

A *risk estimate* alpha_hat approximates the probability that the true
label falls outside the model's top-k output. Its quality is measured
against the counting estimate alpha_emp on a disjoint test split through
delta = alpha_hat - alpha_emp; a method is conservative when delta >= 0.

:func:`run_experiment` repeats the fit/evaluate cycle over many random
splits of a pool and aggregates delta per method; :func:`sweep` varies one
configuration axis while keeping the seed stream fixed for paired
comparisons.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .calibration import (
    HistogramBinningModel,
    IsotonicModel,
    TemperatureModel,
    apply_histogram_binning,
    apply_isotonic,
    correctness_pairs,
    fit_histogram_binning,
    fit_isotonic,
    fit_temperature,
    temperature_confidence,
)
from .conformal import invcp_estimate
from .core import Dataset, ScoreFunction, label_in_top_k, top_k_mass

__all__ = [
    "Method",
    "DEFAULT_METHODS",
    "AssessmentReport",
    "MethodStats",
    "ExperimentConfig",
    "ExperimentSummary",
    "alpha_emp",
    "alpha_hat_smx",
    "alpha_hat_calibrated",
    "ece",
    "assess",
    "run_experiment",
    "sweep",
    "report_rows",
    "reports_to_csv",
    "summary_to_dict",
]


class Method(Enum):
    """The five risk-assessment methods benchmarked by this package."""

    SMX = "smx"
    PLATT = "platt"
    HIST_BIN = "hist-bin"
    ISO_REG = "iso-reg"
    INVCP = "invcp"

    @classmethod
    def parse(cls, name: str) -> "Method":
        key = name.strip().lower().replace("_", "-")
        for m in cls:
            if m.value == key:
                return m
        raise ValueError(f"unknown method {name!r}; choose from "
                         f"{', '.join(m.value for m in cls)}")


DEFAULT_METHODS: tuple[Method, ...] = tuple(Method)


@dataclass(frozen=True)
class AssessmentReport:
    """One method's risk estimate on one calibration/test split."""

    method: Method
    alpha_hat: float
    alpha_emp: float
    delta: float  # alpha_hat - alpha_emp, exactly
    conservative: bool  # delta >= 0
    k: int
    n_calib: int
    n_test: int
    split_seed: int

    @classmethod
    def build(
        cls,
        method: Method,
        alpha_hat: float,
        alpha_emp_value: float,
        k: int,
        n_calib: int,
        n_test: int,
        split_seed: int,
    ) -> "AssessmentReport":
        delta = alpha_hat - alpha_emp_value
        return cls(
            method=method,
            alpha_hat=alpha_hat,
            alpha_emp=alpha_emp_value,
            delta=delta,
            conservative=delta >= 0,
            k=k,
            n_calib=n_calib,
            n_test=n_test,
            split_seed=split_seed,
        )


def alpha_emp(test: Dataset, k: int) -> float:
    """Counting estimate: fraction of labels outside the top-k set."""
    hits = label_in_top_k(test, k)
    return float((~hits).sum() / hits.size)


def alpha_hat_smx(test: Dataset, k: int) -> float:
    """Raw-softmax estimate: mean of (1 - top-k probability mass)."""
    return float(np.mean(1.0 - top_k_mass(test, k)))


def alpha_hat_calibrated(model, test: Dataset, k: int) -> float:
    """Mean of (1 - r(X)) with r(X) the calibrated correctness probability.

    Accepts any of the three fitted calibrators: binning and isotonic
    models are applied to the top-k confidence, a temperature model
    rescales the logits and sums the top-k calibrated mass.
    """
    if isinstance(model, HistogramBinningModel):
        r = apply_histogram_binning(model, top_k_mass(test, k))
    elif isinstance(model, IsotonicModel):
        r = apply_isotonic(model, top_k_mass(test, k))
    elif isinstance(model, TemperatureModel):
        r = temperature_confidence(model, test, k)
    else:
        raise TypeError(f"not a fitted calibrator: {type(model).__name__}")
    return float(np.mean(1.0 - r))


def ece(scores, targets, n_bins: int = 10) -> float:
    """Expected calibration error: bin-weighted |accuracy - confidence| gap.

    Uses equal-width bins over [0, 1], half-open with the last bin closed;
    empty bins contribute zero.
    """
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("need at least one pair")
    if s.shape != t.shape:
        raise ValueError("scores and targets must have the same length")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    # Same half-open bin convention as histogram binning.
    boundaries = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.searchsorted(boundaries[1:-1], s, side="right")
    counts = np.bincount(idx, minlength=n_bins)
    conf_sums = np.bincount(idx, weights=s, minlength=n_bins)
    acc_sums = np.bincount(idx, weights=t, minlength=n_bins)
    occupied = counts > 0
    gaps = np.abs(acc_sums[occupied] - conf_sums[occupied]) / counts[occupied]
    return float((counts[occupied] / s.size * gaps).sum())


def assess(
    calib: Dataset,
    test: Dataset,
    k: int,
    methods: Sequence[Method] = DEFAULT_METHODS,
    n_bins: int = 10,
    strategy: str = "equal-frequency",
    score_fn: ScoreFunction = ScoreFunction.APS,
    split_seed: int = 0,
) -> list[AssessmentReport]:
    """Fit each requested method on ``calib`` and report its risk on ``test``."""
    if calib.n_classes != test.n_classes:
        raise ValueError("calibration and test sets must share the class count")
    if not methods:
        raise ValueError("need at least one method")
    a_emp = alpha_emp(test, k)

    # Confidences shared by SMX / HIST-BIN / ISO-REG, computed at most once.
    cal_pairs = test_conf = None
    reports = []
    for method in methods:
        if method is Method.SMX:
            a_hat = alpha_hat_smx(test, k)
        elif method is Method.PLATT:
            a_hat = alpha_hat_calibrated(fit_temperature(calib), test, k)
        elif method in (Method.HIST_BIN, Method.ISO_REG):
            if cal_pairs is None:
                cal_pairs = correctness_pairs(calib, k)
            if test_conf is None:
                test_conf = top_k_mass(test, k)
            if method is Method.HIST_BIN:
                model = fit_histogram_binning(*cal_pairs, n_bins=n_bins, strategy=strategy)
                r = apply_histogram_binning(model, test_conf)
            else:
                model = fit_isotonic(*cal_pairs)
                r = apply_isotonic(model, test_conf)
            a_hat = float(np.mean(1.0 - r))
        elif method is Method.INVCP:
            a_hat = invcp_estimate(calib, test, k, score_fn).alpha_hat
        else:
            raise ValueError(f"unknown method {method!r}")
        reports.append(
            AssessmentReport.build(
                method, a_hat, a_emp, k, len(calib), len(test), split_seed
            )
        )
    return reports


@dataclass(frozen=True)
class ExperimentConfig:
    """Configuration of a repeated-split experiment."""

    k: int = 1
    methods: tuple[Method, ...] = DEFAULT_METHODS
    repeats: int = 100
    calib_fraction: float = 0.2
    calib_size: int | None = None  # absolute size; overrides calib_fraction
    n_bins: int = 10
    strategy: str = "equal-frequency"
    score_fn: ScoreFunction = ScoreFunction.APS
    seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class MethodStats:
    """Mean and standard deviation of delta over the repeats."""

    mean_delta: float
    std_delta: float


@dataclass(frozen=True)
class ExperimentSummary:
    """Aggregated deltas per method plus every per-split report."""

    method_stats: dict[Method, MethodStats]
    repeats: int
    n_calib: int
    n_test: int
    config: ExperimentConfig
    reports: tuple[AssessmentReport, ...]


def _split_sizes(pool: Dataset, config: ExperimentConfig) -> int:
    if config.calib_size is not None:
        n_calib = int(config.calib_size)
    else:
        if not 0.0 < config.calib_fraction < 1.0:
            raise ValueError("calib_fraction must lie in (0, 1)")
        n_calib = round(config.calib_fraction * len(pool))
    if not 1 <= n_calib <= len(pool) - 1:
        raise ValueError(
            f"calibration size {n_calib} leaves no room for both splits "
            f"in a pool of {len(pool)}"
        )
    return n_calib


def run_experiment(pool: Dataset, config: ExperimentConfig) -> ExperimentSummary:
    """Repeat seeded random splits of ``pool``, assess every method, aggregate.

    Splits are uniform without replacement; calibration and test are
    disjoint and together exhaust the pool. Per-repeat randomness is
    derived from the master seed by a counter scheme, so results are
    reproducible bit for bit, with any number of workers.
    """
    if config.repeats < 1:
        raise ValueError("repeats must be >= 1")
    if config.seed < 0:
        raise ValueError("seed must be nonnegative")
    n_calib = _split_sizes(pool, config)

    def one_repeat(i: int) -> list[AssessmentReport]:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(i,)))
        perm = rng.permutation(len(pool))
        return assess(
            calib=pool.subset(perm[:n_calib]),
            test=pool.subset(perm[n_calib:]),
            k=config.k,
            methods=config.methods,
            n_bins=config.n_bins,
            strategy=config.strategy,
            score_fn=config.score_fn,
            split_seed=i,
        )

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool_exec:
            per_repeat = list(pool_exec.map(one_repeat, range(config.repeats)))
    else:
        per_repeat = [one_repeat(i) for i in range(config.repeats)]

    reports = tuple(r for split in per_repeat for r in split)
    stats = {}
    for method in config.methods:
        deltas = np.array([r.delta for r in reports if r.method is method])
        stats[method] = MethodStats(
            mean_delta=float(deltas.mean()), std_delta=float(deltas.std())
        )
    return ExperimentSummary(
        method_stats=stats,
        repeats=config.repeats,
        n_calib=n_calib,
        n_test=len(pool) - n_calib,
        config=config,
        reports=reports,
    )


def sweep(
    pool: Dataset,
    config: ExperimentConfig,
    axis: str,
    values: Sequence,
) -> list[ExperimentSummary]:
    """One experiment per axis value, with an identical seed stream per value.

    ``axis`` is "n" (calibration-set size) or "M" (bin count).
    """
    if len(values) == 0:
        raise ValueError("need at least one axis value")
    summaries = []
    for value in values:
        if axis == "n":
            cfg = dataclasses.replace(config, calib_size=int(value))
        elif axis == "M":
            cfg = dataclasses.replace(config, n_bins=int(value))
        else:
            raise ValueError(f"axis must be 'n' or 'M', got {axis!r}")
        summaries.append(run_experiment(pool, cfg))
    return summaries


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "method",
    "k",
    "repeat",
    "seed",
    "alpha_hat",
    "alpha_emp",
    "delta",
    "conservative",
)


def report_rows(summary: ExperimentSummary) -> list[dict]:
    """One flat row per method per repeat, in repeat-then-method order."""
    return [
        {
            "method": r.method.value,
            "k": r.k,
            "repeat": r.split_seed,
            "seed": summary.config.seed,
            "alpha_hat": r.alpha_hat,
            "alpha_emp": r.alpha_emp,
            "delta": r.delta,
            "conservative": r.conservative,
        }
        for r in summary.reports
    ]


def reports_to_csv(summary: ExperimentSummary) -> str:
    """Per-split reports as CSV text (repr-formatted floats, so exact)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report_rows(summary):
        writer.writerow(
            [
                row["method"],
                row["k"],
                row["repeat"],
                row["seed"],
                repr(row["alpha_hat"]),
                repr(row["alpha_emp"]),
                repr(row["delta"]),
                str(row["conservative"]).lower(),
            ]
        )
    return buf.getvalue()


def summary_to_dict(summary: ExperimentSummary) -> dict:
    """JSON-ready view of a summary: per-method stats plus a config echo."""
    return {
        "repeats": summary.repeats,
        "n_calib": summary.n_calib,
        "n_test": summary.n_test,
        "config": {
            "k": summary.config.k,
            "methods": [m.value for m in summary.config.methods],
            "repeats": summary.config.repeats,
            "calib_fraction": summary.config.calib_fraction,
            "calib_size": summary.config.calib_size,
            "n_bins": summary.config.n_bins,
            "strategy": summary.config.strategy,
            "score_fn": summary.config.score_fn.value,
            "seed": summary.config.seed,
        },
        "methods": {
            m.value: {
                "mean_delta": stats.mean_delta,
                "std_delta": stats.std_delta,
            }
            for m, stats in summary.method_stats.items()
        },
    }
