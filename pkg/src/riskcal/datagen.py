"""Synthetic data with an analytic risk oracle, plus file ingestion.

The generator draws each record's true conditional distribution from a
symmetric Dirichlet, samples the label from it, and reports a
temperature-distorted version of it as the model output. The distortion
preserves the class ranking, so the probability that the label misses the
reported top-k set can be computed exactly from the true conditionals;
that oracle is what the estimation methods are validated against.

File format (one record per line, optional first header line starting
with ``#``)::

    label,v_0,...,v_{K-1}

where the ``v_i`` are probabilities or logits depending on the schema.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .core import Dataset, descending_classes, softmax

__all__ = [
    "SyntheticConfig",
    "IngestSchema",
    "ParseError",
    "ValidationError",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "save_synthetic",
]

# Rows whose probabilities sum within this of 1 are renormalised; beyond
# it they are rejected as corrupt.
ROW_SUM_TOL = 1e-4


class ParseError(ValueError):
    """A line of the input file could not be parsed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ValidationError(ValueError):
    """A parsed row violates the data contract (sums, label range, ...)."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic generator.

    ``concentration`` is the symmetric Dirichlet parameter for the true
    conditionals (small = confident classes, large = near-uniform).
    ``distortion_T`` rescales log-probabilities before renormalising:
    values below 1 sharpen the reported distribution (over-confidence),
    1 reports the truth unchanged.
    """

    K: int
    pool_size: int
    concentration: float = 1.0
    distortion_T: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError("need at least 2 classes")
        if self.pool_size < 10:
            raise ValueError("pool_size must be >= 10")
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")
        if not self.distortion_T > 0:
            raise ValueError("distortion_T must be positive")


@dataclass(frozen=True)
class IngestSchema:
    """Shape of an input file: value kind, class count, delimiter."""

    format: str  # "probabilities" or "logits"
    K: int
    delimiter: str = ","

    def __post_init__(self) -> None:
        if self.format not in ("probabilities", "logits"):
            raise ValueError("format must be 'probabilities' or 'logits'")
        if self.K < 2:
            raise ValueError("need at least 2 classes")


def _distort(p_true: np.ndarray, temperature: float) -> np.ndarray:
    """softmax(log p / T), computed in log space; T = 1 returns p as-is."""
    if temperature == 1.0:
        return p_true
    with np.errstate(divide="ignore"):
        log_p = np.log(p_true)  # -inf for exact zeros, exp maps them back to 0
    shifted = (log_p - log_p.max(axis=1, keepdims=True)) / temperature
    q = np.exp(shifted)
    return q / q.sum(axis=1, keepdims=True)


def generate_synthetic(
    config: SyntheticConfig,
) -> tuple[Dataset, Callable[[int], float]]:
    """Build a synthetic pool and its exact top-k risk oracle.

    Returns the dataset of reported probabilities/labels and a function
    ``oracle_risk(k)`` giving the probability, under the true
    conditionals, that the label misses the reported top-k set.
    """
    rng = np.random.default_rng(config.seed)
    p_true = rng.dirichlet(
        np.full(config.K, config.concentration), size=config.pool_size
    )
    cumulative = p_true.cumsum(axis=1)
    draws = rng.random(config.pool_size)
    labels = np.minimum((cumulative < draws[:, None]).sum(axis=1), config.K - 1)
    reported = _distort(p_true, config.distortion_T)
    dataset = Dataset(probabilities=reported, labels=labels)

    # Top-k membership is decided by the *reported* ranking; the covered
    # true mass is then exact, not a label-sampling estimate.
    order = descending_classes(dataset.probabilities)
    true_mass = np.take_along_axis(p_true, order, axis=1).cumsum(axis=1)

    def oracle_risk(k: int) -> float:
        if not 1 <= k <= config.K:
            raise ValueError(f"k must be in [1, {config.K}], got {k}")
        return float(np.mean(1.0 - true_mass[:, k - 1]))

    return dataset, oracle_risk


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def load_dataset(path, schema: IngestSchema) -> Dataset:
    """Parse a delimited text file of records into a validated dataset.

    Probability rows are renormalised once when their sum is within
    ``ROW_SUM_TOL`` of 1 and rejected beyond that; logit rows are stored
    alongside the softmax probabilities they imply.
    """
    labels: list[int] = []
    values: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line_number == 1 and line.startswith("#"):
                continue
            fields = line.split(schema.delimiter)
            if len(fields) != schema.K + 1:
                raise ParseError(
                    f"expected {schema.K + 1} fields, found {len(fields)}", line_number
                )
            try:
                label = int(fields[0])
                row = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line_number) from None
            if not all(np.isfinite(row)):
                raise ValidationError("values must be finite", line_number)
            if not 0 <= label < schema.K:
                raise ValidationError(
                    f"label {label} out of range for K={schema.K}", line_number
                )
            if schema.format == "probabilities":
                total = sum(row)
                if abs(total - 1.0) > ROW_SUM_TOL:
                    raise ValidationError(
                        f"probabilities sum to {total!r}, outside 1 +/- {ROW_SUM_TOL}",
                        line_number,
                    )
                if min(row) < 0:
                    raise ValidationError("probabilities must be nonnegative", line_number)
            labels.append(label)
            values.append(row)
    if not values:
        raise ValidationError(f"no records found in {path}")

    matrix = np.array(values, dtype=float)
    if schema.format == "logits":
        return Dataset(
            probabilities=softmax(matrix), labels=np.array(labels), logits=matrix
        )
    sums = matrix.sum(axis=1)
    needs = np.abs(sums - 1.0) > 1e-9  # below that, renormalising is a no-op
    if needs.any():
        matrix[needs] /= sums[needs, None]
    return Dataset(probabilities=matrix, labels=np.array(labels))


def save_dataset(dataset: Dataset, path, delimiter: str = ",", header: bool = True) -> None:
    """Write a dataset in the ingestion format at full float precision.

    ``repr`` prints the shortest string that parses back to the same
    float, so save/load round-trips are bit-exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write("# label" + delimiter
                     + delimiter.join(f"p{i}" for i in range(dataset.n_classes)) + "\n")
        for i in range(len(dataset)):
            row = delimiter.join(repr(v) for v in dataset.probabilities[i])
            fh.write(f"{dataset.labels[i]}{delimiter}{row}\n")


def save_synthetic(
    dataset: Dataset,
    oracle_risk: Callable[[int], float],
    config: SyntheticConfig,
    path,
) -> Path:
    """Write a synthetic pool plus a JSON sidecar with config and oracle values.

    The sidecar lands next to the CSV with a ``.json`` suffix and carries
    ``oracle_risk(k)`` for every k, so downstream checks need not regenerate.
    """
    path = Path(path)
    save_dataset(dataset, path)
    sidecar = path.with_suffix(".json")
    payload = {
        "config": asdict(config),
        "oracle_risk": {str(k): oracle_risk(k) for k in range(1, config.K + 1)},
    }
    sidecar.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return sidecar
