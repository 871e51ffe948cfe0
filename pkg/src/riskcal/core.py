"""Domain types, probability utilities, prediction sets, and conformity scores.

Everything in this module is a pure function over immutable values, so any
number of threads may call into it concurrently. The batch helpers at the
bottom (``top_k_mass``, ``label_in_top_k``, ...) are vectorised equivalents
of the per-record operations and must agree with them exactly; the test
suite enforces that.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "PROBABILITY_SUM_TOL",
    "ScoreFunction",
    "PredictionRecord",
    "Dataset",
    "PredictionSet",
    "softmax",
    "descending_classes",
    "top_k_set",
    "aps_score",
    "lac_score",
    "set_score",
    "top_k_mass",
    "label_in_top_k",
    "label_ranks",
    "set_scores",
    "true_label_scores",
]

# Probability vectors must sum to 1 within this tolerance on input.
PROBABILITY_SUM_TOL = 1e-6

# Below this deviation, dividing by the row sum would only churn the last
# bits of the mantissa; skipping it keeps save/load round-trips bit-exact.
_RENORM_NOOP_TOL = 1e-9


class ScoreFunction(Enum):
    """Conformity-score family. APS is the default everywhere."""

    APS = "aps"
    LAC = "lac"


def softmax(logits: Sequence[float] | np.ndarray) -> np.ndarray:
    """Numerically safe softmax (max-subtraction before exponentiation).

    Works on a single logit vector or row-wise on a 2-D array. The argmax
    of every row is preserved.
    """
    z = np.asarray(logits, dtype=float)
    if z.shape[-1] < 2:
        raise ValueError("softmax needs at least 2 classes")
    if not np.isfinite(z).all():
        raise ValueError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _validated_probability_matrix(probs: np.ndarray) -> np.ndarray:
    """Validate an (n, K) probability matrix and renormalise rows once."""
    if probs.ndim != 2:
        raise ValueError(f"expected a 2-D probability matrix, got shape {probs.shape}")
    if probs.shape[1] < 2:
        raise ValueError("need at least 2 classes")
    if not np.isfinite(probs).all():
        raise ValueError("probabilities must be finite")
    if (probs < 0).any():
        raise ValueError("probabilities must be nonnegative")
    sums = probs.sum(axis=1)
    deviation = np.abs(sums - 1.0)
    if (deviation > PROBABILITY_SUM_TOL).any():
        worst = int(np.argmax(deviation))
        raise ValueError(
            f"row {worst} sums to {sums[worst]!r}, outside 1 +/- {PROBABILITY_SUM_TOL}"
        )
    out = np.array(probs, dtype=float)
    needs_renorm = deviation > _RENORM_NOOP_TOL
    if needs_renorm.any():
        out[needs_renorm] /= sums[needs_renorm, None]
    return out


@dataclass(frozen=True)
class PredictionRecord:
    """One sample: its class-probability vector, true label, optional logits.

    Probabilities are validated (nonnegative, summing to 1 within
    ``PROBABILITY_SUM_TOL``) and renormalised exactly once here; they are
    never silently rescaled afterwards. If logits are supplied they must
    reproduce the probabilities through :func:`softmax` within 1e-6.
    """

    probabilities: np.ndarray
    label: int
    logits: np.ndarray | None = None

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=float)
        if probs.ndim != 1:
            raise ValueError("probabilities must be a 1-D vector")
        probs = _validated_probability_matrix(probs[None, :])[0]
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)

        label = int(self.label)
        if not 0 <= label < probs.shape[0]:
            raise ValueError(f"label {label} out of range for {probs.shape[0]} classes")
        object.__setattr__(self, "label", label)

        if self.logits is not None:
            logits = np.asarray(self.logits, dtype=float)
            if logits.shape != probs.shape:
                raise ValueError("logits must have one entry per class")
            if not np.isfinite(logits).all():
                raise ValueError("logits must be finite")
            if np.abs(softmax(logits) - probs).max() > 1e-6:
                raise ValueError("softmax(logits) does not match probabilities")
            logits.setflags(write=False)
            object.__setattr__(self, "logits", logits)

    @property
    def n_classes(self) -> int:
        return self.probabilities.shape[0]


class Dataset:
    """Ordered collection of prediction records sharing one class count.

    Stored internally as arrays (``probabilities`` of shape (n, K),
    ``labels`` of shape (n,), optional ``logits``) so that the estimation
    methods can vectorise; ``ds[i]`` materialises the i-th record.
    """

    __slots__ = ("probabilities", "labels", "logits")

    def __init__(
        self,
        probabilities: np.ndarray,
        labels: np.ndarray,
        logits: np.ndarray | None = None,
    ) -> None:
        probs = _validated_probability_matrix(np.asarray(probabilities, dtype=float))
        if probs.shape[0] == 0:
            raise ValueError("dataset must be nonempty")
        lab = np.asarray(labels)
        if lab.shape != (probs.shape[0],):
            raise ValueError("labels must be one integer per record")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.floor(lab)):
                raise ValueError("labels must be integers")
        lab = lab.astype(np.int64)
        if lab.min() < 0 or lab.max() >= probs.shape[1]:
            raise ValueError("labels must lie in [0, K)")

        if logits is not None:
            logits = np.asarray(logits, dtype=float)
            if logits.shape != probs.shape:
                raise ValueError("logits must have the same shape as probabilities")
            if not np.isfinite(logits).all():
                raise ValueError("logits must be finite")
            if np.abs(softmax(logits) - probs).max() > 1e-6:
                raise ValueError("softmax(logits) does not match probabilities")
            logits.setflags(write=False)

        probs.setflags(write=False)
        lab.setflags(write=False)
        self.probabilities = probs
        self.labels = lab
        self.logits = logits

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord]) -> "Dataset":
        if len(records) == 0:
            raise ValueError("dataset must be nonempty")
        k = records[0].n_classes
        if any(r.n_classes != k for r in records):
            raise ValueError("all records must share the same class count")
        with_logits = all(r.logits is not None for r in records)
        return cls(
            probabilities=np.stack([r.probabilities for r in records]),
            labels=np.array([r.label for r in records]),
            logits=np.stack([r.logits for r in records]) if with_logits else None,
        )

    @property
    def n_classes(self) -> int:
        return self.probabilities.shape[1]

    def __len__(self) -> int:
        return self.probabilities.shape[0]

    def __getitem__(self, i: int) -> PredictionRecord:
        return PredictionRecord(
            probabilities=self.probabilities[i],
            label=int(self.labels[i]),
            logits=None if self.logits is None else self.logits[i],
        )

    def __iter__(self) -> Iterator[PredictionRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def records(self) -> list[PredictionRecord]:
        return list(self)

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Dataset restricted to the given record indices (order preserved)."""
        idx = np.asarray(indices)
        return Dataset(
            probabilities=self.probabilities[idx],
            labels=self.labels[idx],
            logits=None if self.logits is None else self.logits[idx],
        )


@dataclass(frozen=True)
class PredictionSet:
    """A set of class indices ordered by descending model probability.

    Sets built by :func:`top_k_set` always contain at least one class;
    conformal intervals at large miss-coverage levels may be empty.
    """

    classes: tuple[int, ...]

    def __post_init__(self) -> None:
        classes = tuple(int(c) for c in self.classes)
        if len(set(classes)) != len(classes):
            raise ValueError("prediction set classes must be distinct")
        object.__setattr__(self, "classes", classes)

    @property
    def k(self) -> int:
        return len(self.classes)

    def __contains__(self, label: int) -> bool:
        return int(label) in self.classes

    def __iter__(self) -> Iterator[int]:
        return iter(self.classes)

    def __len__(self) -> int:
        return len(self.classes)


def descending_classes(probabilities: np.ndarray) -> np.ndarray:
    """Class indices sorted by descending probability, ties by ascending index.

    This single tie rule is shared by every ranking-dependent operation so
    that scores are reproducible.
    """
    p = np.asarray(probabilities, dtype=float)
    return np.argsort(-p, axis=-1, kind="stable")


def top_k_set(record: PredictionRecord, k: int) -> PredictionSet:
    """The k most probable classes of a record, most probable first."""
    if not 1 <= k <= record.n_classes:
        raise ValueError(f"k must be in [1, {record.n_classes}], got {k}")
    order = descending_classes(record.probabilities)
    return PredictionSet(classes=tuple(int(c) for c in order[:k]))


def aps_score(record: PredictionRecord, y: int) -> float:
    """Cumulative probability mass down to class ``y`` in descending order.

    Equals the top-1 probability when ``y`` is the most probable class and
    1 when it is the least probable one.
    """
    if not 0 <= y < record.n_classes:
        raise ValueError(f"class {y} out of range")
    order = descending_classes(record.probabilities)
    rank = int(np.nonzero(order == y)[0][0])
    return float(record.probabilities[order[: rank + 1]].sum())


def lac_score(record: PredictionRecord, y: int) -> float:
    """One minus the probability assigned to class ``y``."""
    if not 0 <= y < record.n_classes:
        raise ValueError(f"class {y} out of range")
    return float(1.0 - record.probabilities[y])


def set_score(
    record: PredictionRecord,
    prediction_set: PredictionSet,
    score_fn: ScoreFunction = ScoreFunction.APS,
) -> float:
    """Score of a whole prediction set: the worst score among its members.

    For an APS score and a top-k set this is the summed top-k probability.
    """
    if prediction_set.k == 0:
        raise ValueError("cannot score an empty prediction set")
    if score_fn is ScoreFunction.APS:
        return max(aps_score(record, y) for y in prediction_set)
    if score_fn is ScoreFunction.LAC:
        return max(lac_score(record, y) for y in prediction_set)
    raise ValueError(f"unknown score function {score_fn!r}")


# ---------------------------------------------------------------------------
# Vectorised batch equivalents.
# ---------------------------------------------------------------------------


def _descending_prob_matrix(dataset: Dataset) -> np.ndarray:
    """Each row's probabilities sorted descending under the shared tie rule."""
    order = descending_classes(dataset.probabilities)
    return np.take_along_axis(dataset.probabilities, order, axis=1)


def top_k_mass(dataset: Dataset, k: int) -> np.ndarray:
    """Per record, the summed probability of its top-k classes.

    The full set (k = K) carries mass exactly 1; partial sums are capped
    at 1 so rounding slack cannot produce confidences above a probability.
    """
    if not 1 <= k <= dataset.n_classes:
        raise ValueError(f"k must be in [1, {dataset.n_classes}], got {k}")
    if k == dataset.n_classes:
        return np.ones(len(dataset))
    return np.minimum(_descending_prob_matrix(dataset)[:, :k].sum(axis=1), 1.0)


def label_ranks(dataset: Dataset) -> np.ndarray:
    """Per record, the 0-based rank of the true label in descending order."""
    order = descending_classes(dataset.probabilities)
    hits = order == dataset.labels[:, None]
    return hits.argmax(axis=1)


def label_in_top_k(dataset: Dataset, k: int) -> np.ndarray:
    """Boolean vector: does the true label sit inside the top-k set?"""
    if not 1 <= k <= dataset.n_classes:
        raise ValueError(f"k must be in [1, {dataset.n_classes}], got {k}")
    return label_ranks(dataset) < k


def set_scores(
    dataset: Dataset, k: int, score_fn: ScoreFunction = ScoreFunction.APS
) -> np.ndarray:
    """Per record, the set score of its top-k prediction set."""
    if not 1 <= k <= dataset.n_classes:
        raise ValueError(f"k must be in [1, {dataset.n_classes}], got {k}")
    sorted_probs = _descending_prob_matrix(dataset)
    if score_fn is ScoreFunction.APS:
        if k == dataset.n_classes:
            return np.ones(len(dataset))
        return np.minimum(sorted_probs[:, :k].sum(axis=1), 1.0)
    if score_fn is ScoreFunction.LAC:
        # max over the set of (1 - p_y) = 1 - smallest member probability
        return 1.0 - sorted_probs[:, k - 1]
    raise ValueError(f"unknown score function {score_fn!r}")


def true_label_scores(
    dataset: Dataset, score_fn: ScoreFunction = ScoreFunction.APS
) -> np.ndarray:
    """Per record, the conformity score of its true label."""
    if score_fn is ScoreFunction.APS:
        order = descending_classes(dataset.probabilities)
        sorted_probs = np.take_along_axis(dataset.probabilities, order, axis=1)
        cumulative = sorted_probs.cumsum(axis=1)
        ranks = (order == dataset.labels[:, None]).argmax(axis=1)
        return cumulative[np.arange(len(dataset)), ranks]
    if score_fn is ScoreFunction.LAC:
        return 1.0 - dataset.probabilities[np.arange(len(dataset)), dataset.labels]
    raise ValueError(f"unknown score function {score_fn!r}")
