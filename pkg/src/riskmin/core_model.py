"""Exact and empirical risks over finite function classes.

A function class is materialized as two evaluation tables: one over the
support of a finite distribution and one over an i.i.d. sample from it.
Every sup/inf over the class is then a finite max/min.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

SCHEMA_VERSION = 1
PROB_SUM_TOL = 1e-12


def make_rng(*keys: int) -> np.random.Generator:
    """PCG64 generator seeded from a tuple of integer keys.

    All randomness in the package flows through this function, so a given
    key tuple yields the same stream on every platform.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class FiniteSupportDistribution:
    """Probability measure on ``m`` indexed support points.

    ``features`` (m x q) and ``labels`` (m,) are optional attachments used by
    the sparse linear models; the risk machinery only needs ``probs``.
    """

    probs: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a nonempty 1-d array")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probs must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probs sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=float)
            if feats.shape[0] != probs.size:
                raise ValueError("features must have one row per support point")
            object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=float)
            if labels.shape != probs.shape:
                raise ValueError("labels must have one entry per support point")
            object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.probs.size

    @classmethod
    def uniform(cls, m: int, **kwargs) -> "FiniteSupportDistribution":
        return cls(np.full(m, 1.0 / m), **kwargs)


@dataclass(frozen=True)
class Sample:
    """``n`` i.i.d. draws, stored as support-point indices."""

    draws: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=np.int64)
        if draws.ndim != 1 or draws.size < 1:
            raise ValueError("a sample needs at least one draw")
        if np.any(draws < 0):
            raise ValueError("draw indices must be nonnegative")
        object.__setattr__(self, "draws", draws)

    @property
    def n(self) -> int:
        return self.draws.size

    def check_against(self, dist: FiniteSupportDistribution) -> None:
        if self.draws.max() >= dist.m:
            raise ValueError("sample references a point outside the support")


@dataclass(frozen=True)
class EvaluatedClass:
    """Finite class ``{f_1, ..., f_M}`` given by its value tables.

    ``pop_values[k, j] = f_j(s_k)`` over the support and
    ``sample_values[i, j] = f_j(X_i)`` over the sample. Values lie in [0, 1].
    """

    pop_values: np.ndarray
    sample_values: np.ndarray

    def __post_init__(self):
        pop = np.asarray(self.pop_values, dtype=float)
        smp = np.asarray(self.sample_values, dtype=float)
        if pop.ndim != 2 or smp.ndim != 2:
            raise ValueError("value tables must be 2-d")
        if pop.shape[1] != smp.shape[1] or pop.shape[1] < 1:
            raise ValueError("both tables need the same number M >= 1 of columns")
        for name, table in (("pop_values", pop), ("sample_values", smp)):
            if np.any(~np.isfinite(table)) or table.min() < 0.0 or table.max() > 1.0:
                raise ValueError(f"{name} entries must lie in [0, 1]")
        object.__setattr__(self, "pop_values", pop)
        object.__setattr__(self, "sample_values", smp)

    @property
    def M(self) -> int:
        return self.pop_values.shape[1]

    @property
    def n(self) -> int:
        return self.sample_values.shape[0]

    @classmethod
    def from_population(cls, pop_values, sample: Sample) -> "EvaluatedClass":
        """Build the sample table by looking up each draw in ``pop_values``."""
        pop = np.asarray(pop_values, dtype=float)
        if sample.draws.max() >= pop.shape[0]:
            raise ValueError("sample references a point outside the support")
        return cls(pop, pop[sample.draws])

    def subclass(self, indices) -> "EvaluatedClass":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("a subclass must keep at least one function")
        return EvaluatedClass(self.pop_values[:, idx], self.sample_values[:, idx])

    def shifted(self, c: float) -> "EvaluatedClass":
        """Add ``c`` to every value; the result must stay in [0, 1]."""
        return EvaluatedClass(self.pop_values + c, self.sample_values + c)


Measure = Union[FiniteSupportDistribution, Sample]


def _check_index(cls: EvaluatedClass, j: int) -> int:
    if not 0 <= j < cls.M:
        raise IndexError(f"function index {j} out of range for class of size {cls.M}")
    return int(j)


def _table_and_weights(measure: Measure, cls: EvaluatedClass):
    if isinstance(measure, FiniteSupportDistribution):
        if measure.m != cls.pop_values.shape[0]:
            raise ValueError("distribution and class disagree on the support size")
        return cls.pop_values, measure.probs
    if isinstance(measure, Sample):
        if measure.n != cls.n:
            raise ValueError("sample size does not match the class's sample table")
        return cls.sample_values, np.full(cls.n, 1.0 / cls.n)
    raise TypeError(f"expected a distribution or a sample, got {type(measure).__name__}")


def risks(measure: Measure, cls: EvaluatedClass) -> np.ndarray:
    """Risk of every function in the class under ``measure``."""
    if isinstance(measure, Sample):
        _table_and_weights(measure, cls)
        return cls.sample_values.mean(axis=0)
    table, w = _table_and_weights(measure, cls)
    return w @ table


def true_risk(dist: FiniteSupportDistribution, cls: EvaluatedClass, j: int) -> float:
    j = _check_index(cls, j)
    return float(risks(dist, cls)[j])


def empirical_risk(sample: Sample, cls: EvaluatedClass, j: int) -> float:
    j = _check_index(cls, j)
    return float(risks(sample, cls)[j])


def excess_risks(measure: Measure, cls: EvaluatedClass) -> np.ndarray:
    r = risks(measure, cls)
    return r - r.min()


def excess_risk(measure: Measure, cls: EvaluatedClass, j: int) -> float:
    """``risk(f_j) - min_g risk(g)``; zero for every minimizer."""
    j = _check_index(cls, j)
    return float(excess_risks(measure, cls)[j])


def delta_minimal_set(measure: Measure, cls: EvaluatedClass, delta: float) -> np.ndarray:
    """Sorted indices of the functions with excess risk at most ``delta``.

    The comparison is an exact ``<=``, so ``delta = 0`` returns the tied
    minimizers.
    """
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta!r}")
    return np.flatnonzero(excess_risks(measure, cls) <= delta)


def l2_diameter_of(measure: Measure, cls: EvaluatedClass, indices) -> float:
    """Largest L2(measure) distance between two functions in ``indices``."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size <= 1:
        return 0.0
    table, w = _table_and_weights(measure, cls)
    V = table[:, idx]
    # squared distances via the weighted Gram matrix
    G = (V * w[:, None]).T @ V
    sq = np.diag(G)
    d2 = sq[:, None] + sq[None, :] - 2.0 * G
    return float(np.sqrt(max(d2.max(), 0.0)))


def l2_diameter(measure: Measure, cls: EvaluatedClass, delta: float) -> float:
    return l2_diameter_of(measure, cls, delta_minimal_set(measure, cls, delta))


def draw_sample(dist: FiniteSupportDistribution, n: int, seed: int) -> Sample:
    """``n`` i.i.d. categorical draws by inverse-CDF lookup on PCG64 uniforms."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    u = make_rng(seed).random(n)
    cdf = np.cumsum(dist.probs)
    # side="right" never lands on a zero-mass point; scaling by cdf[-1] keeps
    # the lookup inside the support when the sum is 1 - O(eps)
    draws = np.searchsorted(cdf, u * cdf[-1], side="right")
    return Sample(draws, seed=seed)


# -- JSON I/O ---------------------------------------------------------------


def _require_version(doc: dict) -> None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported or missing schema_version: {version!r}")


def distribution_to_dict(dist: FiniteSupportDistribution) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "distribution", "probs": dist.probs.tolist()}
    if dist.features is not None:
        doc["features"] = dist.features.tolist()
    if dist.labels is not None:
        doc["labels"] = dist.labels.tolist()
    return doc


def distribution_from_dict(doc: dict) -> FiniteSupportDistribution:
    _require_version(doc)
    return FiniteSupportDistribution(
        np.asarray(doc["probs"], dtype=float),
        features=None if doc.get("features") is None else np.asarray(doc["features"], dtype=float),
        labels=None if doc.get("labels") is None else np.asarray(doc["labels"], dtype=float),
    )


def class_to_dict(cls: EvaluatedClass) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "evaluated_class",
        "pop_values": cls.pop_values.tolist(),
        "sample_values": cls.sample_values.tolist(),
    }


def class_from_dict(doc: dict) -> EvaluatedClass:
    _require_version(doc)
    return EvaluatedClass(
        np.asarray(doc["pop_values"], dtype=float).reshape(len(doc["pop_values"]), -1),
        np.asarray(doc["sample_values"], dtype=float).reshape(len(doc["sample_values"]), -1),
    )


def save_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
