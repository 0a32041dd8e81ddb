"""Local Rademacher complexities and fixed-point excess-risk bounds.

The complexity bound combines a local Rademacher average ``phi`` and an L2
diameter ``D`` of the delta-minimal set as

    U(delta) = K1 * phi(delta) + K2 * D(delta) * sqrt(t / n) + K3 * t / n,

and the excess-risk bound is the smallest ``delta`` with ``U(delta) <= delta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core_model import (
    EvaluatedClass,
    FiniteSupportDistribution,
    Sample,
    excess_risks,
    l2_diameter_of,
    make_rng,
)

EXHAUSTIVE_MAX_N = 20
_CHUNK = 4096


@dataclass(frozen=True)
class ComplexityConfig:
    t: float = 1.0
    K1: float = 2.0
    K2: float = 1.0
    K3: float = 1.0
    num_rademacher_draws: int = 1000
    fixed_point_tol: float = 1e-9
    delta_max: float = 1.0
    # enumerate all 2**n sign vectors instead of sampling; honoured for n <= 20
    exhaustive: bool = False

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be > 0")
        if min(self.K1, self.K2, self.K3) <= 0:
            raise ValueError("K1, K2, K3 must be > 0")
        if self.num_rademacher_draws < 1:
            raise ValueError("num_rademacher_draws must be >= 1")
        if not 0 < self.fixed_point_tol < self.delta_max:
            raise ValueError("need 0 < fixed_point_tol < delta_max")


@dataclass(frozen=True)
class LocalComplexityCurve:
    deltas: np.ndarray
    phi_hat: np.ndarray
    d_hat: np.ndarray
    u_bar: np.ndarray

    def to_csv(self, path_or_file) -> None:
        """Write columns ``delta, phiHat, dHat, uBar``."""
        rows = zip(self.deltas, self.phi_hat, self.d_hat, self.u_bar)
        if hasattr(path_or_file, "write"):
            _write_curve(path_or_file, rows)
        else:
            with open(path_or_file, "w", newline="") as fh:
                _write_curve(fh, rows)


def _write_curve(fh, rows) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["delta", "phiHat", "dHat", "uBar"])
    for row in rows:
        writer.writerow([repr(float(v)) for v in row])


class FixedPoint(NamedTuple):
    delta: float
    crossed: bool


def _set_for(cls: EvaluatedClass, sample: Sample, delta: float, true_measure):
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta!r}")
    measure = sample if true_measure is None else true_measure
    return np.flatnonzero(excess_risks(measure, cls) <= delta)


def _sign_batches(n: int, config: ComplexityConfig, seed: int):
    """Yield (signs, weight) blocks; weights sum to 1 across blocks."""
    if config.exhaustive and n <= EXHAUSTIVE_MAX_N:
        total = 1 << n
        bits = np.arange(n, dtype=np.int64)
        for start in range(0, total, _CHUNK):
            codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
            signs = 1.0 - 2.0 * ((codes[:, None] >> bits[None, :]) & 1)
            yield signs, np.full(codes.size, 1.0 / total)
        return
    rng = make_rng(seed)
    remaining = config.num_rademacher_draws
    while remaining > 0:
        k = min(remaining, _CHUNK)
        signs = 1.0 - 2.0 * rng.integers(0, 2, size=(k, n))
        yield signs, np.full(k, 1.0 / config.num_rademacher_draws)
        remaining -= k


def rademacher_sup_draws(
    cls: EvaluatedClass,
    sample: Sample,
    delta: float,
    config: ComplexityConfig,
    seed: int,
    true_measure: FiniteSupportDistribution | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sign-vector suprema and their averaging weights.

    For each sign vector the supremum over pairs ``f, g`` of the delta-minimal
    set of ``|n^-1 sum_i s_i (f - g)(X_i)|`` equals ``max_f w_f - min_f w_f``
    with ``w = s @ V / n``.
    """
    if sample.n != cls.n:
        raise ValueError("sample size does not match the class's sample table")
    members = _set_for(cls, sample, delta, true_measure)
    n = cls.n
    sups, weights = [], []
    V = cls.sample_values[:, members]
    for signs, w in _sign_batches(n, config, seed):
        if members.size <= 1:
            sups.append(np.zeros(signs.shape[0]))
        else:
            proj = signs @ V / n
            sups.append(proj.max(axis=1) - proj.min(axis=1))
        weights.append(w)
    return np.concatenate(sups), np.concatenate(weights)


def local_rademacher(
    cls: EvaluatedClass,
    sample: Sample,
    delta: float,
    config: ComplexityConfig,
    seed: int,
    true_measure: FiniteSupportDistribution | None = None,
) -> float:
    """Local Rademacher average over the (empirical by default) delta-minimal set."""
    sups, w = rademacher_sup_draws(cls, sample, delta, config, seed, true_measure)
    return float(np.dot(sups, w))


def u_bar(phi: float, diam: float, n: int, config: ComplexityConfig) -> float:
    if phi < 0 or diam < 0:
        raise ValueError("phi and diam must be nonnegative")
    if n < 1:
        raise ValueError("n must be >= 1")
    t = config.t
    return config.K1 * phi + config.K2 * diam * math.sqrt(t / n) + config.K3 * t / n


def sharp_transform(curve: Callable[[float], float], config: ComplexityConfig, grid_size: int = 64) -> FixedPoint:
    """Smallest ``delta`` in ``(tol, delta_max]`` with ``curve(delta) <= delta``.

    The interval is first scanned on a geometric grid and the first grid
    point with ``curve(delta) <= delta`` is bracketed against its predecessor;
    the bracket is then bisected down to ``fixed_point_tol``. When
    ``curve(delta) - delta`` changes sign several times this returns the
    leftmost crossing visible at grid resolution. The returned value always
    satisfies ``curve(delta) <= delta`` when ``crossed`` is true.
    """
    lo_end, hi_end, tol = config.fixed_point_tol, config.delta_max, config.fixed_point_tol

    def gap(d: float) -> float:
        u = float(curve(d))
        if not math.isfinite(u):
            raise ValueError(f"complexity curve is not finite at delta={d!r}")
        return u - d

    if gap(hi_end) > 0:
        return FixedPoint(hi_end, False)
    if gap(lo_end) <= 0:
        return FixedPoint(lo_end, True)

    grid = np.geomspace(lo_end, hi_end, grid_size)
    lo = lo_end
    hi = hi_end
    for d in grid[1:]:
        if gap(float(d)) <= 0:
            hi = float(d)
            break
        lo = float(d)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return FixedPoint(hi, True)


class EmpiricalComplexity:
    """Evaluates ``U(delta)`` for one class and sample.

    The same sign vectors are reused at every ``delta`` and the delta-minimal
    sets are nested, so the resulting curve is exactly nondecreasing. Values
    are cached per distinct delta-minimal set.
    """

    def __init__(
        self,
        cls: EvaluatedClass,
        sample: Sample,
        config: ComplexityConfig,
        seed: int,
        true_measure: FiniteSupportDistribution | None = None,
    ):
        if sample.n != cls.n:
            raise ValueError("sample size does not match the class's sample table")
        self.cls = cls
        self.sample = sample
        self.config = config
        self.seed = seed
        self.true_measure = true_measure
        measure = sample if true_measure is None else true_measure
        self._excess = excess_risks(measure, cls)
        self._cache: dict[int, tuple[float, float]] = {}

    def _members(self, delta: float) -> np.ndarray:
        return np.flatnonzero(self._excess <= delta)

    def phi_and_diam(self, delta: float) -> tuple[float, float]:
        members = self._members(delta)
        key = members.size
        if key not in self._cache:
            phi = local_rademacher(self.cls, self.sample, delta, self.config, self.seed, self.true_measure)
            diam = l2_diameter_of(self.sample, self.cls, members)
            self._cache[key] = (phi, diam)
        return self._cache[key]

    def __call__(self, delta: float) -> float:
        phi, diam = self.phi_and_diam(delta)
        return u_bar(phi, diam, self.cls.n, self.config)

    def curve(self, deltas) -> LocalComplexityCurve:
        deltas = np.asarray(deltas, dtype=float)
        if deltas.ndim != 1 or np.any(np.diff(deltas) <= 0) or np.any(deltas < 0):
            raise ValueError("deltas must be a strictly increasing grid of nonnegative values")
        pd = np.array([self.phi_and_diam(float(d)) for d in deltas]).reshape(-1, 2)
        ub = np.array([u_bar(p, d, self.cls.n, self.config) for p, d in pd])
        return LocalComplexityCurve(deltas, pd[:, 0], pd[:, 1], ub)


def complexity_curve(cls, sample, deltas, config: ComplexityConfig, seed: int, true_measure=None) -> LocalComplexityCurve:
    return EmpiricalComplexity(cls, sample, config, seed, true_measure).curve(deltas)


def excess_risk_bound(
    cls: EvaluatedClass,
    sample: Sample,
    config: ComplexityConfig,
    seed: int,
    true_measure: FiniteSupportDistribution | None = None,
) -> float:
    """Data-dependent excess-risk bound: the fixed point of the empirical ``U``."""
    if cls.M < 1:
        raise ValueError("class is empty")
    return sharp_transform(EmpiricalComplexity(cls, sample, config, seed, true_measure), config).delta


def penalty_preset(kind: str, n: int, scale: float = 1.0, **params) -> float:
    """Closed-form complexity penalties for common model types.

    ``finite``: scale * sqrt(ln N / n)       (params: N)
    ``linear_dim``: scale * d / n            (params: d)
    ``vc``: scale * V / n                    (params: V)
    ``margin``: scale * V / (n * h)          (params: V, h)
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if scale <= 0:
        raise ValueError("scale must be > 0")
    required = {"finite": ("N",), "linear_dim": ("d",), "vc": ("V",), "margin": ("V", "h")}
    if kind not in required:
        raise ValueError(f"unknown penalty kind {kind!r}")
    for name in required[kind]:
        if name not in params:
            raise ValueError(f"penalty kind {kind!r} needs parameter {name!r}")
        if not params[name] > 0:
            raise ValueError(f"parameter {name} must be > 0")
    if kind == "finite":
        if params["N"] < 2:
            raise ValueError("finite class needs N >= 2 for a positive penalty")
        return scale * math.sqrt(math.log(params["N"]) / n)
    if kind == "linear_dim":
        return scale * params["d"] / n
    if kind == "vc":
        return scale * params["V"] / n
    return scale * params["V"] / (n * params["h"])
