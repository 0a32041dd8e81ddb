"""Selection-type aggregation on the cube {0,1}^N.

With ``P`` uniform on ``{0,1}^N`` and ``delta = sqrt(ln N / n) / 4``, the
class

    f_j(x) = (1 - delta) x_j + delta,  j < N,       f_N(x) = (1 - delta) x_N

has ``P f_j = (1 + delta)/2`` for ``j < N`` and ``P f_N = (1 - delta)/2``, so
empirical risk minimization picks a wrong function with excess risk exactly
``delta``. The expected excess of the ERM selector is therefore
``delta * P(selected != N)``, i.e. of order ``sqrt(ln N / n)`` and never
better.

Function indices here are 0-based: the "good" function ``f_N`` is index
``N - 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .core_model import make_rng

EXACT_MAX_BITS = 20
REP_BLOCK = 1024


@dataclass(frozen=True)
class SelectionInstance:
    N: int
    n: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not math.log(self.N) < 16 * self.n:
            raise ValueError("need ln N < 16 n so that delta < 1")

    @property
    def delta(self) -> float:
        return 0.25 * math.sqrt(math.log(self.N) / self.n)

    @property
    def risk_other(self) -> float:
        return (1.0 + self.delta) / 2.0

    @property
    def risk_last(self) -> float:
        return (1.0 - self.delta) / 2.0

    def true_risks(self) -> np.ndarray:
        r = np.full(self.N, self.risk_other)
        r[-1] = self.risk_last
        return r

    def true_excess(self) -> np.ndarray:
        e = np.full(self.N, self.delta)
        e[-1] = 0.0
        return e

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Values of all ``N`` functions at the rows of ``x`` (shape (..., N))."""
        d = self.delta
        vals = (1.0 - d) * np.asarray(x, dtype=float)
        vals[..., :-1] += d
        return vals


def build_instance(N: int, n: int) -> SelectionInstance:
    return SelectionInstance(N, n)


def draw_coordinate_sample(instance: SelectionInstance, seed: int) -> np.ndarray:
    """``n x N`` table of independent fair bits."""
    return make_rng(seed).integers(0, 2, size=(instance.n, instance.N), dtype=np.uint8)


def select_from_counts(counts: np.ndarray, n: int, delta: float) -> np.ndarray:
    """ERM choice from column counts of ones; works on any leading batch shape.

    ``P_n f_j = (1 - delta) * counts_j / n + delta`` for all but the last
    column, which has no ``+ delta`` shift.
    """
    emp = (1.0 - delta) * (np.asarray(counts, dtype=float) / n)
    emp[..., :-1] += delta
    # argmin returns the first minimizer: ties go to the smallest index
    return np.argmin(emp, axis=-1)


def _select_from_counts(instance: SelectionInstance, counts: np.ndarray) -> np.ndarray:
    return select_from_counts(counts, instance.n, instance.delta)


def erm_select(instance: SelectionInstance, bits: np.ndarray) -> int:
    bits = np.asarray(bits)
    if bits.shape != (instance.n, instance.N):
        raise ValueError(f"expected a {instance.n}x{instance.N} bit table, got {bits.shape}")
    return int(_select_from_counts(instance, bits.sum(axis=0)))


class MeanExcess(NamedTuple):
    estimate: float
    stderr: float


def estimate_mean_excess(instance: SelectionInstance, reps: int, seed: int) -> MeanExcess:
    """Monte Carlo estimate of the expected excess risk of the ERM selector.

    Each replication needs only the column counts of its bit table, which are
    independent Binomial(n, 1/2) variables; they are drawn directly. Blocks
    of ``REP_BLOCK`` replications use generator keys ``(seed, block)``, so
    the result does not depend on how blocks are scheduled.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    wrong = 0
    for block, start in enumerate(range(0, reps, REP_BLOCK)):
        k = min(REP_BLOCK, reps - start)
        counts = make_rng(seed, block).binomial(instance.n, 0.5, size=(k, instance.N))
        wrong += int(np.count_nonzero(_select_from_counts(instance, counts) != instance.N - 1))
    p = wrong / reps
    d = instance.delta
    stderr = d * math.sqrt(p * (1.0 - p) / (reps - 1)) if reps > 1 else 0.0
    return MeanExcess(d * p, stderr)


def exact_wrong_probability(instance: SelectionInstance) -> Fraction:
    """Probability that ERM misses ``f_N``, by enumerating all bit tables."""
    bits = instance.n * instance.N
    if bits > EXACT_MAX_BITS:
        raise ValueError(f"n * N = {bits} exceeds the enumeration limit {EXACT_MAX_BITS}")
    total = 1 << bits
    wrong = 0
    positions = np.arange(bits, dtype=np.int64).reshape(instance.n, instance.N)
    chunk = 1 << 16
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        # table entry (i, j) is bit i*N + j of the code
        counts = np.zeros((codes.size, instance.N), dtype=np.int64)
        for i in range(instance.n):
            counts += (codes[:, None] >> positions[i][None, :]) & 1
        wrong += int(np.count_nonzero(_select_from_counts(instance, counts) != instance.N - 1))
    return Fraction(wrong, total)


def exact_mean_excess(instance: SelectionInstance) -> float:
    return instance.delta * float(exact_wrong_probability(instance))


SWEEP_COLUMNS = ["N", "n", "reps", "delta", "estimate", "stderr", "ratio"]


class SweepRow(NamedTuple):
    N: int
    n: int
    reps: int
    delta: float
    estimate: float
    stderr: float
    ratio: float


def sweep(Ns, ns, reps: int, seed: int) -> list[SweepRow]:
    """Estimate the mean excess on a grid; cell ``(a, b)`` uses key ``(seed, N, n)``."""
    rows = []
    for N in Ns:
        for n in ns:
            inst = SelectionInstance(int(N), int(n))
            est = estimate_mean_excess(inst, reps, _cell_seed(seed, inst))
            scale = math.sqrt(math.log(inst.N) / inst.n)
            rows.append(SweepRow(inst.N, inst.n, reps, inst.delta, est.estimate, est.stderr, est.estimate / scale))
    return rows


def _cell_seed(seed: int, inst: SelectionInstance) -> int:
    return int(np.random.SeedSequence([int(seed), inst.N, inst.n]).generate_state(1, np.uint64)[0])


def write_sweep_csv(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([r.N, r.n, r.reps, repr(r.delta), repr(r.estimate), repr(r.stderr), repr(r.ratio)])
