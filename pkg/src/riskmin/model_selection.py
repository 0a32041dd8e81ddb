"""Penalized selection over nested classes and its oracle-inequality audit.

Given nested classes ``F_1 ⊂ F_2 ⊂ ... ⊂ F_J`` and per-class excess-risk
bounds ``delta_j``, the selected model minimizes
``min_{F_k} P_n f + 4 delta_k``. Whenever, for every ``j`` and ``f`` in
``F_j``,

    E_P(F_j; f)  <= 2 E_Pn(F_j; f) + delta_j        (upper condition)
    E_Pn(F_j; f) <= 2 E_P(F_j; f)  + delta_j        (lower condition)

the selected function satisfies

    E_P(F; f_hat) <= min_j [ min_{F_j} P f - min_F P f + 9 delta_j ].

The audit evaluates both sides in exact rational arithmetic (every float is
a dyadic rational), so the implication can be checked with zero tolerance.
Indices are 0-based throughout: ``k_hat = 0`` is the smallest class.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .core_model import EvaluatedClass, FiniteSupportDistribution, Sample, draw_sample, make_rng

SELECTION_FACTOR = 4
ORACLE_FACTOR = 9


@dataclass(frozen=True)
class NestedFamily:
    """Classes ``F_j`` = the first ``sizes[j]`` functions of ``pool``.

    The union ``F`` is the largest class. The infinite family of the theory is
    truncated to the ``J`` classes given here.
    """

    pool: EvaluatedClass
    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise ValueError("a nested family needs at least one class")
        if sizes[0] < 1 or any(a > b for a, b in zip(sizes, sizes[1:])):
            raise ValueError("class sizes must be >= 1 and nondecreasing (nesting)")
        if sizes[-1] > self.pool.M:
            raise ValueError("class sizes exceed the function pool")
        object.__setattr__(self, "sizes", sizes)

    @property
    def J(self) -> int:
        return len(self.sizes)

    def members(self, j: int) -> range:
        return range(self.sizes[j])

    def member_class(self, j: int) -> EvaluatedClass:
        return self.pool.subclass(np.arange(self.sizes[j]))


@dataclass(frozen=True)
class PenaltySchedule:
    deltas: tuple[float, ...]

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        if not deltas:
            raise ValueError("empty penalty schedule")
        if any(not (d > 0 and np.isfinite(d)) for d in deltas):
            raise ValueError("penalties must be finite and > 0")
        object.__setattr__(self, "deltas", deltas)

    @property
    def monotone(self) -> bool:
        return all(a <= b for a, b in zip(self.deltas, self.deltas[1:]))

    def __len__(self) -> int:
        return len(self.deltas)


def monotonize(schedule: PenaltySchedule) -> PenaltySchedule:
    """Running maximum of the penalties.

    Opt-in only: for nested classes the fixed-point bounds need not increase
    with the class, and replacing them by a running maximum can inflate the
    penalties of larger classes well beyond their own bounds.
    """
    return PenaltySchedule(tuple(np.maximum.accumulate(np.asarray(schedule.deltas))))


class SelectionResult(NamedTuple):
    k_hat: int
    f_hat: int
    scores: tuple


class Violation(NamedTuple):
    j: int
    f: int
    condition: str  # "upper" or "lower"
    slack: float


class ConditionCheck(NamedTuple):
    holds: bool
    upper_holds: bool
    lower_holds: bool
    worst: Violation


@dataclass(frozen=True)
class AuditReport:
    conditions_hold: bool
    upper_condition_holds: bool
    worst_violation: Violation
    k_hat: int
    f_hat: int
    lhs: float
    rhs: float
    oracle_holds: bool
    # E_P(F_j; f_hat_j) <= delta_j for every j, where f_hat_j minimizes P_n over F_j
    single_class_holds: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["worst_violation"] = self.worst_violation._asdict()
        return d


def _check_lengths(family: NestedFamily, schedule: PenaltySchedule) -> None:
    if len(schedule) != family.J:
        raise ValueError(f"schedule has {len(schedule)} penalties for {family.J} classes")


def _risk_vectors(family: NestedFamily, dist: FiniteSupportDistribution | None, exact: bool):
    """Population and empirical risks of the pool's functions.

    With ``exact=True`` these are ``Fraction`` objects computed without any
    rounding; otherwise floats.
    """
    pool = family.pool
    n = pool.n
    emp = pop = None
    if exact:
        smp = [[Fraction(v) for v in row] for row in pool.sample_values.T.tolist()]
        emp = [sum(col, Fraction(0)) / n for col in smp]
        if dist is not None:
            if dist.m != pool.pop_values.shape[0]:
                raise ValueError("distribution and class disagree on the support size")
            probs = [Fraction(p) for p in dist.probs.tolist()]
            pop = [
                sum((p * Fraction(v) for p, v in zip(probs, col)), Fraction(0))
                for col in pool.pop_values.T.tolist()
            ]
    else:
        emp = list(pool.sample_values.mean(axis=0))
        if dist is not None:
            if dist.m != pool.pop_values.shape[0]:
                raise ValueError("distribution and class disagree on the support size")
            pop = list(dist.probs @ pool.pop_values)
    return pop, emp


def _argmin(values: Sequence, stop: int) -> int:
    best = 0
    for i in range(1, stop):
        if values[i] < values[best]:
            best = i
    return best


def _select(family: NestedFamily, deltas, emp) -> SelectionResult:
    mins = [_argmin(emp, s) for s in family.sizes]
    scores = tuple(emp[mins[k]] + SELECTION_FACTOR * deltas[k] for k in range(family.J))
    k_hat = _argmin(scores, family.J)
    return SelectionResult(k_hat, mins[k_hat], scores)


def select_model(family: NestedFamily, schedule: PenaltySchedule, exact: bool = False) -> SelectionResult:
    """Penalized empirical selection; ties go to the smallest class and function index."""
    _check_lengths(family, schedule)
    _, emp = _risk_vectors(family, None, exact)
    deltas = [Fraction(d) for d in schedule.deltas] if exact else list(schedule.deltas)
    return _select(family, deltas, emp)


def _conditions(family: NestedFamily, deltas, pop, emp) -> ConditionCheck:
    worst = None
    upper_ok = lower_ok = True
    for j, size in enumerate(family.sizes):
        min_pop = min(pop[:size])
        min_emp = min(emp[:size])
        for f in range(size):
            ep = pop[f] - min_pop
            en = emp[f] - min_emp
            upper = 2 * en + deltas[j] - ep
            lower = 2 * ep + deltas[j] - en
            if upper < 0:
                upper_ok = False
            if lower < 0:
                lower_ok = False
            for name, slack in (("upper", upper), ("lower", lower)):
                if worst is None or slack < worst[3]:
                    worst = (j, f, name, slack)
    j, f, name, slack = worst
    return ConditionCheck(upper_ok and lower_ok, upper_ok, lower_ok, Violation(j, f, name, float(slack)))


def check_conditions(
    family: NestedFamily,
    dist: FiniteSupportDistribution,
    schedule: PenaltySchedule,
    exact: bool = True,
) -> ConditionCheck:
    """Check both conditions for every class and every member.

    ``worst`` is the (class, function, condition) with the smallest slack;
    a negative slack is a violation.
    """
    _check_lengths(family, schedule)
    pop, emp = _risk_vectors(family, dist, exact)
    deltas = [Fraction(d) for d in schedule.deltas] if exact else list(schedule.deltas)
    return _conditions(family, deltas, pop, emp)


def audit_oracle(
    family: NestedFamily,
    dist: FiniteSupportDistribution,
    schedule: PenaltySchedule,
    exact: bool = True,
) -> AuditReport:
    """Evaluate both sides of the oracle inequality for one sample."""
    _check_lengths(family, schedule)
    if not schedule.monotone:
        raise ValueError(
            "penalty schedule is not nondecreasing; call monotonize() first if that is intended"
        )
    pop, emp = _risk_vectors(family, dist, exact)
    deltas = [Fraction(d) for d in schedule.deltas] if exact else list(schedule.deltas)
    cond = _conditions(family, deltas, pop, emp)
    sel = _select(family, deltas, emp)

    min_all = min(pop[: family.sizes[-1]])
    lhs = pop[sel.f_hat] - min_all
    rhs = min(min(pop[:s]) - min_all + ORACLE_FACTOR * deltas[j] for j, s in enumerate(family.sizes))

    single = True
    for j, s in enumerate(family.sizes):
        fj = _argmin(emp, s)
        if pop[fj] - min(pop[:s]) > deltas[j]:
            single = False
            break

    return AuditReport(
        conditions_hold=cond.holds,
        upper_condition_holds=cond.upper_holds,
        worst_violation=cond.worst,
        k_hat=sel.k_hat,
        f_hat=sel.f_hat,
        lhs=float(lhs),
        rhs=float(rhs),
        oracle_holds=bool(lhs <= rhs),
        single_class_holds=single,
    )


# -- random instances --------------------------------------------------------


@dataclass(frozen=True)
class AuditInstance:
    family: NestedFamily
    dist: FiniteSupportDistribution
    sample: Sample
    schedule: PenaltySchedule


def random_instance(
    rng: np.random.Generator,
    m_range: tuple[int, int] = (3, 10),
    M_range: tuple[int, int] = (4, 30),
    n_range: tuple[int, int] = (5, 60),
    J_max: int = 6,
    penalty_scale_range: tuple[float, float] = (1e-3, 1.0),
) -> AuditInstance:
    """Random nested instance for auditing.

    Support of ``m`` points with Dirichlet(1) weights, a pool of ``M``
    functions with independent uniform values, nested prefixes of random
    sizes, and sorted penalties on a log-uniform scale so that both the
    passing and the failing branch of the conditions are exercised.
    """
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    M = int(rng.integers(M_range[0], M_range[1] + 1))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    J = int(rng.integers(1, J_max + 1))

    probs = rng.dirichlet(np.ones(m))
    probs = probs / probs.sum()
    dist = FiniteSupportDistribution(probs)
    values = rng.random((m, M))
    sample = draw_sample(dist, n, int(rng.integers(0, 2**63)))
    pool = EvaluatedClass.from_population(values, sample)

    sizes = np.sort(rng.integers(1, M + 1, size=J))
    sizes[-1] = M
    lo, hi = np.log(penalty_scale_range[0]), np.log(penalty_scale_range[1])
    scale = float(np.exp(rng.uniform(lo, hi)))
    deltas = np.sort(rng.uniform(0.05, 1.0, size=J)) * scale
    return AuditInstance(NestedFamily(pool, tuple(int(s) for s in sizes)), dist, sample, PenaltySchedule(tuple(deltas)))


def run_audit_sweep(instances: int, seed: int, **generator_kwargs) -> list[AuditReport]:
    """Audit ``instances`` random instances; instance ``i`` uses keys ``(seed, i)``."""
    reports = []
    for i in range(instances):
        inst = random_instance(make_rng(seed, i), **generator_kwargs)
        reports.append(audit_oracle(inst.family, inst.dist, inst.schedule))
    return reports


AUDIT_CSV_COLUMNS = ["instance", "conditionsHold", "lhs", "rhs", "oracleHolds"]


def write_audit_csv(reports: Sequence[AuditReport], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(AUDIT_CSV_COLUMNS)
    for i, r in enumerate(reports):
        writer.writerow([i, int(r.conditions_hold), repr(r.lhs), repr(r.rhs), int(r.oracle_holds)])


def write_audit_json(reports: Sequence[AuditReport], fh) -> None:
    records = [dict(instance=i, **r.to_dict()) for i, r in enumerate(reports)]
    json.dump(records, fh, sort_keys=True, indent=1)
    fh.write("\n")
