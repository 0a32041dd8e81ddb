"""Penalized empirical risk minimization over a dictionary of atoms.

Linear models ``f_lam = sum_j lam_j h_j`` with atoms ``h_j`` valued in
[-1, 1], a convex loss, and one of three penalties:

* ``L0``: number of nonzero coefficients (exact by support enumeration),
* ``L1``: ``sum |lam_j|``,
* ``Lp``: ``sum |lam_j|**p`` with ``p > 1``; by default ``p = 1 + 1/ln N``.

Convex problems are solved by a monotone accelerated proximal gradient
method with backtracking. The ``Lp`` proximal map is computed per
coordinate by safeguarded Newton iterations.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core_model import FiniteSupportDistribution, draw_sample

LOSS_KINDS = ("quadratic", "logistic")
PENALTY_KINDS = ("L0", "L1", "Lp")
L0_MAX_ATOMS = 15
SOLVER_TOL = 1e-8
MAX_ITERS = 100_000
ZERO_TOL = 1e-10
GRAM_RANK_TOL = 1e-10


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, result: "SolverResult"):
        super().__init__(message)
        self.result = result


# -- basic pieces -------------------------------------------------------------


@dataclass(frozen=True)
class Dictionary:
    """Atom values on the support (``pop_atoms``, m x N) and the sample (n x N)."""

    pop_atoms: np.ndarray
    sample_atoms: np.ndarray

    def __post_init__(self):
        pop = np.asarray(self.pop_atoms, dtype=float)
        smp = np.asarray(self.sample_atoms, dtype=float)
        if pop.ndim != 2 or smp.ndim != 2 or pop.shape[1] != smp.shape[1]:
            raise ValueError("atom tables must be 2-d with the same number of columns")
        for table in (pop, smp):
            if table.size and (np.any(~np.isfinite(table)) or np.abs(table).max() > 1.0):
                raise ValueError("atom values must lie in [-1, 1]")
        object.__setattr__(self, "pop_atoms", pop)
        object.__setattr__(self, "sample_atoms", smp)

    @property
    def N(self) -> int:
        return self.pop_atoms.shape[1]

    @property
    def n(self) -> int:
        return self.sample_atoms.shape[0]


def f_eval(dictionary: Dictionary, lam, index: int, table: str = "sample") -> float:
    """Value of ``f_lam`` at one row of the ``"sample"`` or ``"pop"`` table."""
    atoms = {"sample": dictionary.sample_atoms, "pop": dictionary.pop_atoms}[table]
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (dictionary.N,):
        raise ValueError("coefficient vector has the wrong length")
    if not 0 <= index < atoms.shape[0]:
        raise IndexError(f"row {index} out of range")
    return float(atoms[index] @ lam)


@dataclass(frozen=True)
class LossSpec:
    """Loss kind plus labels on the support and on the sample.

    quadratic: ``(y - u)**2``;  logistic: ``ln(1 + exp(-y u))`` with ``y = ±1``.
    """

    kind: str
    pop_labels: np.ndarray
    sample_labels: np.ndarray

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}")
        for name in ("pop_labels", "sample_labels"):
            y = np.asarray(getattr(self, name), dtype=float)
            if self.kind == "logistic" and not np.all(np.abs(y) == 1):
                raise ValueError("logistic labels must be +1 or -1")
            object.__setattr__(self, name, y)


def loss_values(kind: str, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    if kind == "quadratic":
        return (y - u) ** 2
    return np.logaddexp(0.0, -y * u)


def loss_derivative(kind: str, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Derivative in the prediction ``u``."""
    if kind == "quadratic":
        return -2.0 * (y - u)
    # -y * sigmoid(-y u), written to avoid overflow
    return -y * 0.5 * (1.0 - np.tanh(0.5 * y * u))


def loss_curvature_bound(kind: str) -> float:
    return 2.0 if kind == "quadratic" else 0.25


def p_default(N: int) -> float:
    """``1 + 1/ln N``."""
    if N < 2:
        raise ValueError("p_default needs N >= 2")
    return 1.0 + 1.0 / math.log(N)


def lp_norm(lam, p: float) -> float:
    a = np.abs(np.asarray(lam, dtype=float))
    scale = a.max(initial=0.0)
    if scale == 0.0:
        return 0.0
    return float(scale * np.sum((a / scale) ** p) ** (1.0 / p))


def gamma_d(lam, d: int) -> float:
    """l1 mass of ``lam`` outside its ``d`` largest-magnitude entries."""
    a = np.abs(np.asarray(lam, dtype=float))
    if not 0 <= d <= a.size:
        raise ValueError(f"d must be in [0, {a.size}], got {d}")
    return float(np.sort(a)[::-1][d:].sum())


@dataclass(frozen=True)
class PenaltySpec:
    kind: str
    epsilon: float
    p: float | None = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty {self.kind!r}")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be finite and >= 0")
        if self.kind == "Lp":
            if self.p is None or not self.p > 1:
                raise ValueError("Lp penalty needs p > 1")

    @classmethod
    def lp_default(cls, epsilon: float, N: int) -> "PenaltySpec":
        return cls("Lp", epsilon, p_default(N))

    def value(self, lam: np.ndarray) -> float:
        a = np.abs(lam)
        if self.kind == "L0":
            return float(np.count_nonzero(a))
        if self.kind == "L1":
            return float(a.sum())
        return float(np.sum(a**self.p))

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        """``argmin_x 0.5 ||x - v||^2 + step * epsilon * pen(x)``."""
        tau = step * self.epsilon
        if tau == 0.0:
            return v.copy()
        if self.kind == "L1":
            return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
        if self.kind == "Lp":
            return np.sign(v) * _lp_prox_radius(np.abs(v), tau * self.p, self.p)
        raise ValueError("the L0 penalty has no proximal step here; use support enumeration")


def _lp_prox_radius(a: np.ndarray, c: float, p: float, max_iter: int = 100) -> np.ndarray:
    """Root ``r`` in ``[0, a]`` of ``r - a + c r**(p-1) = 0``, elementwise.

    In ``s = ln r`` the left side ``e^s - a + c e^((p-1)s)`` is increasing and
    convex, so Newton's method started at the upper bracket
    ``min(a, (a/c)**(1/(p-1)))`` decreases monotonically to the root and
    keeps relative accuracy for roots many orders of magnitude below ``a``.
    """
    a = np.asarray(a, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        r = np.minimum(a, (a / c) ** (1.0 / (p - 1.0)))
    out = np.zeros_like(a)
    active = r > 0  # zero here means a == 0 or an underflowed root
    s = np.log(r[active])
    aa = a[active]
    for _ in range(max_iter):
        er = np.exp(s)
        ep = np.exp((p - 1.0) * s)
        psi = er - aa + c * ep
        step = psi / (er + c * (p - 1.0) * ep)
        step = np.maximum(step, 0.0)  # rounding can make psi slightly negative at the root
        s = s - step
        if np.all(step <= 1e-15):
            break
    out[active] = np.exp(s)
    return out


# -- solver -------------------------------------------------------------------


@dataclass
class SolverResult:
    coef: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    # certified l1 distance to the minimizer; inf without strong convexity
    error_bound: float = math.inf


class _Smooth:
    """Weighted empirical loss ``sum_i w_i loss(y_i, (X lam)_i)``."""

    def __init__(self, X: np.ndarray, y: np.ndarray, w: np.ndarray, kind: str):
        self.X, self.y, self.w, self.kind = X, y, w, kind
        G = (X * w[:, None]).T @ X
        eig = np.linalg.eigvalsh(G) if G.size else np.zeros(1)
        self.lipschitz = max(loss_curvature_bound(kind) * float(eig[-1]), 1e-12)
        # strong convexity modulus; only the quadratic loss has a global one
        low = float(eig[0])
        self.mu = 2.0 * low if kind == "quadratic" and low > GRAM_RANK_TOL * max(float(eig[-1]), 1.0) else 0.0

    def value(self, lam: np.ndarray) -> float:
        return float(self.w @ loss_values(self.kind, self.y, self.X @ lam))

    def value_grad(self, lam: np.ndarray):
        u = self.X @ lam
        return float(self.w @ loss_values(self.kind, self.y, u)), self.X.T @ (self.w * loss_derivative(self.kind, self.y, u))


def _gradient_mapping(smooth: _Smooth, penalty: PenaltySpec, lam: np.ndarray) -> np.ndarray:
    L = smooth.lipschitz
    _, g = smooth.value_grad(lam)
    return L * (lam - penalty.prox(lam - g / L, 1.0 / L))


def gradient_mapping_residual(smooth: _Smooth, penalty: PenaltySpec, lam: np.ndarray) -> float:
    """``L * ||lam - prox_{1/L}(lam - grad / L)||_inf`` at the design's ``L``.

    Zero exactly at minimizers of the composite objective.
    """
    return float(np.max(np.abs(_gradient_mapping(smooth, penalty, lam)), initial=0.0))


def _stationarity(smooth: _Smooth, penalty: PenaltySpec, lam: np.ndarray) -> tuple[float, float]:
    """Residual and a certified bound on ``||lam - lam*||_1``.

    With ``mu``-strong convexity and gradient mapping ``G`` at step ``1/L``,
    ``||lam - lam*||_2 <= ||G||_2 (1/L + 2/mu)``.
    """
    G = _gradient_mapping(smooth, penalty, lam)
    residual = float(np.max(np.abs(G), initial=0.0))
    if smooth.mu <= 0.0:
        return residual, math.inf
    bound = math.sqrt(G.size) * float(np.linalg.norm(G)) * (1.0 / smooth.lipschitz + 2.0 / smooth.mu)
    return residual, bound


def subgradient_residual(grad: np.ndarray, lam: np.ndarray, epsilon: float) -> float:
    """Distance from ``-grad`` to ``epsilon * d||lam||_1``, in sup norm."""
    on = lam != 0
    r = np.where(on, np.abs(grad + epsilon * np.sign(lam)), np.maximum(np.abs(grad) - epsilon, 0.0))
    return float(r.max(initial=0.0))


def minimize_composite(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    loss_kind: str,
    penalty: PenaltySpec,
    x0: np.ndarray | None = None,
    tol: float = SOLVER_TOL,
    max_iter: int = MAX_ITERS,
    check_every: int = 5,
    coef_tol: float | None = None,
) -> SolverResult:
    """Monotone FISTA with backtracking for ``smooth(lam) + epsilon * pen(lam)``.

    The iterate kept at each step is the better of the proximal point and the
    previous iterate, so the recorded objective never increases; momentum
    still points at a rejected proximal point. Momentum is reset when the
    proximal step opposes it (gradient restart), which does not depend on
    objective differences that rounding hides near the optimum.

    Convergence means residual ``<= tol``; with ``coef_tol`` it additionally
    requires the certified l1 distance to the minimizer to be ``<= coef_tol``,
    which is only possible for strongly convex problems.
    """
    smooth = _Smooth(np.asarray(X, float), np.asarray(y, float), np.asarray(w, float), loss_kind)
    N = smooth.X.shape[1]
    x = np.zeros(N) if x0 is None else np.asarray(x0, dtype=float).copy()
    F = smooth.value(x) + penalty.epsilon * penalty.value(x)
    history = [F]
    yk, t = x.copy(), 1.0
    L = smooth.lipschitz
    residual = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        fy, gy = smooth.value_grad(yk)
        L = max(L * 0.9, 1e-12)
        while True:
            z = penalty.prox(yk - gy / L, 1.0 / L)
            diff = z - yk
            fz = smooth.value(z)
            if fz <= fy + gy @ diff + 0.5 * L * (diff @ diff) + 1e-15 * abs(fy):
                break
            L *= 2.0
        Fz = fz + penalty.epsilon * penalty.value(z)
        x_prev = x
        if Fz <= F:
            x, F = z, Fz
        if (yk - z) @ (z - x_prev) > 0:
            # the step opposes the momentum: restart from the kept iterate
            yk, t = x.copy(), 1.0
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            yk = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
        history.append(F)
        if it % check_every == 0 or it == max_iter:
            residual, bound = _stationarity(smooth, penalty, x)
            if residual <= tol and (coef_tol is None or bound <= coef_tol):
                return SolverResult(x, F, residual, it, True, history, bound)
    residual, bound = _stationarity(smooth, penalty, x)
    ok = residual <= tol and (coef_tol is None or bound <= coef_tol)
    return SolverResult(x, F, residual, it, ok, history, bound)


def _solve(X, y, w, loss_kind, penalty, x0=None, tol=SOLVER_TOL, max_iter=MAX_ITERS, raise_on_failure=True, coef_tol=None):
    if penalty.kind == "L0":
        result = _solve_l0(X, y, w, loss_kind, penalty, tol, max_iter)
    else:
        result = minimize_composite(X, y, w, loss_kind, penalty, x0=x0, tol=tol, max_iter=max_iter, coef_tol=coef_tol)
    if raise_on_failure and not result.converged:
        raise ConvergenceError(
            f"solver stopped after {result.iterations} iterations with residual {result.residual:.3g}", result
        )
    return result


def _solve_l0(X, y, w, loss_kind, penalty, tol, max_iter) -> SolverResult:
    """Exact L0-penalized minimizer by enumerating every support."""
    N = X.shape[1]
    if N > L0_MAX_ATOMS:
        raise ValueError(f"L0 enumeration is limited to N <= {L0_MAX_ATOMS} atoms, got {N}")
    free = PenaltySpec("L1", 0.0)
    best = None
    worst_residual = 0.0
    total_iters = 0
    all_converged = True
    for size in range(N + 1):
        for support in itertools.combinations(range(N), size):
            lam = np.zeros(N)
            if size:
                cols = list(support)
                if loss_kind == "quadratic":
                    sw = np.sqrt(w)
                    coef, *_ = np.linalg.lstsq(X[:, cols] * sw[:, None], y * sw, rcond=None)
                    lam[cols] = coef
                else:
                    sub = minimize_composite(X[:, cols], y, w, loss_kind, free, tol=tol, max_iter=max_iter)
                    total_iters += sub.iterations
                    all_converged &= sub.converged
                    worst_residual = max(worst_residual, sub.residual)
                    lam[cols] = sub.coef
            obj = float(w @ loss_values(loss_kind, y, X @ lam)) + penalty.epsilon * size
            if best is None or obj < best[0]:
                best = (obj, lam)
    return SolverResult(best[1], best[0], worst_residual, total_iters, all_converged, [best[0]])


def penalized_erm(
    dictionary: Dictionary,
    loss: LossSpec,
    penalty: PenaltySpec,
    x0=None,
    tol: float = SOLVER_TOL,
    max_iter: int = MAX_ITERS,
    raise_on_failure: bool = True,
    coef_tol: float | None = None,
) -> SolverResult:
    """Minimize ``P_n loss(f_lam) + epsilon * pen(lam)`` over the sample."""
    n = dictionary.n
    if loss.sample_labels.shape != (n,):
        raise ValueError("sample labels do not match the sample atoms")
    return _solve(
        dictionary.sample_atoms, loss.sample_labels, np.full(n, 1.0 / n), loss.kind, penalty,
        x0=x0, tol=tol, max_iter=max_iter, raise_on_failure=raise_on_failure, coef_tol=coef_tol,
    )


def population_erm(
    dictionary: Dictionary,
    loss: LossSpec,
    penalty: PenaltySpec,
    dist: FiniteSupportDistribution,
    x0=None,
    tol: float = SOLVER_TOL,
    max_iter: int = MAX_ITERS,
    raise_on_failure: bool = True,
    coef_tol: float | None = None,
) -> SolverResult:
    """Minimize ``P loss(f_lam) + epsilon * pen(lam)`` under the exact measure."""
    if dist.m != dictionary.pop_atoms.shape[0] or loss.pop_labels.shape != (dist.m,):
        raise ValueError("distribution, atoms and labels disagree on the support size")
    return _solve(
        dictionary.pop_atoms, loss.pop_labels, dist.probs, loss.kind, penalty,
        x0=x0, tol=tol, max_iter=max_iter, raise_on_failure=raise_on_failure, coef_tol=coef_tol,
    )


def population_risk(dictionary: Dictionary, loss: LossSpec, dist: FiniteSupportDistribution, lam) -> float:
    u = dictionary.pop_atoms @ np.asarray(lam, dtype=float)
    return float(dist.probs @ loss_values(loss.kind, loss.pop_labels, u))


# -- synthetic problems -------------------------------------------------------


@dataclass(frozen=True)
class SparseProblem:
    """Finite population with a sparse linear truth.

    ``dist.labels`` holds the population labels; samples are drawn from
    ``dist`` and carry the same labels.
    """

    dist: FiniteSupportDistribution
    atoms: np.ndarray
    lambda_true: np.ndarray
    loss_kind: str

    @property
    def N(self) -> int:
        return self.atoms.shape[1]

    def population_dictionary(self) -> tuple[Dictionary, LossSpec]:
        """Dictionary whose "sample" is the support itself."""
        y = self.dist.labels
        return Dictionary(self.atoms, self.atoms), LossSpec(self.loss_kind, y, y)

    def draw(self, n: int, seed: int) -> tuple[Dictionary, LossSpec]:
        sample = draw_sample(self.dist, n, seed)
        y = self.dist.labels
        return (
            Dictionary(self.atoms, self.atoms[sample.draws]),
            LossSpec(self.loss_kind, y, y[sample.draws]),
        )


def _weighted_project_out(v: np.ndarray, B: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Remove from the columns of ``v`` their L2(w) projection onto span(B)."""
    if B.shape[1] == 0:
        return v
    sw = np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(B * sw, v * sw, rcond=None)
    return v - B @ coef


def make_sparse_problem(
    rng: np.random.Generator,
    N: int,
    m: int,
    d_star: int,
    loss_kind: str = "quadratic",
    noise: float = 0.5,
    coef_range: tuple[float, float] = (0.5, 1.5),
    exact_sparse: bool = False,
) -> SparseProblem:
    """Random sparse problem on ``m`` equally weighted support points.

    Atoms are uniform on [-1, 1]. The truth has ``d_star`` nonzero entries
    with magnitudes in ``coef_range`` and random signs. Quadratic labels are
    the model plus bounded uniform noise of half-width ``noise``; logistic
    labels are ``sign(f_true)`` flipped with probability ``noise``.

    With ``exact_sparse`` (quadratic only) the off-support atoms are made
    orthogonal in L2(P) to the on-support atoms and the noise orthogonal to
    every atom, then rescaled back into [-1, 1]. The population minimizer is
    then the truth, and every penalized population solution vanishes off the
    true support, so ``gamma_{d_star}`` of it is exactly zero.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss {loss_kind!r}")
    if not 1 <= d_star <= N:
        raise ValueError("need 1 <= d_star <= N")
    if exact_sparse and loss_kind != "quadratic":
        raise ValueError("exact_sparse is only available for the quadratic loss")
    if exact_sparse and m <= N:
        raise ValueError("exact_sparse needs more support points than atoms")
    w = np.full(m, 1.0 / m)
    H = rng.uniform(-1.0, 1.0, size=(m, N))
    support = np.sort(rng.choice(N, size=d_star, replace=False))
    lam = np.zeros(N)
    lam[support] = rng.uniform(*coef_range, size=d_star) * rng.choice([-1.0, 1.0], size=d_star)

    if exact_sparse:
        off = np.setdiff1d(np.arange(N), support)
        H[:, off] = _weighted_project_out(H[:, off], H[:, support], w)
        H[:, off] /= np.abs(H[:, off]).max(axis=0)
        e = rng.uniform(-noise, noise, size=m)
        e = _weighted_project_out(e[:, None], H, w)[:, 0]
        if np.abs(e).max() > 0:
            e *= noise / np.abs(e).max()
        y = H @ lam + e
    elif loss_kind == "quadratic":
        y = H @ lam + rng.uniform(-noise, noise, size=m)
    else:
        y = np.where(H @ lam >= 0, 1.0, -1.0)
        flip = rng.random(m) < noise
        y[flip] = -y[flip]
    return SparseProblem(FiniteSupportDistribution(w, labels=y), H, lam, loss_kind)


# -- audits -------------------------------------------------------------------


def sparsity_bound(d: int, A: float, N: int, n: int) -> float:
    return math.sqrt((d + A * math.log(N)) / n)


def epsilon_for(rule: str, D: float, d: int, A: float, N: int, n: int) -> float:
    """``D * sqrt((d + A ln N)/n)`` for ``"one_sided"``; times ``ln N`` for ``"two_sided"``."""
    base = D * sparsity_bound(d, A, N, n)
    if rule == "one_sided":
        return base
    if rule == "two_sided":
        return base * math.log(N)
    raise ValueError(f"unknown epsilon rule {rule!r}")


class SparsityReport(NamedTuple):
    n: int
    rep: int
    d: int
    A: float
    epsilon: float
    gamma_true: float
    gamma_hat: float
    bound: float
    ratio: float
    gamma_true_zero: bool
    converged: bool
    residual: float


SPARSITY_CSV_COLUMNS = list(SparsityReport._fields)


def sparsity_audit(
    problem: SparseProblem,
    d: int,
    A: float,
    D: float,
    sample_sizes: Sequence[int],
    reps: int,
    seed: int,
    rule: str = "one_sided",
    penalty_kind: str = "Lp",
    tol: float = SOLVER_TOL,
    max_iter: int = MAX_ITERS,
    zero_tol: float = ZERO_TOL,
) -> list[SparsityReport]:
    """Compare sparsity of the sample and population penalized solutions.

    For each sample size the population solution is computed once at that
    size's ``epsilon``; replication ``r`` at size ``n`` draws its sample with
    generator keys ``(seed, n, r)``. Solver failures are kept as rows with
    ``converged = False``. ``gamma_true_zero`` uses ``zero_tol`` because the
    ``Lp`` proximal map only reaches exact zeros from exact zeros.
    """
    if A < 1:
        raise ValueError("A must be >= 1")
    N = problem.N
    if not 0 <= d <= N:
        raise ValueError("d out of range")
    pop_dict, pop_loss = problem.population_dictionary()
    rows = []
    for n in sample_sizes:
        eps = epsilon_for(rule, D, d, A, N, n)
        penalty = _audit_penalty(penalty_kind, eps, N)
        pop = population_erm(pop_dict, pop_loss, penalty, problem.dist, tol=tol, max_iter=max_iter, raise_on_failure=False)
        g_true = gamma_d(pop.coef, d)
        bound = sparsity_bound(d, A, N, n)
        for r in range(reps):
            sample_seed = int(np.random.SeedSequence([int(seed), int(n), r]).generate_state(1, np.uint64)[0])
            dictionary, loss = problem.draw(int(n), sample_seed)
            fit = penalized_erm(dictionary, loss, penalty, tol=tol, max_iter=max_iter, raise_on_failure=False)
            g_hat = gamma_d(fit.coef, d)
            rows.append(
                SparsityReport(
                    int(n), r, d, float(A), eps, g_true, g_hat, bound, g_hat / bound,
                    g_true <= zero_tol, bool(fit.converged and pop.converged), max(fit.residual, pop.residual),
                )
            )
    return rows


def _audit_penalty(kind: str, eps: float, N: int) -> PenaltySpec:
    if kind == "Lp":
        return PenaltySpec.lp_default(eps, N)
    return PenaltySpec(kind, eps)


class SparsitySummary(NamedTuple):
    n: int
    median_gamma_hat: float
    median_gamma_true: float
    ratio_quantile: float
    failures: int


def summarize_sparsity(rows: Sequence[SparsityReport], N: int, A: float) -> list[SparsitySummary]:
    """Per sample size: medians and the empirical ``1 - N**-A`` quantile of ``gamma_hat / bound``."""
    level = 1.0 - N ** (-A)
    out = []
    for n in sorted({r.n for r in rows}):
        sel = [r for r in rows if r.n == n]
        out.append(
            SparsitySummary(
                n,
                float(np.median([r.gamma_hat for r in sel])),
                float(np.median([r.gamma_true for r in sel])),
                float(np.quantile([r.ratio for r in sel], level)),
                sum(not r.converged for r in sel),
            )
        )
    return out


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``ln y`` against ``ln x``."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ValueError("log-log fit needs positive values")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def fit_two_sided_constants(rows: Sequence[SparsityReport], C_grid=(0.5, 1.0, 2.0, 4.0)) -> list[tuple[float, float]]:
    """For each ``C``, the smallest ``K`` making both two-sided bounds hold on every row."""
    gh = np.array([r.gamma_hat for r in rows])
    gt = np.array([r.gamma_true for r in rows])
    b = np.array([r.bound for r in rows])
    fits = []
    for C in C_grid:
        K = np.maximum((gh - C * gt) / b, (gt - C * gh) / b).max(initial=0.0)
        fits.append((float(C), float(max(K, 0.0))))
    return fits


def write_sparsity_csv(rows: Sequence[SparsityReport], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SPARSITY_CSV_COLUMNS)
    for r in sorted(rows, key=lambda r: (r.n, r.rep)):
        writer.writerow([repr(v) if isinstance(v, float) else (int(v) if isinstance(v, bool) else v) for v in r])


class RecoveryMetrics(NamedTuple):
    excess: float
    l1dist: float
    d_star: int
    independent: bool
    min_singular: float
    rate_excess: float
    rate_l1: float


def recovery_metrics(
    dictionary: Dictionary,
    loss: LossSpec,
    dist: FiniteSupportDistribution,
    lambda_hat,
    lambda_zero,
    lambda_eps=None,
    zero_tol: float = ZERO_TOL,
) -> RecoveryMetrics:
    """Excess population risk and l1 distance of ``lambda_hat`` to ``lambda_zero``.

    ``d_star`` is the size of the support of ``lambda_eps`` (entries above
    ``zero_tol``; defaults to ``lambda_zero``). Linear independence of those
    atoms is judged by the smallest singular value of the restricted
    L2(P) design against ``GRAM_RANK_TOL``. Reference scales ``d*/n`` and
    ``sqrt(d*/n)`` use the sample size of ``dictionary``.
    """
    lam_hat = np.asarray(lambda_hat, float)
    lam0 = np.asarray(lambda_zero, float)
    ref = lam0 if lambda_eps is None else np.asarray(lambda_eps, float)
    support = np.flatnonzero(np.abs(ref) > zero_tol)
    if support.size:
        B = dictionary.pop_atoms[:, support] * np.sqrt(dist.probs)[:, None]
        smin = float(np.linalg.svd(B, compute_uv=False).min())
    else:
        smin = math.inf
    excess = population_risk(dictionary, loss, dist, lam_hat) - population_risk(dictionary, loss, dist, lam0)
    n = dictionary.n
    return RecoveryMetrics(
        excess, float(np.abs(lam_hat - lam0).sum()), int(support.size), smin > GRAM_RANK_TOL, smin,
        support.size / n, math.sqrt(support.size / n),
    )

