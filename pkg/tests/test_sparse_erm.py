import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import hadamard
from scipy.optimize import brentq

from riskmin.core_model import FiniteSupportDistribution, make_rng
from riskmin.sparse_erm import (
    L0_MAX_ATOMS,
    SOLVER_TOL,
    SPARSITY_CSV_COLUMNS,
    ZERO_TOL,
    ConvergenceError,
    Dictionary,
    LossSpec,
    PenaltySpec,
    epsilon_for,
    f_eval,
    fit_two_sided_constants,
    gamma_d,
    loglog_slope,
    loss_derivative,
    loss_values,
    lp_norm,
    make_sparse_problem,
    p_default,
    penalized_erm,
    population_erm,
    recovery_metrics,
    sparsity_audit,
    subgradient_residual,
    summarize_sparsity,
    write_sparsity_csv,
)


def random_coefficients(rng, N, size):
    """Mix of dense Gaussian, sparse and heavy-tailed coefficient vectors."""
    out = []
    for i in range(size):
        kind = i % 3
        if kind == 0:
            lam = rng.standard_normal(N)
        elif kind == 1:
            lam = np.zeros(N)
            k = int(rng.integers(1, N + 1))
            lam[rng.choice(N, k, replace=False)] = rng.standard_normal(k)
        else:
            lam = rng.standard_cauchy(N)
        out.append(lam)
    return out


def quadratic_problem(rng, n, N, noise=0.3):
    X = rng.uniform(-1, 1, size=(n, N))
    y = X @ rng.standard_normal(N) + noise * rng.standard_normal(n)
    return Dictionary(X, X), LossSpec("quadratic", y, y)


def orthonormal_problem(rng, N=5):
    X = hadamard(8).astype(float)[:, 1 : N + 1]  # X^T X / 8 = I
    y = rng.standard_normal(8)
    return Dictionary(X, X), LossSpec("quadratic", y, y), X, y


def soft_threshold(b, t):
    return np.sign(b) * np.maximum(np.abs(b) - t, 0.0)


# -- evaluation, norms, sparsity function ----------------------------------


def test_f_eval(rng):
    H = rng.uniform(-1, 1, size=(6, 4))
    D = Dictionary(H, H[:3])
    assert f_eval(D, np.eye(4)[2], 1) == H[1, 2]
    assert f_eval(D, np.zeros(4), 0, table="pop") == 0.0
    lam = rng.standard_normal(4)
    naive = 0.0
    for j in range(4):
        naive += lam[j] * H[5, j]
    assert f_eval(D, lam, 5, table="pop") == pytest.approx(naive, abs=1e-14)
    with pytest.raises(IndexError):
        f_eval(D, lam, 3)
    with pytest.raises(ValueError):
        Dictionary(np.full((2, 2), 1.5), np.zeros((1, 2)))


def test_p_default():
    assert p_default(3) == pytest.approx(1 + 1 / 1.0986122886681098, rel=1e-15)
    ps = [p_default(N) for N in (2, 3, 10, 100, 10**6)]
    assert all(a > b for a, b in zip(ps, ps[1:]))
    assert all(1 < p <= 1 + 1 / math.log(2) for p in ps)
    with pytest.raises(ValueError):
        p_default(1)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**32 - 1))
def test_norm_sandwich(N, seed):
    p = p_default(N)
    for lam in random_coefficients(np.random.default_rng(seed), N, 3):
        lp, l1 = lp_norm(lam, p), np.abs(lam).sum()
        assert lp <= l1
        assert l1 <= math.exp(1 / p) * lp * (1 + 1e-12)
        assert l1 <= math.e * lp


def test_gamma_d_examples():
    lam = [3.0, -1.0, 2.0]
    assert gamma_d(lam, 1) == 3.0
    assert gamma_d(lam, 0) == 6.0
    assert gamma_d(lam, 3) == 0.0
    assert gamma_d([0.0, 5.0, 0.0], 1) == 0.0
    with pytest.raises(ValueError):
        gamma_d(lam, 4)


vectors = st.lists(st.floats(-100, 100), min_size=1, max_size=12)


@settings(max_examples=150, deadline=None)
@given(vectors, st.data())
def test_gamma_d_properties(values, data):
    lam = np.array(values)
    N = lam.size
    other = np.array(data.draw(st.lists(st.floats(-100, 100), min_size=N, max_size=N)))
    d = data.draw(st.integers(0, N))
    g = [gamma_d(lam, k) for k in range(N + 1)]
    assert g[0] == pytest.approx(np.abs(lam).sum())
    assert g[-1] == 0.0
    assert all(a >= b for a, b in zip(g, g[1:]))
    assert (g[d] == 0.0) == (np.count_nonzero(lam) <= d)
    perm = np.array(data.draw(st.permutations(range(N))))
    assert gamma_d(lam[perm], d) == pytest.approx(g[d], abs=1e-9)
    assert abs(gamma_d(other, d) - g[d]) <= np.abs(other - lam).sum() * (1 + 1e-12) + 1e-9


# -- losses and proximal maps -------------------------------------------------


@pytest.mark.parametrize("kind", ["quadratic", "logistic"])
def test_loss_derivative_matches_finite_differences(kind):
    y = np.array([1.0, -1.0, 1.0, -1.0])
    u = np.array([-2.0, -0.3, 0.7, 3.0])
    h = 1e-6
    fd = (loss_values(kind, y, u + h) - loss_values(kind, y, u - h)) / (2 * h)
    assert np.allclose(loss_derivative(kind, y, u), fd, atol=1e-8)


def test_logistic_labels_must_be_signs():
    with pytest.raises(ValueError):
        LossSpec("logistic", np.array([0.5]), np.array([1.0]))


def test_lp_prox_matches_root_finder(rng):
    for _ in range(200):
        a = 10 ** rng.uniform(-6, 1)
        tau = 10 ** rng.uniform(-6, 0)
        p = p_default(int(rng.integers(2, 2000)))
        pen = PenaltySpec("Lp", 1.0, p)
        r = float(np.abs(pen.prox(np.array([a]), tau))[0])
        c = tau * p

        def phi(x):
            return x - a + c * x ** (p - 1)

        root = brentq(phi, 0.0, a, xtol=1e-300, rtol=1e-15, maxiter=500)
        assert r == pytest.approx(root, rel=1e-12, abs=1e-300)


def test_penalty_validation():
    with pytest.raises(ValueError):
        PenaltySpec("L1", -1.0)
    with pytest.raises(ValueError):
        PenaltySpec("Lp", 0.1, 1.0)
    with pytest.raises(ValueError):
        PenaltySpec("L2", 0.1)


# -- solver --------------------------------------------------------------------


@pytest.mark.parametrize("eps", [0.0, 0.05, 0.3, 1.0])
def test_l1_soft_threshold_oracle(rng, eps):
    D, loss, X, y = orthonormal_problem(rng)
    res = penalized_erm(D, loss, PenaltySpec("L1", eps))
    # objective is |lam|^2 - 2 b.lam + const + eps |lam|_1 per coordinate
    expect = soft_threshold(X.T @ y / 8, eps / 2)
    assert np.max(np.abs(res.coef - expect)) <= 1e-6


def test_small_epsilon_recovers_least_squares(rng):
    D, loss = quadratic_problem(rng, 60, 6)
    X, y = D.sample_atoms, loss.sample_labels
    ls = np.linalg.solve(X.T @ X, X.T @ y)
    for kind in ("L1", "Lp"):
        pen = PenaltySpec("L1", 1e-12) if kind == "L1" else PenaltySpec.lp_default(1e-12, 6)
        res = penalized_erm(D, loss, pen)
        assert np.abs(res.coef - ls).sum() <= 1e-5


def test_large_epsilon_gives_zero(rng):
    D, loss = quadratic_problem(rng, 40, 5)
    X, y = D.sample_atoms, loss.sample_labels
    grad0 = -2 * X.T @ y / 40
    eps = float(np.abs(grad0).max()) * 1.01
    res = penalized_erm(D, loss, PenaltySpec("L1", eps))
    assert np.all(res.coef == 0)
    assert subgradient_residual(grad0, res.coef, eps) == 0.0


def test_l1_solution_satisfies_subgradient_optimality(rng):
    D, loss = quadratic_problem(rng, 50, 8)
    eps = 0.2
    res = penalized_erm(D, loss, PenaltySpec("L1", eps))
    X, y = D.sample_atoms, loss.sample_labels
    grad = -2 * X.T @ (y - X @ res.coef) / 50
    assert subgradient_residual(grad, res.coef, eps) <= 1e-6


def test_lp_two_initializations_agree(rng):
    D, loss = quadratic_problem(rng, 80, 10)
    pen = PenaltySpec.lp_default(0.05, 10)
    a = penalized_erm(D, loss, pen, coef_tol=SOLVER_TOL)
    b = penalized_erm(D, loss, pen, x0=5 * rng.standard_normal(10), coef_tol=SOLVER_TOL)
    assert np.abs(a.coef - b.coef).sum() <= 10 * SOLVER_TOL


@pytest.mark.parametrize("kind", ["L1", "Lp"])
def test_error_bound_dominates_true_distance(rng, kind):
    for N in (4, 15, 30):
        D, loss = quadratic_problem(rng, 50, N)
        pen = PenaltySpec("L1", 0.05) if kind == "L1" else PenaltySpec.lp_default(0.05, N)
        ref = penalized_erm(D, loss, pen, coef_tol=1e-9)
        loose = penalized_erm(D, loss, pen, tol=1e-4)
        assert loose.error_bound >= np.abs(loose.coef - ref.coef).sum() - ref.error_bound


def test_error_bound_is_infinite_without_strong_convexity(rng):
    D, loss = quadratic_problem(rng, 5, 10)
    res = penalized_erm(D, loss, PenaltySpec("L1", 0.1))
    assert res.error_bound == math.inf
    bad = penalized_erm(D, loss, PenaltySpec("L1", 0.1), coef_tol=1e-8, max_iter=200, raise_on_failure=False)
    assert not bad.converged


def test_objective_history_is_nonincreasing(rng):
    D, loss = quadratic_problem(rng, 30, 12)
    for pen in (PenaltySpec("L1", 0.1), PenaltySpec.lp_default(0.1, 12)):
        res = penalized_erm(D, loss, pen, x0=rng.standard_normal(12))
        assert all(b <= a for a, b in zip(res.history, res.history[1:]))
        assert res.converged and res.residual <= SOLVER_TOL


def test_logistic_fit_converges(rng):
    X = rng.uniform(-1, 1, size=(100, 6))
    y = np.where(X @ rng.standard_normal(6) + 0.3 * rng.standard_normal(100) >= 0, 1.0, -1.0)
    D, loss = Dictionary(X, X), LossSpec("logistic", y, y)
    res = penalized_erm(D, loss, PenaltySpec("L1", 0.02))
    grad = X.T @ loss_derivative("logistic", y, X @ res.coef) / 100
    assert subgradient_residual(grad, res.coef, 0.02) <= 1e-6


def test_non_convergence_is_reported(rng):
    D, loss = quadratic_problem(rng, 30, 8)
    with pytest.raises(ConvergenceError) as info:
        penalized_erm(D, loss, PenaltySpec("L1", 1e-3), max_iter=2)
    assert info.value.result.residual > SOLVER_TOL
    res = penalized_erm(D, loss, PenaltySpec("L1", 1e-3), max_iter=2, raise_on_failure=False)
    assert not res.converged


def test_l0_matches_support_enumeration_oracle(rng):
    D, loss = quadratic_problem(rng, 40, 5, noise=1.0)
    X, y = D.sample_atoms, loss.sample_labels
    for eps in (0.0, 0.05, 0.3, 100.0):
        best = None
        for k in range(6):
            for S in itertools.combinations(range(5), k):
                lam = np.zeros(5)
                if S:
                    XS = X[:, list(S)]
                    lam[list(S)] = np.linalg.solve(XS.T @ XS, XS.T @ y)
                obj = np.mean((y - X @ lam) ** 2) + eps * k
                if best is None or obj < best[0] - 1e-12:
                    best = (obj, lam)
        res = penalized_erm(D, loss, PenaltySpec("L0", eps))
        assert res.objective == pytest.approx(best[0], abs=1e-10)
        assert np.allclose(res.coef, best[1], atol=1e-8)
    big = Dictionary(np.zeros((2, L0_MAX_ATOMS + 1)), np.zeros((2, L0_MAX_ATOMS + 1)))
    with pytest.raises(ValueError):
        penalized_erm(big, LossSpec("quadratic", np.zeros(2), np.zeros(2)), PenaltySpec("L0", 0.1))


def test_population_and_sample_agree_on_the_full_support(rng):
    m, N = 30, 6
    H = rng.uniform(-1, 1, size=(m, N))
    y = rng.standard_normal(m)
    D, loss = Dictionary(H, H), LossSpec("quadratic", y, y)
    pen = PenaltySpec.lp_default(0.03, N)
    a = penalized_erm(D, loss, pen)
    b = population_erm(D, loss, pen, FiniteSupportDistribution.uniform(m))
    assert np.abs(a.coef - b.coef).sum() <= 10 * SOLVER_TOL


# -- synthetic problems, audits, recovery --------------------------------------


@pytest.mark.parametrize("kind", ["L1", "Lp"])
def test_exact_sparse_population_solution_is_sparse(kind):
    prob = make_sparse_problem(make_rng(8), 20, 60, 3, exact_sparse=True)
    D, loss = prob.population_dictionary()
    pen = PenaltySpec.lp_default(0.05, 20) if kind == "Lp" else PenaltySpec("L1", 0.05)
    res = population_erm(D, loss, pen, prob.dist)
    assert gamma_d(res.coef, 3) <= ZERO_TOL
    assert np.abs(prob.atoms).max() <= 1.0


def test_problem_generator_guards():
    with pytest.raises(ValueError):
        make_sparse_problem(make_rng(1), 10, 5, 2, exact_sparse=True)
    with pytest.raises(ValueError):
        make_sparse_problem(make_rng(1), 10, 50, 2, loss_kind="logistic", exact_sparse=True)
    with pytest.raises(ValueError):
        make_sparse_problem(make_rng(1), 10, 50, 11)


def test_epsilon_rules():
    base = 0.5 * math.sqrt((3 + math.log(50)) / 200)
    assert epsilon_for("one_sided", 0.5, 3, 1, 50, 200) == pytest.approx(base)
    assert epsilon_for("two_sided", 0.5, 3, 1, 50, 200) == pytest.approx(base * math.log(50))
    with pytest.raises(ValueError):
        epsilon_for("other", 0.5, 3, 1, 50, 200)


def test_small_sparsity_audit():
    prob = make_sparse_problem(make_rng(2), 10, 40, 2, exact_sparse=True)
    rows = sparsity_audit(prob, 2, 1.0, 0.5, [50, 100], 3, seed=4)
    assert rows == sparsity_audit(prob, 2, 1.0, 0.5, [50, 100], 3, seed=4)
    assert len(rows) == 6
    assert all(r.gamma_true_zero and r.converged for r in rows)
    assert all(r.gamma_hat >= 0 and r.bound > 0 for r in rows)
    summary = summarize_sparsity(rows, 10, 1.0)
    assert [s.n for s in summary] == [50, 100]
    fits = fit_two_sided_constants(rows)
    assert all(k >= 0 for _, k in fits)
    buf = io.StringIO()
    write_sparsity_csv(rows, buf)
    assert buf.getvalue().splitlines()[0].split(",") == SPARSITY_CSV_COLUMNS


def test_loglog_slope():
    xs = np.array([10.0, 100.0, 1000.0])
    assert loglog_slope(xs, 3 * xs**-0.5) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        loglog_slope(xs, [1.0, 0.0, 1.0])


def test_recovery_metrics():
    prob = make_sparse_problem(make_rng(6), 8, 40, 2)
    D, loss = prob.population_dictionary()
    lam0 = population_erm(D, loss, PenaltySpec("L1", 0.0), prob.dist).coef
    same = recovery_metrics(D, loss, prob.dist, lam0, lam0)
    assert same.excess == 0.0 and same.l1dist == 0.0
    assert same.d_star == 8 and same.independent
    other = recovery_metrics(D, loss, prob.dist, lam0 + 0.1, lam0)
    assert other.excess >= -10 * SOLVER_TOL
    assert other.l1dist == pytest.approx(0.8)
