import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psr_gmti.forward import Measurements
from psr_gmti.solvers import (
    LineSearchError,
    SolverConfig,
    SolverDivergedError,
    admm,
    backtracking_line_search,
    fista,
    fista_momentum,
    nonconvex_pgd,
    pgd,
    solve,
)

SHAPE, VS = (5, 7), 2


def random_G(seed, shape=SHAPE):
    return np.random.default_rng(seed).standard_normal(shape)


def feasible(res):
    q_s, q_nu, vs = res.q_s, res.q_nu, res.stationary_index
    return ((q_s >= 0).all() and (q_nu >= 0).all() and not q_nu[vs].any()
            and not np.delete(q_s, vs, axis=0).any())


class OrthonormalStub:
    """Operator with orthonormal columns, so F^H F = I exactly."""

    def __init__(self, shape, P, seed=0):
        rng = np.random.default_rng(seed)
        n = shape[0] * shape[1]
        A = rng.standard_normal((P, n)) + 1j * rng.standard_normal((P, n))
        self.K, _ = np.linalg.qr(A)
        self.shape = shape
        self.stationary_index = shape[0] // 2

    def forward(self, Q):
        return self.K @ np.asarray(Q).reshape(-1)

    def adjoint(self, d):
        return (self.K.conj().T @ d).reshape(self.shape)

    def normal(self, Q):
        return self.adjoint(self.forward(Q))


# --- building blocks --------------------------------------------------------------


def test_fista_momentum_sequence():
    t = [1.0]
    for _ in range(2):
        t.append(fista_momentum(t[-1]))
    phi = (1 + np.sqrt(5)) / 2
    # t1^2 = phi + 1, so t2 = (1 + sqrt(5 + 4 phi)) / 2
    np.testing.assert_allclose(t, [1.0, phi, (1 + np.sqrt(5 + 4 * phi)) / 2], rtol=1e-12)


def test_line_search_armijo_example():
    f = lambda x: float(np.sum(x ** 2))
    g = lambda x: 2 * x
    # alpha = 1 overshoots to -1 (no decrease); alpha = 0.5 lands on the minimum
    assert backtracking_line_search(f, g, np.array([1.0]), 1.0) == 0.5
    assert backtracking_line_search(f, g, np.array([1.0]), 0.4) == 0.4
    assert backtracking_line_search(f, g, np.array([1.0]), 4.0, beta=0.25) == 0.25


def test_line_search_prox_example():
    f = lambda x: 0.5 * float(np.sum(x ** 2))
    step = lambda a: np.maximum(np.array([2.0]) - a * 2.0, 0.0)
    # upper bound f(x+) <= f(x) + g (x+ - x) + (x+ - x)^2 / (2a) holds for a <= 1
    assert backtracking_line_search(f, lambda x: x, np.array([2.0]), 8.0, step=step) == 1.0


def test_line_search_failures():
    f = lambda x: float(np.sum(x ** 2))
    with pytest.raises(LineSearchError):
        backtracking_line_search(f, lambda x: -2 * x, np.array([1.0]), 1.0, alpha_min=1e-3)
    with pytest.raises(ValueError):
        backtracking_line_search(f, lambda x: 2 * x, np.array([1.0]), 0.0)


def test_config_validation():
    SolverConfig().validate("pgd")
    for bad in (dict(lam=-1), dict(r=0), dict(delta=-1), dict(max_iters=0),
                dict(gradient_mode="fast"), dict(threshold_convention="x"),
                dict(armijo_beta=1.0), dict(alpha0=0.0), dict(check_every=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad).validate()
    with pytest.raises(ValueError):
        SolverConfig(k_cardinality=3).validate("pgd")
    with pytest.raises(ValueError):
        SolverConfig().validate("nonconvex")
    with pytest.raises(ValueError):
        SolverConfig(k_cardinality=-1).validate("nonconvex")
    with pytest.raises(ValueError):
        SolverConfig().validate("sgd")
    with pytest.raises(ValueError):
        solve("sgd", None, None, SolverConfig(), G=random_G(0), stationary_index=VS)


def test_threshold_conventions():
    assert SolverConfig(lam=0.2).threshold(0.5) == 0.4
    assert SolverConfig(lam=0.2, threshold_convention="standard").threshold(0.5) == 0.1
    assert SolverConfig(lam=0.2).threshold(1.0) == SolverConfig(
        lam=0.2, threshold_convention="standard").threshold(1.0)


# --- closed-form first iterations ---------------------------------------------------------


def test_pgd_first_iterate_closed_form():
    G = random_G(1)
    res = pgd(None, None, SolverConfig(lam=0.3, max_iters=1), G=G, stationary_index=VS)
    # from zero with r = alpha = 1 the gradient step lands on G
    np.testing.assert_allclose(res.q_s[VS], np.maximum(G[VS], 0))
    want = np.maximum(G - 0.3, 0)
    want[VS] = 0
    np.testing.assert_allclose(res.q_nu, want)
    assert res.step_sizes[0] == 1.0


def test_admm_first_iterate_closed_form():
    G = random_G(2)
    r, lam = 2.0, 0.3
    res = admm(None, None, SolverConfig(lam=lam, r=r, max_iters=1), G=G, stationary_index=VS)
    Q = G / (1 + r)
    np.testing.assert_allclose(res.q_s[VS], np.maximum(Q[VS], 0))
    want = np.maximum(Q - lam / r, 0)
    want[VS] = 0
    np.testing.assert_allclose(res.q_nu, want)
    assert res.extras["primal_residual"][0] == pytest.approx(
        np.linalg.norm(Q - res.q_s - res.q_nu))


def test_huge_lambda_gives_no_movers():
    G = random_G(3)
    for fn in (pgd, fista, admm):
        res = fn(None, None, SolverConfig(lam=1e6, max_iters=20), G=G, stationary_index=VS)
        assert not res.q_nu.any()


def test_zero_data_gives_zero(tiny_op):
    d = np.zeros(tiny_op.P, dtype=complex)
    for name in ("pgd", "fista", "admm"):
        res = solve(name, d, tiny_op, SolverConfig(max_iters=5, gradient_mode="exact"))
        assert not res.total.any()
        assert res.converged


# --- properties ---------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12), st.floats(0, 2),
       st.sampled_from(["pgd", "fista", "admm", "nonconvex"]))
def test_every_iterate_is_feasible(seed, iters, lam, name):
    G = random_G(seed)
    k = 4 if name == "nonconvex" else None
    cfg = SolverConfig(lam=lam, max_iters=iters, k_cardinality=k)
    res = solve(name, None, None, cfg, G=G, stationary_index=VS)
    assert res.iterations == iters
    assert feasible(res)
    if name == "nonconvex":
        assert np.count_nonzero(res.q_nu) <= 4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 2), st.sampled_from(["paper", "standard"]),
       st.floats(0.1, 4.0))
def test_pgd_objective_nonincreasing(seed, lam, conv, alpha0):
    cfg = SolverConfig(lam=lam, max_iters=15, threshold_convention=conv, alpha0=alpha0)
    obj = pgd(None, None, cfg, G=random_G(seed), stationary_index=VS).objective_history
    assert np.all(np.diff(obj) <= 1e-10 * np.maximum(1.0, np.abs(obj[:-1])))


def test_exact_objective_nonincreasing(tiny_op, rng):
    Q = rng.random(tiny_op.shape)
    d = tiny_op.forward(Q) + 0.1 * (rng.standard_normal(tiny_op.P) + 0j)
    cfg = SolverConfig(lam=0.05, max_iters=30, gradient_mode="exact", threshold_convention="standard")
    obj = pgd(d, tiny_op, cfg).objective_history
    assert np.all(np.diff(obj) <= 1e-10 * np.abs(obj[:-1]))


def test_fista_without_momentum_is_pgd():
    G = random_G(4)
    cfg = SolverConfig(lam=0.2, max_iters=25)
    a = pgd(None, None, cfg, G=G, stationary_index=VS)
    b = fista(None, None, cfg, G=G, stationary_index=VS, momentum=False)
    np.testing.assert_array_equal(a.q_s, b.q_s)
    np.testing.assert_array_equal(a.q_nu, b.q_nu)


@pytest.mark.parametrize("name", ["pgd", "fista", "admm"])
def test_orthonormal_operator_makes_modes_agree(name):
    op = OrthonormalStub(SHAPE, 60)
    rng = np.random.default_rng(5)
    d = op.forward(rng.random(SHAPE)) + 0.05 * rng.standard_normal(60)
    base = dict(lam=0.1, max_iters=30, threshold_convention="standard")
    a = solve(name, d, op, SolverConfig(**base))
    b = solve(name, d, op, SolverConfig(gradient_mode="exact", cg_tol=1e-12, **base))
    np.testing.assert_allclose(a.total, b.total, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(a.objective_history, b.objective_history, rtol=1e-8, atol=1e-10)


# --- histories and stopping -----------------------------------------------------------------


def test_residual_checked_every_k_in_approximate_mode(tiny_op, rng):
    d = tiny_op.forward(rng.random(tiny_op.shape))
    res = pgd(d, tiny_op, SolverConfig(max_iters=12, check_every=5))
    checked = np.flatnonzero(np.isfinite(res.residual_history)) + 1
    assert checked.tolist() == [5, 10, 12]
    exact = pgd(d, tiny_op, SolverConfig(max_iters=12, gradient_mode="exact"))
    assert np.isfinite(exact.residual_history).all()


def test_delta_stops_early(tiny_op, rng):
    d = tiny_op.forward(rng.random(tiny_op.shape))
    res = pgd(d, tiny_op, SolverConfig(max_iters=100, gradient_mode="exact", delta=1e9))
    assert res.iterations == 1 and res.converged


def test_history_csv(tmp_path, tiny_op, rng):
    d = tiny_op.forward(rng.random(tiny_op.shape))
    res = pgd(Measurements(d, 8, 4), tiny_op, SolverConfig(max_iters=3, check_every=2),
              truth=np.zeros(tiny_op.shape))
    res.save_history(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual,error,wall_ms"
    assert len(lines) == 4
    assert lines[1].split(",")[1] == ""  # residual not evaluated at iteration 1
    assert all(line.split(",")[2] for line in lines[1:])


def test_divergence_is_reported():
    G = random_G(6)
    G[0, 0] = np.nan
    with pytest.raises(SolverDivergedError):
        pgd(None, None, SolverConfig(max_iters=3, line_search=False), G=G, stationary_index=VS)


def test_missing_inputs():
    with pytest.raises(ValueError):
        pgd(None, None, SolverConfig(), G=random_G(0))
    with pytest.raises(ValueError):
        pgd(None, None, SolverConfig(gradient_mode="exact"), G=random_G(0), stationary_index=VS)


# --- toy recovery ---------------------------------------------------------------------------------


def test_admm_primal_residual_vanishes(toy_problem, toy_op):
    _, truth, d = toy_problem
    cfg = SolverConfig(lam=1e-3, gradient_mode="exact", threshold_convention="standard")
    res = admm(d, toy_op, cfg, truth=truth)
    assert res.extras["primal_residual"][-1] < 1e-6


def test_nonconvex_cardinality(toy_problem, toy_op):
    _, truth, d = toy_problem
    n_true = np.count_nonzero(truth.q_nu)
    for k in (0, n_true - 1, n_true):
        cfg = SolverConfig(k_cardinality=k, max_iters=50)
        res = nonconvex_pgd(d, toy_op, cfg)
        assert np.count_nonzero(res.q_nu) <= k
        assert feasible(res)
    # with k equal to the true count the support is found exactly
    np.testing.assert_array_equal(res.q_nu > 0, truth.q_nu > 0)
