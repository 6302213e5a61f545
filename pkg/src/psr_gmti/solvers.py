"""Recovery of the stationary and moving PSR components.

All solvers minimize ``lam * ||Qnu||_1 + r/2 * ||F(Qs + Qnu) - d||^2``
with ``Qs`` confined to the zero-velocity row, ``Qnu`` to the other rows,
and both nonnegative (``nonconvex_pgd`` swaps the l1 term for a cardinality
bound). In ``approximate`` gradient mode ``F^H F`` is replaced by the
identity, so after the one-off backprojection ``G = Re(F^H d)`` every
iteration costs ``O(MN)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator as _ScipyOperator
from scipy.sparse.linalg import cg

from .forward import LiftedOperator, Measurements
from .psr import (
    PsrDecomposition,
    hard_threshold_topk,
    project_moving,
)

GRADIENT_MODES = ("approximate", "exact")
THRESHOLD_CONVENTIONS = ("paper", "standard")
SOLVERS = ("pgd", "fista", "admm", "nonconvex")


class SolverDivergedError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration


class LineSearchError(RuntimeError):
    """Backtracking shrank the step below ``alpha_min``."""


@dataclass
class SolverConfig:
    """Tuning knobs shared by all solvers.

    ``threshold_convention`` selects the soft-threshold level for step size
    ``alpha``: ``"paper"`` uses ``lam / alpha`` and ``"standard"`` uses
    ``lam * alpha`` (the ISTA prox). They agree when ``alpha = 1``.
    """

    lam: float = 0.2
    r: float = 1.0
    t0: float = 1.0
    alpha0: Optional[float] = None
    delta: float = 0.0
    max_iters: int = 100
    gradient_mode: str = "approximate"
    k_cardinality: Optional[int] = None
    armijo_beta: float = 0.5
    armijo_c: float = 1e-4
    alpha_min: float = 1e-12
    line_search: bool = True
    check_every: int = 10
    threshold_convention: str = "paper"
    cg_tol: float = 1e-8
    cg_maxiter: int = 200

    def validate(self, solver: Optional[str] = None) -> "SolverConfig":
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.threshold_convention not in THRESHOLD_CONVENTIONS:
            raise ValueError(f"threshold_convention must be one of {THRESHOLD_CONVENTIONS}")
        if not 0 < self.armijo_beta < 1:
            raise ValueError("armijo_beta must lie in (0, 1)")
        if self.alpha0 is not None and self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")
        if solver is not None:
            if solver not in SOLVERS:
                raise ValueError(f"unknown solver {solver!r}")
            if (solver == "nonconvex") != (self.k_cardinality is not None):
                raise ValueError("k_cardinality is required by, and only by, the nonconvex solver")
            if self.k_cardinality is not None and self.k_cardinality < 0:
                raise ValueError("k_cardinality must be nonnegative")
        return self

    @property
    def step0(self) -> float:
        return self.alpha0 if self.alpha0 is not None else 1.0 / self.r

    def threshold(self, alpha: float) -> float:
        if self.threshold_convention == "paper":
            return self.lam / alpha
        return self.lam * alpha


@dataclass
class RecoveryResult:
    q_s: np.ndarray
    q_nu: np.ndarray
    stationary_index: int
    solver: str
    residual_history: np.ndarray
    error_history: Optional[np.ndarray]
    objective_history: np.ndarray
    wall_time: np.ndarray
    step_sizes: np.ndarray
    iterations: int
    converged: bool
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def decomposition(self) -> PsrDecomposition:
        return PsrDecomposition(self.q_s, self.q_nu, self.stationary_index)

    @property
    def total(self) -> np.ndarray:
        return self.q_s + self.q_nu

    def history_rows(self) -> List[Tuple[int, float, float, float]]:
        err = self.error_history if self.error_history is not None else np.full(self.iterations, np.nan)
        return [(i + 1, float(self.residual_history[i]), float(err[i]), 1e3 * float(self.wall_time[i]))
                for i in range(self.iterations)]

    def save_history(self, path) -> None:
        """CSV with columns ``iteration,residual,error,wall_ms`` (blank = not evaluated)."""
        def cell(v):
            return "" if not np.isfinite(v) else repr(v)

        with open(path, "w") as fh:
            fh.write("iteration,residual,error,wall_ms\n")
            for it, res, err, ms in self.history_rows():
                fh.write(f"{it},{cell(res)},{cell(err)},{ms:.3f}\n")


# --- smooth data terms ----------------------------------------------------------


class ApproximateData:
    """``r/2 ||F(Q) - d||^2`` under ``F^H F = I``, i.e. ``r/2 ||Q - G||^2 + const``."""

    exact = False

    def __init__(self, G: np.ndarray, r: float, const: float = 0.0):
        self.G = np.asarray(G, dtype=float)
        self.r = r
        self.const = const

    def value(self, Q) -> float:
        return 0.5 * self.r * float(np.sum((Q - self.G) ** 2)) + self.const

    def gradient(self, Q) -> np.ndarray:
        return self.r * (Q - self.G)


class ExactData:
    """``r/2 ||F(Q) - d||^2`` with matrix-free ``F``; caches the last residual."""

    exact = True

    def __init__(self, op: LiftedOperator, d: np.ndarray, r: float):
        self.op = op
        self.d = d
        self.r = r
        self._key = None
        self._res = None

    def residual(self, Q) -> np.ndarray:
        if self._key is None or not np.array_equal(self._key, Q):
            self._key = np.array(Q, copy=True)
            self._res = self.op.forward(Q) - self.d
        return self._res

    def value(self, Q) -> float:
        return 0.5 * self.r * float(np.vdot(self.residual(Q), self.residual(Q)).real)

    def gradient(self, Q) -> np.ndarray:
        return self.r * np.real(self.op.adjoint(self.residual(Q)))

    def residual_norm(self, Q) -> float:
        return float(np.linalg.norm(self.residual(Q)))


# --- line search ------------------------------------------------------------


def _inner(a, b) -> float:
    # blockwise <a, b> without forming products; blocks are tuples of arrays
    return float(sum(np.vdot(x, y) for x, y in zip(a, b)))


def _backtrack(f, g, x, alpha_start, beta=0.5, c=1e-4, alpha_min=1e-12, step=None, fx=None):
    """Backtracking over tuples of array blocks ``x`` with gradient blocks ``g``."""
    fx = f(x) if fx is None else fx
    alpha = float(alpha_start)
    gg = _inner(g, g)
    while alpha >= alpha_min:
        if step is None:
            xn = tuple(xi - alpha * gi for xi, gi in zip(x, g))
            bound = fx - c * alpha * gg
        else:
            xn = step(alpha)
            delta = tuple(a - b for a, b in zip(xn, x))
            bound = fx + _inner(g, delta) + _inner(delta, delta) / (2 * alpha)
        fn = f(xn)
        if fn <= bound + 1e-12 * max(1.0, abs(fx)):
            return alpha, xn, fn
        alpha *= beta
    raise LineSearchError(f"step size fell below {alpha_min}")


def backtracking_line_search(objective: Callable, gradient, X, alpha_start: float,
                             beta: float = 0.5, c: float = 1e-4, alpha_min: float = 1e-12,
                             step: Optional[Callable] = None) -> float:
    """Largest ``alpha = alpha_start * beta**j`` giving sufficient decrease.

    Without ``step`` this is the Armijo rule along ``-gradient``:
    ``f(X - a g) <= f(X) - c a ||g||^2``. With a ``step(alpha)`` callable
    returning a proximal candidate ``X+``, the test is the quadratic upper
    bound ``f(X+) <= f(X) + <g, X+ - X> + ||X+ - X||^2 / (2 a)``, which
    guarantees descent of the composite objective.

    ``gradient`` may be an array or a callable evaluated at ``X``.
    """
    if alpha_start <= 0:
        raise ValueError("alpha_start must be positive")
    X = np.asarray(X, dtype=float)
    g = gradient(X) if callable(gradient) else np.asarray(gradient)
    f1 = lambda xs: objective(xs[0])
    s1 = None if step is None else (lambda a: (step(a),))
    alpha, _, _ = _backtrack(f1, (g,), (X,), alpha_start, beta, c, alpha_min, s1)
    return alpha


def fista_momentum(t: float) -> float:
    return 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))


# --- drivers ------------------------------------------------------------------


def _as_data(d):
    if isinstance(d, Measurements):
        return d.data
    return None if d is None else np.asarray(d)


def _setup(d, op, cfg, G):
    data = _as_data(d)
    if cfg.gradient_mode == "exact":
        if op is None or data is None:
            raise ValueError("exact gradient mode needs the operator and the data")
        return ExactData(op, data, cfg.r), np.real(op.adjoint(data)), data
    if G is None:
        if op is None or data is None:
            raise ValueError("need G or (operator, data)")
        G = np.real(op.adjoint(data))
    const = 0.0
    if data is not None:
        const = 0.5 * cfg.r * (float(np.vdot(data, data).real) - float(np.sum(G * G)))
    return ApproximateData(G, cfg.r, const), np.asarray(G, dtype=float), data


def _truth_matrix(truth):
    if truth is None:
        return None
    if isinstance(truth, PsrDecomposition):
        return truth.total
    return np.asarray(truth, dtype=float)


class _History:
    def __init__(self, smooth, op, data, cfg, truth):
        self.smooth, self.op, self.data, self.cfg = smooth, op, data, cfg
        self.truth = _truth_matrix(truth)
        self.res, self.err, self.obj, self.wall, self.alpha = [], [], [], [], []

    def residual(self, Q, it, final=False) -> float:
        if self.smooth.exact:
            return self.smooth.residual_norm(Q)
        if self.op is None or self.data is None:
            return np.nan
        if final or it % self.cfg.check_every == 0:
            return float(np.linalg.norm(self.data - self.op.forward(Q)))
        return np.nan

    def record(self, it, q_s, q_nu, lam, alpha, tic):
        Q = q_s + q_nu
        if not (np.all(np.isfinite(q_s)) and np.all(np.isfinite(q_nu))):
            raise SolverDivergedError(it)
        res = self.residual(Q, it, final=it == self.cfg.max_iters)
        self.res.append(res)
        self.obj.append(self.smooth.value(Q) + lam * float(np.abs(q_nu).sum()))
        if self.truth is not None:
            self.err.append(float(np.linalg.norm(self.truth - Q)))
        self.alpha.append(alpha)
        self.wall.append(time.perf_counter() - tic)
        return res

    def finish(self, q_s, q_nu, it, name, vs, extras=None):
        if self.res and not np.isfinite(self.res[-1]) and self.op is not None and self.data is not None:
            self.res[-1] = float(np.linalg.norm(self.data - self.op.forward(q_s + q_nu)))
        converged = bool(self.res and np.isfinite(self.res[-1]) and self.res[-1] <= self.cfg.delta)
        return RecoveryResult(
            q_s=q_s, q_nu=q_nu, stationary_index=vs, solver=name,
            residual_history=np.array(self.res, dtype=float),
            error_history=np.array(self.err) if self.truth is not None else None,
            objective_history=np.array(self.obj), wall_time=np.array(self.wall),
            step_sizes=np.array(self.alpha), iterations=it, converged=converged,
            extras=extras or {},
        )


def _stationary_index(op, vs):
    if vs is not None:
        return vs
    if op is None:
        raise ValueError("stationary_index is required without an operator")
    return op.stationary_index


def _proximal_gradient(name, d, op, cfg, prox_nu, lam_obj, momentum, truth, G, stationary_index):
    vs = _stationary_index(op, stationary_index)
    smooth, G, data = _setup(d, op, cfg, G)
    shape = G.shape
    q_s = np.zeros(shape)
    q_nu = np.zeros(shape)
    y_s, y_nu = q_s, q_nu
    t = cfg.t0
    alpha = cfg.step0
    hist = _History(smooth, op, data, cfg, truth)
    f_pair = lambda X: smooth.value(X[0] + X[1])
    it = 0
    while it < cfg.max_iters:
        it += 1
        tic = time.perf_counter()
        grad = smooth.gradient(y_s + y_nu)

        def step(a, y_s=y_s, y_nu=y_nu, grad=grad):
            # project_stationary(y_s - a * grad) touches one row only
            new_s = np.zeros(shape)
            new_s[vs] = np.maximum(y_s[vs] - a * grad[vs], 0.0)
            return new_s, prox_nu(y_nu - a * grad, a)

        if cfg.line_search:
            alpha, X, _ = _backtrack(f_pair, (grad, grad), (y_s, y_nu), alpha, cfg.armijo_beta,
                                     cfg.armijo_c, cfg.alpha_min, step)
        else:
            X = step(alpha)
        new_s, new_nu = X[0], X[1]
        if momentum:
            t_next = fista_momentum(t)
            w = (t - 1.0) / t_next
            y_s = new_s + w * (new_s - q_s)
            y_nu = new_nu + w * (new_nu - q_nu)
            t = t_next
        else:
            y_s, y_nu = new_s, new_nu
        q_s, q_nu = new_s, new_nu
        res = hist.record(it, q_s, q_nu, lam_obj, alpha, tic)
        if np.isfinite(res) and res <= cfg.delta:
            break
    return hist.finish(q_s, q_nu, it, name, vs)


def _nonneg_shrink(X, tau: float, vs: int) -> np.ndarray:
    # project_moving(soft_threshold(X, tau)) in one pass: for tau >= 0 the
    # clamp at zero absorbs the sign handling
    out = np.subtract(X, tau)
    np.maximum(out, 0.0, out=out)
    out[vs] = 0.0
    return out


def pgd(d, op: Optional[LiftedOperator], cfg: SolverConfig = None, truth=None, G=None,
        stationary_index: Optional[int] = None) -> RecoveryResult:
    """Proximal gradient descent with block projections and soft-thresholding.

    Parameters
    ----------
    d : Measurements or ndarray
        Measured data. May be ``None`` in approximate mode when ``G`` is given.
    op : LiftedOperator
        Forward model; optional in approximate mode if ``G`` and
        ``stationary_index`` are supplied (no residuals are then recorded).
    cfg : SolverConfig
    truth : PsrDecomposition or ndarray, optional
        Enables the per-iteration l2 error history.
    G : ndarray, optional
        Precomputed ``Re(F^H d)``.
    """
    cfg = (cfg or SolverConfig()).validate("pgd")
    vs = _stationary_index(op, stationary_index)
    prox = lambda X, a: _nonneg_shrink(X, cfg.threshold(a), vs)
    return _proximal_gradient("pgd", d, op, cfg, prox, cfg.lam, False, truth, G, vs)


def fista(d, op: Optional[LiftedOperator], cfg: SolverConfig = None, truth=None, G=None,
          stationary_index: Optional[int] = None, momentum: bool = True) -> RecoveryResult:
    """PGD with Nesterov/FISTA extrapolation on the stacked ``(Qs, Qnu)``.

    ``momentum=False`` turns the extrapolation off and reproduces :func:`pgd`.
    """
    cfg = (cfg or SolverConfig()).validate("fista")
    vs = _stationary_index(op, stationary_index)
    prox = lambda X, a: _nonneg_shrink(X, cfg.threshold(a), vs)
    return _proximal_gradient("fista", d, op, cfg, prox, cfg.lam, momentum, truth, G, vs)


def nonconvex_pgd(d, op: Optional[LiftedOperator], cfg: SolverConfig, truth=None, G=None,
                  stationary_index: Optional[int] = None) -> RecoveryResult:
    """PGD with the l1 prox replaced by projection onto ``card(Qnu) <= k``."""
    cfg.validate("nonconvex")
    vs = _stationary_index(op, stationary_index)
    k = int(cfg.k_cardinality)
    prox = lambda X, a: project_moving(hard_threshold_topk(X, k), vs)
    return _proximal_gradient("nonconvex", d, op, cfg, prox, 0.0, False, truth, G, vs)


def admm(d, op: Optional[LiftedOperator], cfg: SolverConfig = None, truth=None, G=None,
         stationary_index: Optional[int] = None) -> RecoveryResult:
    """ADMM on the split ``Q = Qs + Qnu``.

    In approximate mode the ``Q`` update is the closed form
    ``(G - Y + r (Qs + Qnu)) / (1 + r)``. In exact mode it solves
    ``(Re(F^H F) + r I) Q = G - Y + r (Qs + Qnu)`` by conjugate gradients,
    warm-started from the previous ``Q``.
    """
    cfg = (cfg or SolverConfig()).validate("admm")
    vs = _stationary_index(op, stationary_index)
    smooth, G, data = _setup(d, op, cfg, G)
    r = cfg.r
    shape = G.shape
    Q = np.zeros(shape)
    q_s = np.zeros(shape)
    q_nu = np.zeros(shape)
    Y = np.zeros(shape)
    hist = _History(smooth, op, data, cfg, truth)
    primal, cg_iters = [], []

    if smooth.exact:
        n = G.size

        def normal(v):
            V = v.reshape(shape)
            return (np.real(op.normal(V)) + r * V).reshape(-1)

        A = _ScipyOperator((n, n), matvec=normal, dtype=float)

    it = 0
    while it < cfg.max_iters:
        it += 1
        tic = time.perf_counter()
        rhs = q_s + q_nu
        rhs *= r
        rhs += G
        rhs -= Y
        if smooth.exact:
            count = [0]
            sol, info = cg(A, rhs.reshape(-1), x0=Q.reshape(-1), rtol=cfg.cg_tol,
                           atol=0.0, maxiter=cfg.cg_maxiter,
                           callback=lambda _: count.__setitem__(0, count[0] + 1))
            Q = sol.reshape(shape)
            cg_iters.append(count[0])
        else:
            rhs /= 1.0 + r
            Q = rhs
        # q_nu vanishes on the stationary row, so only that row is needed
        q_s = np.zeros(shape)
        q_s[vs] = np.maximum(Q[vs] + Y[vs], 0.0)
        V = Q + Y
        V[vs] -= q_s[vs]
        q_nu = _nonneg_shrink(V, cfg.lam / r, vs)
        V = Q - q_nu
        V[vs] -= q_s[vs]
        primal.append(float(np.linalg.norm(V)))
        V /= r
        Y += V
        res = hist.record(it, q_s, q_nu, cfg.lam, 1.0 / r, tic)
        if np.isfinite(res) and res <= cfg.delta:
            break
    extras = {"primal_residual": np.array(primal)}
    if cg_iters:
        extras["cg_iterations"] = np.array(cg_iters)
    return hist.finish(q_s, q_nu, it, "admm", vs, extras)


def solve(name: str, d, op, cfg: SolverConfig, truth=None, G=None,
          stationary_index: Optional[int] = None) -> RecoveryResult:
    """Dispatch by solver name (``pgd``, ``fista``, ``admm``, ``nonconvex``)."""
    fn = {"pgd": pgd, "fista": fista, "admm": admm, "nonconvex": nonconvex_pgd}.get(name)
    if fn is None:
        raise ValueError(f"unknown solver {name!r}")
    return fn(d, op, cfg, truth=truth, G=G, stationary_index=stationary_index)
