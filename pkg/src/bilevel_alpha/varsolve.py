"""Lower-level solver for ``min_x 0.5 * ||Ax - y||^2 + alpha * R(x)``.

Quadratic regularizers are solved in closed form. Huber-type regularizers
use a damped (semismooth) Newton method with Armijo backtracking, started
from the least-squares solution unless told otherwise. For dense operators
the Newton iteration runs over a whole stack of measurements at once, which
is what the grid searches and region scans rely on.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.fft import dctn, idctn
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConvergenceError, InputError, PreconditionError, RankDeficiencyError
from .linops import ForwardOperator, as_operator

#: Finite stand-in for ``alpha = infinity``.
INFINITY_PROXY = 1e7

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverSettings:
    grad_tol: float = 1e-10
    max_iter: int = 100_000
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 60
    cg_tol: float = 1e-12


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class LowerLevelProblem:
    op: object
    reg: object
    y: np.ndarray
    alpha: float

    def __post_init__(self):
        self.op = as_operator(self.op)
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.shape[0] != self.op.shape[0]:
            raise InputError(f"measurement has shape {y.shape}, operator expects ({self.op.shape[0]},)")
        if not np.all(np.isfinite(y)):
            raise InputError("measurement contains non-finite entries")
        self.y = y
        alpha = float(self.alpha)
        if not (alpha >= 0 and np.isfinite(alpha)):
            raise InputError(f"alpha must be finite and non-negative (use INFINITY_PROXY), got {alpha}")
        self.alpha = alpha
        if not self.op.is_injective():
            raise RankDeficiencyError("lower-level problem requires an injective operator")

    def cost(self, x):
        r = self.op.apply(x) - self.y
        return 0.5 * float(r @ r) + self.alpha * float(self.reg.eval(x))


@dataclass
class ReconstructionResult:
    x: np.ndarray
    grad_norm: float
    iterations: int
    used_closed_form: bool
    # stopped at floating-point resolution of the cost before reaching grad_tol
    roundoff_limited: bool = False
    cost_history: list = field(default=None, repr=False)


@dataclass
class BatchResult:
    X: np.ndarray
    grad_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    roundoff_limited: np.ndarray
    used_closed_form: bool


def gradient_tolerance(settings, Aty):
    return settings.grad_tol * (1.0 + np.linalg.norm(Aty, axis=-1))


def _grad(op, reg, alpha, X, Aty):
    G = op.gram(X) - Aty
    if alpha:
        G = G + alpha * reg.gradient(X)
    return G


def _cost(op, reg, alpha, X, Y):
    r = op.apply(X) - Y
    return 0.5 * np.sum(r * r, axis=-1) + alpha * reg.eval(X)


def solve_batch(op, reg, Y, alpha, X_init=None, settings=DEFAULT_SETTINGS):
    """Solve the lower-level problem for every row of ``Y`` at one ``alpha``.

    Rows that fail to converge are flagged in ``converged`` rather than
    raising, so sweeps can record per-row failures.
    """
    op = as_operator(op)
    if not op.is_injective():
        raise RankDeficiencyError("lower-level problem requires an injective operator")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    alpha = float(alpha)
    if not (alpha >= 0 and np.isfinite(alpha)):
        raise InputError(f"alpha must be finite and non-negative, got {alpha}")
    Aty = op.adjoint(Y)
    B = Y.shape[0]
    if alpha == 0.0:
        X = op.least_squares(Y)
        return _finish_closed_form(op, reg, alpha, X, Aty, settings)
    if reg.is_quadratic:
        X = _closed_form(op, reg, alpha, Y, Aty, settings)
        return _finish_closed_form(op, reg, alpha, X, Aty, settings)
    if X_init is None:
        X = op.least_squares(Y)
    else:
        X = np.array(np.broadcast_to(X_init, (B, op.shape[1])), dtype=float)
    if isinstance(op, ForwardOperator):
        return _newton_dense(op, reg, alpha, X, Y, Aty, settings)
    return _newton_matrix_free(op, reg, alpha, X, Y, Aty, settings)


def _finish_closed_form(op, reg, alpha, X, Aty, settings):
    gn = np.linalg.norm(_grad(op, reg, alpha, X, Aty), axis=-1)
    B = X.shape[0]
    return BatchResult(
        X=X,
        grad_norm=gn,
        iterations=np.zeros(B, dtype=int),
        converged=np.ones(B, dtype=bool),
        roundoff_limited=gn > gradient_tolerance(settings, Aty),
        used_closed_form=True,
    )


def _closed_form(op, reg, alpha, Y, Aty, settings):
    """Solve ``(A^T A + alpha K^T K) x = A^T y``."""
    n = op.shape[1]
    if isinstance(op, ForwardOperator):
        Kd = reg.K.to_dense(n)
        M = op.gram_matrix + alpha * (Kd.T @ Kd)
        return linalg.cho_solve(linalg.cho_factor(M), Aty.T).T
    if op.kind == "identity" and reg.K.is_identity:
        return Y / (1.0 + alpha)
    lam = op.dct_spectrum()
    mu = reg.K.gram_dct_spectrum(op.image_shape) if op.image_shape is not None else None
    if lam is not None and mu is not None:
        # start from DCT(y), not DCT(A^T y): one basis change keeps the
        # round-off from being amplified by the tiny eigenvalues
        shape = Y.shape[:-1] + op.image_shape
        coeffs = dctn(Y.reshape(shape), axes=(-2, -1), norm="ortho")
        X = idctn(lam * coeffs / (lam**2 + alpha * mu), axes=(-2, -1), norm="ortho")
        return X.reshape(Y.shape[:-1] + (n,))
    matvec = lambda v: op.gram(v) + alpha * reg.K.adjoint(reg.K.apply(v))  # noqa: E731
    A_lin = LinearOperator((n, n), matvec=matvec, dtype=float)
    X = np.empty((Y.shape[0], n))
    for i, b in enumerate(Aty):
        X[i], info = cg(A_lin, b, rtol=settings.cg_tol, atol=0.0, maxiter=20 * n)
        if info > 0:
            raise ConvergenceError("conjugate gradients did not converge", x=X[i], alpha=alpha)
    return X


def _newton_dense(op, reg, alpha, X, Y, Aty, settings):
    AtA = op.gram_matrix
    tol = gradient_tolerance(settings, Aty)
    B = X.shape[0]
    G = _grad(op, reg, alpha, X, Aty)
    gn = np.linalg.norm(G, axis=-1)
    done = gn <= tol
    converged = done.copy()
    roundoff = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    c, shrink = settings.armijo, settings.shrink

    for _ in range(settings.max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        Xa, Ga, Ya = X[act], G[act], Y[act]
        H = AtA + alpha * reg.hessian(Xa)
        d = -np.linalg.solve(H, Ga[..., None])[..., 0]
        slope = np.sum(Ga * d, axis=-1)
        f0 = _cost(op, reg, alpha, Xa, Ya)
        # predicted decrease below the resolution of the cost: take the
        # full step and judge it by the gradient norm instead
        tiny = -slope <= 64 * _EPS * (np.abs(f0) + 1.0)
        t = np.ones(act.size)
        accepted = tiny.copy()
        for _ in range(settings.max_backtracks):
            need = np.flatnonzero(~accepted)
            if need.size == 0:
                break
            fn = _cost(op, reg, alpha, Xa[need] + t[need, None] * d[need], Ya[need])
            good = fn <= f0[need] + c * t[need] * slope[need]
            accepted[need[good]] = True
            t[need[~good]] *= shrink
        Xn = Xa + t[:, None] * d
        Gn = _grad(op, reg, alpha, Xn, Aty[act])
        gnn = np.linalg.norm(Gn, axis=-1)
        stalled = ~accepted | (tiny & (gnn >= gn[act]))
        move = ~stalled
        rows = act[move]
        X[rows], G[rows], gn[rows] = Xn[move], Gn[move], gnn[move]
        iters[rows] += 1
        now_ok = gn[act] <= tol[act]
        converged[act[now_ok]] = True
        stop_rows = act[stalled & ~now_ok]
        done[act[now_ok]] = True
        done[stop_rows] = True
        # a stall counts as converged only when the Newton model says no
        # representable decrease is left
        at_resolution = stalled & ~now_ok & tiny
        converged[act[at_resolution]] = True
        roundoff[act[at_resolution]] = True

    return BatchResult(
        X=X,
        grad_norm=gn,
        iterations=iters,
        converged=converged,
        roundoff_limited=roundoff,
        used_closed_form=False,
    )


def _newton_matrix_free(op, reg, alpha, X, Y, Aty, settings):
    """Newton-CG for structured operators, one row at a time."""
    B, n = X.shape
    tol = gradient_tolerance(settings, Aty)
    gn_out = np.empty(B)
    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    roundoff = np.zeros(B, dtype=bool)
    c, shrink = settings.armijo, settings.shrink
    for i in range(B):
        x, y, aty = X[i], Y[i], Aty[i]
        g = _grad(op, reg, alpha, x, aty)
        gn = np.linalg.norm(g)
        while gn > tol[i] and iters[i] < settings.max_iter:
            xc = x
            hess = LinearOperator(
                (n, n),
                matvec=lambda v, xc=xc: op.gram(v) + alpha * reg.hessian_vector(xc, v),
                dtype=float,
            )
            d, _ = cg(hess, -g, rtol=min(0.5, np.sqrt(gn)), atol=0.0, maxiter=10 * n)
            slope = float(g @ d)
            if slope >= 0:
                d, slope = -g, -float(g @ g)
            f0 = float(_cost(op, reg, alpha, x, y))
            tiny = -slope <= 64 * _EPS * (abs(f0) + 1.0)
            t, accepted = 1.0, tiny
            for _ in range(settings.max_backtracks):
                if accepted:
                    break
                if _cost(op, reg, alpha, x + t * d, y) <= f0 + c * t * slope:
                    accepted = True
                else:
                    t *= shrink
            xn = x + t * d
            gnew = _grad(op, reg, alpha, xn, aty)
            gnn = np.linalg.norm(gnew)
            if not accepted or (tiny and gnn >= gn):
                roundoff[i] = tiny
                break
            x, g, gn = xn, gnew, gnn
            iters[i] += 1
        X[i] = x
        gn_out[i] = gn
        converged[i] = gn <= tol[i] or roundoff[i]
    return BatchResult(X, gn_out, iters, converged, roundoff, used_closed_form=False)


def solve(prob, x_init=None, settings=DEFAULT_SETTINGS, track_cost=False):
    """Minimize the lower-level cost of ``prob``.

    Raises :class:`ConvergenceError` when the iteration budget runs out.
    With ``track_cost`` the cost after every accepted iterate is recorded
    (this re-runs the Newton loop one iteration at a time, so it is slow).
    """
    if track_cost and prob.alpha > 0 and not prob.reg.is_quadratic:
        return _solve_tracked(prob, x_init, settings)
    res = solve_batch(prob.op, prob.reg, prob.y[None, :], prob.alpha,
                      None if x_init is None else np.asarray(x_init, dtype=float)[None, :],
                      settings)
    x = res.X[0]
    if not res.converged[0]:
        raise ConvergenceError(
            f"lower-level solve did not converge at alpha={prob.alpha:g} "
            f"(grad norm {res.grad_norm[0]:.3e} after {res.iterations[0]} iterations)",
            x=x, grad_norm=float(res.grad_norm[0]), alpha=prob.alpha,
        )
    history = [prob.cost(x)] if track_cost else None
    return ReconstructionResult(
        x=x,
        grad_norm=float(res.grad_norm[0]),
        iterations=int(res.iterations[0]),
        used_closed_form=res.used_closed_form,
        roundoff_limited=bool(res.roundoff_limited[0]),
        cost_history=history,
    )


def _solve_tracked(prob, x_init, settings):
    one_step = SolverSettings(
        grad_tol=settings.grad_tol, max_iter=1, armijo=settings.armijo,
        shrink=settings.shrink, max_backtracks=settings.max_backtracks, cg_tol=settings.cg_tol,
    )
    x = least_squares(prob) if x_init is None else np.asarray(x_init, dtype=float)
    history = [prob.cost(x)]
    total = 0
    while True:
        res = solve_batch(prob.op, prob.reg, prob.y[None, :], prob.alpha, x[None, :], one_step)
        step = int(res.iterations[0])
        x = res.X[0]
        if step:
            history.append(prob.cost(x))
        total += step
        if res.converged[0] or step == 0:
            break
        if total >= settings.max_iter:
            raise ConvergenceError("iteration budget exhausted", x=x,
                                   grad_norm=float(res.grad_norm[0]), alpha=prob.alpha)
    if not res.converged[0]:
        raise ConvergenceError("lower-level solve stalled", x=x,
                               grad_norm=float(res.grad_norm[0]), alpha=prob.alpha)
    return ReconstructionResult(x, float(res.grad_norm[0]), total, False,
                                bool(res.roundoff_limited[0]), history)


def least_squares(prob):
    return prob.op.least_squares(prob.y)


def verify_optimality_identity(prob, rec):
    """Relative residual of ``alpha * grad R(x_a) = A^T A (x_0 - x_a)``."""
    if prob.alpha <= 0:
        raise PreconditionError("optimality identity needs alpha > 0")
    x0 = least_squares(prob)
    lhs = prob.alpha * prob.reg.gradient(rec.x)
    rhs = prob.op.gram(x0) - prob.op.gram(rec.x)
    return float(np.linalg.norm(lhs - rhs) / (1.0 + np.linalg.norm(prob.op.gram(x0))))


def boundary_continuity_probe(op, reg, y, alphas, settings=DEFAULT_SETTINGS):
    """Track ``x_a -> x_0`` as ``alpha -> 0``.

    Returns a list of ``(alpha, ||x_a - x_0||, ||x_0 - x_a||^2 / alpha)``.
    """
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise PreconditionError("alphas must be positive and strictly decreasing")
    prob0 = LowerLevelProblem(op, reg, y, 0.0)
    x0 = least_squares(prob0)
    rows = []
    for a in alphas:
        rec = solve(LowerLevelProblem(prob0.op, reg, prob0.y, a), settings=settings)
        dist = float(np.linalg.norm(rec.x - x0))
        rows.append((float(a), dist, dist * dist / a))
    return rows
