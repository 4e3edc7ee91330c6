"""Upper-level costs, grid search over ``[0, inf]`` and positivity checks."""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateDataError, InputError, PreconditionError
from .linops import as_operator
from .varsolve import DEFAULT_SETTINGS, INFINITY_PROXY, solve_batch

UPPER_KINDS = ("mse", "predictive-risk")

PAPER_GRID_SPEC = "zero,log:-12:3:98,1e7"


@dataclass(frozen=True)
class TrainingPair:
    x_true: np.ndarray
    y: np.ndarray


class Dataset:
    """Non-empty collection of ``(x_true, y)`` pairs stored as two stacked arrays."""

    def __init__(self, pairs):
        pairs = list(pairs)
        if not pairs:
            raise InputError("dataset must contain at least one pair")
        X = [np.atleast_1d(np.asarray(p.x_true, dtype=float)) for p in pairs]
        Y = [np.atleast_1d(np.asarray(p.y, dtype=float)) for p in pairs]
        if len({x.shape for x in X}) != 1 or len({y.shape for y in Y}) != 1:
            raise InputError("all pairs must share the same dimensions")
        self.X_true = np.stack(X)
        self.Y = np.stack(Y)
        if not (np.all(np.isfinite(self.X_true)) and np.all(np.isfinite(self.Y))):
            raise InputError("dataset contains non-finite entries")

    @classmethod
    def from_arrays(cls, X_true, Y):
        X_true = np.atleast_2d(np.asarray(X_true, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X_true.shape[0] != Y.shape[0]:
            raise InputError("x_true and y must have the same number of rows")
        obj = cls.__new__(cls)
        obj.X_true, obj.Y = X_true, Y
        if X_true.shape[0] == 0:
            raise InputError("dataset must contain at least one pair")
        if not (np.all(np.isfinite(X_true)) and np.all(np.isfinite(Y))):
            raise InputError("dataset contains non-finite entries")
        return obj

    @classmethod
    def single(cls, x_true, y):
        return cls.from_arrays(np.asarray(x_true, dtype=float)[None, :],
                               np.asarray(y, dtype=float)[None, :])

    def __len__(self):
        return self.X_true.shape[0]

    @property
    def pairs(self):
        return [TrainingPair(x, y) for x, y in zip(self.X_true, self.Y)]

    def check_operator(self, op):
        m, n = op.shape
        if self.X_true.shape[1] != n or self.Y.shape[1] != m:
            raise InputError(
                f"dataset dimensions (n={self.X_true.shape[1]}, m={self.Y.shape[1]}) "
                f"do not match operator shape {op.shape}"
            )


class AlphaGrid:
    """Strictly increasing parameter grid whose first value is exactly 0."""

    def __init__(self, values):
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0 or v[0] != 0.0:
            raise InputError("alpha grid must start at 0")
        if np.any(np.diff(v) <= 0):
            raise InputError("alpha grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise InputError("alpha grid must be finite (use the infinity proxy)")
        self.values = v

    @classmethod
    def paper_default(cls):
        return cls.parse(PAPER_GRID_SPEC)

    @classmethod
    def linear(cls, lo, hi, num):
        return cls(np.linspace(lo, hi, int(num)))

    @classmethod
    def parse(cls, spec):
        """Parse specs like ``zero,log:-12:3:98,1e7`` or ``lin:0:0.1:50``."""
        parts = []
        for tok in (t.strip() for t in spec.split(",")):
            if not tok:
                continue
            if tok == "zero":
                parts.append(np.array([0.0]))
            elif tok == "inf":
                parts.append(np.array([INFINITY_PROXY]))
            elif m := re.fullmatch(r"(log|lin):([^:]+):([^:]+):(\d+)", tok):
                kind, a, b, num = m.groups()
                a, b, num = float(a), float(b), int(num)
                parts.append(np.logspace(a, b, num) if kind == "log" else np.linspace(a, b, num))
            else:
                try:
                    parts.append(np.array([float(tok)]))
                except ValueError:
                    raise InputError(f"cannot parse grid token {tok!r}") from None
        if not parts:
            raise InputError("empty grid spec")
        return cls(np.concatenate(parts))

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)


@dataclass
class BilevelSolution:
    alpha_hat: float
    cost_at_alpha_hat: float
    cost_curve: list
    is_positive: bool
    at_infinity_proxy: bool
    # every x_0 is a stationary point of R, so x_alpha = x_0 for all alpha
    # and the cost curve is flat; alpha_hat = 0 is then not a unique optimum
    regularizer_inactive: bool = False
    per_pair_costs: np.ndarray = field(default=None, repr=False)

    @property
    def alphas(self):
        return np.array([a for a, _ in self.cost_curve])

    @property
    def costs(self):
        return np.array([c for _, c in self.cost_curve])

    def record(self):
        return {
            "alpha_hat": self.alpha_hat,
            "cost": self.cost_at_alpha_hat,
            "is_positive": self.is_positive,
            "at_infinity_proxy": self.at_infinity_proxy,
        }


def _check_kind(kind):
    if kind == "predictive":
        kind = "predictive-risk"
    if kind not in UPPER_KINDS:
        raise InputError(f"unknown upper-level kind {kind!r}")
    return kind


def _pair_costs(kind, op, X, X_true):
    diff = X - X_true
    if kind == "predictive-risk":
        diff = op.apply(diff)
    return 0.5 * np.sum(diff * diff, axis=-1)


def pairwise_cost_curves(kind, op, reg, X_true, Y, alphas, settings=DEFAULT_SETTINGS,
                         strict=True):
    """Per-pair upper-level costs along an ascending, warm-started alpha sweep.

    Returns ``(costs, converged)``, both of shape ``(len(alphas), K)``. With
    ``strict`` a solver failure raises :class:`ConvergenceError` naming the
    offending alpha; otherwise the failure is only flagged.
    """
    kind = _check_kind(kind)
    op = as_operator(op)
    alphas = np.asarray(alphas, dtype=float)
    if np.any(np.diff(alphas) <= 0):
        raise InputError("alphas must be strictly increasing for a warm-started sweep")
    costs = np.empty((alphas.size, X_true.shape[0]))
    ok = np.empty_like(costs, dtype=bool)
    X_prev = None
    for i, a in enumerate(alphas):
        res = solve_batch(op, reg, Y, a, X_init=X_prev, settings=settings)
        if strict and not res.converged.all():
            bad = int(np.flatnonzero(~res.converged)[0])
            raise ConvergenceError(
                f"lower-level solve failed at alpha={a:g} for pair {bad}",
                x=res.X[bad], grad_norm=float(res.grad_norm[bad]), alpha=float(a),
            )
        costs[i] = _pair_costs(kind, op, res.X, X_true)
        ok[i] = res.converged
        X_prev = res.X
    return costs, ok


def upper_cost(kind, data, op, reg, alpha, settings=DEFAULT_SETTINGS):
    """Empirical upper-level cost ``1/(2K) * sum_k ||x_a(y_k) - x_true_k||^2``.

    For ``predictive-risk`` the error is measured after applying ``A``.
    """
    kind = _check_kind(kind)
    op = as_operator(op)
    data.check_operator(op)
    res = solve_batch(op, reg, data.Y, alpha, settings=settings)
    if not res.converged.all():
        bad = int(np.flatnonzero(~res.converged)[0])
        raise ConvergenceError(f"lower-level solve failed at alpha={alpha:g}",
                               x=res.X[bad], grad_norm=float(res.grad_norm[bad]), alpha=alpha)
    return float(np.mean(_pair_costs(kind, op, res.X, data.X_true)))


def _regularizer_inactive(op, reg, Y):
    x0 = op.least_squares(Y)
    return bool(np.all(np.linalg.norm(reg.gradient(x0), axis=-1) == 0.0))


def select_alpha(costs):
    """Index of the smallest cost; ties go to the smallest alpha."""
    return np.argmin(costs, axis=0)


def grid_search(kind, data, op, reg, grid=None, settings=DEFAULT_SETTINGS):
    op = as_operator(op)
    data.check_operator(op)
    grid = AlphaGrid.paper_default() if grid is None else grid
    alphas = grid.values
    per_pair, _ = pairwise_cost_curves(kind, op, reg, data.X_true, data.Y, alphas, settings)
    costs = per_pair.mean(axis=1)
    i = int(select_alpha(costs))
    alpha_hat = float(alphas[i])
    return BilevelSolution(
        alpha_hat=alpha_hat,
        cost_at_alpha_hat=float(costs[i]),
        cost_curve=[(float(a), float(c)) for a, c in zip(alphas, costs)],
        is_positive=alpha_hat > 0,
        at_infinity_proxy=(i == alphas.size - 1 and alphas.size > 1),
        regularizer_inactive=_regularizer_inactive(op, reg, data.Y),
        per_pair_costs=per_pair,
    )


def closed_form_tikhonov_alpha(x_true, y):
    """Interior critical point of the Tikhonov-denoising cost, ``||y||^2 / <y, x_true> - 1``."""
    x_true = np.asarray(x_true, dtype=float)
    y = np.asarray(y, dtype=float)
    yy = float(y @ y)
    yx = float(y @ x_true)
    if yy == 0.0 or yx == 0.0:
        raise DegenerateDataError("closed form needs ||y|| != 0 and <y, x_true> != 0")
    return yy / yx - 1.0


def tikhonov_denoising_optimum(x_true, y):
    """Global minimizer over ``[0, inf]`` of the single-pair Tikhonov-denoising cost.

    The critical point is only a minimizer when ``<y, x_true> > 0``; for a
    negative inner product the cost decreases all the way to ``alpha = inf``.
    """
    alpha_bar = closed_form_tikhonov_alpha(x_true, y)
    if float(np.dot(y, x_true)) < 0:
        return np.inf
    return max(alpha_bar, 0.0)


def new_condition_terms_at(op, reg, X_true, X0):
    """Both sides of the linearization condition given least-squares solutions ``X0``.

    Returns ``(lhs, rhs)`` with ``lhs = L_R((A^T A)^-1 x_true, x_0)`` and
    ``rhs = L_R((A^T A)^-1 x_0, x_0)``; the condition holds where ``lhs < rhs``.
    """
    op = as_operator(op)
    u = op.solve_normal(X_true)
    v = op.solve_normal(X0)
    return reg.linearize(u, X0), reg.linearize(v, X0)


def new_condition_margin_at(op, reg, X_true, X0):
    """``lhs - rhs`` of the linearization condition, negative where it holds.

    The common ``R(x_0)`` term cancels, leaving
    ``<grad R(x_0), (A^T A)^-1 x_true> - <grad R(x_0), (A^T A)^-1 x_0>``. The
    two inner products are formed separately so a tiny ``x_0`` is not
    absorbed when subtracted from a large ``x_true``.
    """
    op = as_operator(op)
    g = reg.gradient(X0)
    u = op.solve_normal(X_true)
    v = op.solve_normal(X0)
    return np.sum(g * u, axis=-1) - np.sum(g * v, axis=-1)


def new_condition_terms(op, reg, X_true, Y):
    op = as_operator(op)
    Y = np.atleast_2d(Y)
    x0 = op.least_squares(Y)
    return new_condition_terms_at(op, reg, np.atleast_2d(X_true), x0)


def check_condition_old(reg, x_true, y):
    return bool(reg.eval(x_true) < reg.eval(y))


def new_condition_margin(op, reg, X_true, Y):
    op = as_operator(op)
    return new_condition_margin_at(op, reg, np.atleast_2d(X_true), op.least_squares(np.atleast_2d(Y)))


def check_condition_new_pointwise(op, reg, x_true, y):
    m = new_condition_margin(op, reg, np.asarray(x_true, dtype=float)[None, :],
                             np.asarray(y, dtype=float)[None, :])
    return bool(m[0] < 0)


def check_condition_new_expected(op, reg, data):
    return bool(new_condition_margin(op, reg, data.X_true, data.Y).mean() < 0)


def gradient_compat_deviation(op, reg, alphas, data, settings=DEFAULT_SETTINGS):
    """Largest relative gap between ``grad R((A^T A)^-1 x_a)`` and ``grad R(x_a)``."""
    op = as_operator(op)
    worst = 0.0
    for a in alphas:
        if a <= 0:
            raise PreconditionError("sampled alphas must be positive")
        res = solve_batch(op, reg, data.Y, a, settings=settings)
        g_lift = reg.gradient(op.solve_normal(res.X))
        g = reg.gradient(res.X)
        num = np.linalg.norm(g_lift - g, axis=-1)
        den = np.maximum(np.linalg.norm(g, axis=-1), np.finfo(float).tiny)
        dev = np.where(num == 0, 0.0, num / den)
        worst = max(worst, float(dev.max()))
    return worst


def check_condition_gradient_compat(op, reg, alphas, data, settings=DEFAULT_SETTINGS, tol=1e-8):
    """Sampled test of ``grad R((A^T A)^-1 x_a) = grad R(x_a)``.

    Only finitely many alphas are checked, so a ``True`` is evidence, not
    a certificate.
    """
    return gradient_compat_deviation(op, reg, alphas, data, settings) <= tol


def check_condition_predictive(reg, data, op):
    op = as_operator(op)
    if not (op.is_square() and op.is_injective()):
        raise PreconditionError("predictive-risk condition needs an invertible (square, injective) operator")
    x0 = op.least_squares(data.Y)
    g = reg.gradient(x0)
    return bool(np.mean(np.sum(g * data.X_true, axis=-1) - np.sum(g * x0, axis=-1)) < 0)


def check_condition_symmetric_bregman(reg, data):
    if data.X_true.shape != data.Y.shape:
        raise PreconditionError("symmetric Bregman condition needs x_true and y in the same space")
    return bool(np.mean(reg.symmetric_bregman(data.Y, data.X_true)) > 0)


def dini_quotients(kind, data, op, reg, alphas, settings=DEFAULT_SETTINGS):
    """Difference quotients ``(J(a) - J(0)) / a`` for each ``a`` in ``alphas``."""
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise PreconditionError("alphas must be positive and strictly decreasing")
    op = as_operator(op)
    data.check_operator(op)
    sweep = np.concatenate([[0.0], alphas[::-1]])
    per_pair, _ = pairwise_cost_curves(kind, op, reg, data.X_true, data.Y, sweep, settings)
    J = per_pair.mean(axis=1)
    return ((J[1:] - J[0]) / sweep[1:])[::-1]


def estimate_dini_derivative(kind, data, op, reg, alphas, settings=DEFAULT_SETTINGS):
    """Upper right Dini derivative of the cost at 0, estimated by the last quotient."""
    return float(dini_quotients(kind, data, op, reg, alphas, settings)[-1])
