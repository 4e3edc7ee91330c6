"""Two-dimensional region scans and the area-ratio table.

Each cell centre of a box in reconstruction space is taken as the
least-squares solution ``x_0``; the measurement is ``y = A x_0``. Per cell we
record the positivity conditions and the grid-search optimum, then compare
the area where ``alpha_hat = 0`` with the areas where the conditions fail.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..bilevel import AlphaGrid, new_condition_margin_at, pairwise_cost_curves, select_alpha
from ..errors import ConvergenceError, InputError
from ..linops import BLUR_2X2, ForwardOperator
from ..regularizers import LinearMap, Regularizer
from ..varsolve import DEFAULT_SETTINGS

REGION_CSV_HEADER = [
    "x1", "x2", "old_ok", "new_ok", "pred_ok", "alpha_hat",
    "cost_at_alpha_hat", "cost_at_zero", "valid", "flat",
]
RATIO_CSV_HEADER = ["problem", "regularizer", "condition", "ratio", "truncated"]

PROBLEMS = {"denoising": np.eye(2), "deconvolution": BLUR_2X2}
REGULARIZER_NAMES = ("tikhonov", "l2-grad", "huber", "huber-tv")

# (problem, condition) -> regularizer -> (ratio, truncated)
PAPER_TABLE3 = {
    ("denoising", "new"): {
        "tikhonov": (1.0, False), "l2-grad": (1.069, True),
        "huber": (1.171, False), "huber-tv": (1.129, True),
    },
    ("denoising", "old"): {
        "tikhonov": (3.979, False), "l2-grad": (2.071, True),
        "huber": (4.214, False), "huber-tv": (2.182, True),
    },
    ("deconvolution", "new"): {
        "tikhonov": (1.028, False), "l2-grad": (1.020, True),
        "huber": (1.143, False), "huber-tv": (1.015, True),
    },
}


def paper_regularizer(name, gamma=0.01):
    """The four 2-D regularizers of the region scans."""
    diff = LinearMap.first_difference(2)
    if name == "tikhonov":
        return Regularizer.tikhonov()
    if name == "l2-grad":
        return Regularizer.generalized_tikhonov(diff)
    if name == "huber":
        return Regularizer.huber(gamma)
    if name == "huber-tv":
        return Regularizer.generalized_huber(diff, gamma)
    raise InputError(f"unknown regularizer preset {name!r}")


@dataclass
class RegionScanSpec:
    op: object = None
    reg: object = None
    x_true: tuple = (1.0, 0.5)
    domain: tuple = (-1.6, 1.6, -1.6, 1.6)
    resolution: int = 100
    grid: AlphaGrid = None
    upper: str = "mse"
    problem: str = "denoising"
    regularizer: str = "tikhonov"

    def __post_init__(self):
        if self.op is None:
            self.op = PROBLEMS[self.problem]
        if not isinstance(self.op, ForwardOperator):
            self.op = ForwardOperator(self.op)
        if self.reg is None:
            self.reg = paper_regularizer(self.regularizer)
        if self.grid is None:
            self.grid = AlphaGrid.paper_default()
        self.x_true = np.asarray(self.x_true, dtype=float)
        if self.op.shape != (2, 2) or not self.op.is_injective():
            raise InputError("region scans need an invertible 2x2 operator")
        if self.x_true.shape != (2,):
            raise InputError("region scans need a 2-D ground truth")
        if self.resolution < 2:
            raise InputError("resolution must be at least 2")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise InputError("domain must be a non-empty box")

    @property
    def is_denoising(self):
        return bool(np.array_equal(self.op.matrix, np.eye(2)))

    def cell_centres(self):
        x0, x1, y0, y1 = self.domain
        N = self.resolution
        c1 = x0 + (x1 - x0) * (np.arange(N) + 0.5) / N
        c2 = y0 + (y1 - y0) * (np.arange(N) + 0.5) / N
        P, Q = np.meshgrid(c1, c2, indexing="ij")
        return np.stack([P.ravel(), Q.ravel()], axis=-1)

    @property
    def cell_area(self):
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0) / self.resolution**2


@dataclass
class RegionScanResult:
    spec: RegionScanSpec
    x0: np.ndarray
    old_ok: np.ndarray
    new_ok: np.ndarray
    pred_ok: np.ndarray
    alpha_hat: np.ndarray
    cost_at_alpha_hat: np.ndarray
    cost_at_zero: np.ndarray
    valid: np.ndarray
    flat: np.ndarray
    boundary: np.ndarray = field(repr=False, default=None)

    @property
    def zero_mask(self):
        # flat cells have every alpha optimal, so 0 is not *the* optimum
        return self.valid & (self.alpha_hat == 0) & ~self.flat

    def _area(self, mask):
        return float(np.count_nonzero(mask & self.valid)) * self.spec.cell_area

    @property
    def area_zero(self):
        return self._area(self.zero_mask)

    @property
    def area_new_violated(self):
        return self._area(~self.new_ok)

    @property
    def area_old_violated(self):
        return None if self.old_ok is None else self._area(~self.old_ok)

    @property
    def area_pred_violated(self):
        return self._area(~self.pred_ok)

    def truncated(self, condition):
        ok = {"new": self.new_ok, "old": self.old_ok, "predictive": self.pred_ok}[condition]
        if ok is None:
            return None
        region = (~ok | self.zero_mask) & self.valid
        return bool(np.any(region & self.boundary))

    def consistency_violations(self):
        """Cells where the new condition holds but the grid search returned 0."""
        return int(np.count_nonzero(self.new_ok & self.zero_mask))

    def rows(self):
        old = self.old_ok if self.old_ok is not None else [None] * len(self.x0)
        for i in range(len(self.x0)):
            yield (
                self.x0[i, 0], self.x0[i, 1], old[i], bool(self.new_ok[i]), bool(self.pred_ok[i]),
                self.alpha_hat[i], self.cost_at_alpha_hat[i], self.cost_at_zero[i],
                bool(self.valid[i]), bool(self.flat[i]),
            )


def _scan_chunk(op, reg, x_true, X0, alphas, upper, settings):
    Y = op.apply(X0)
    X_true = np.broadcast_to(x_true, X0.shape)
    costs, ok = pairwise_cost_curves(upper, op, reg, X_true, Y, alphas, settings, strict=False)
    return costs, ok


def run_region_scan(spec, workers=1, settings=DEFAULT_SETTINGS):
    op, reg = spec.op, spec.reg
    X0 = spec.cell_centres()
    alphas = spec.grid.values
    if workers > 1:
        chunks = np.array_split(X0, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_scan_chunk, op, reg, spec.x_true, c, alphas, spec.upper, settings)
                    for c in chunks]
            parts = [f.result() for f in futs]
        costs = np.concatenate([p[0] for p in parts], axis=1)
        ok = np.concatenate([p[1] for p in parts], axis=1)
    else:
        costs, ok = _scan_chunk(op, reg, spec.x_true, X0, alphas, spec.upper, settings)

    valid = ok.all(axis=0)
    if np.count_nonzero(~valid) > 0.01 * valid.size:
        raise ConvergenceError(
            f"{np.count_nonzero(~valid)} of {valid.size} cells failed to converge"
        )
    idx = select_alpha(costs)
    cells = np.arange(X0.shape[0])
    X_true = np.broadcast_to(spec.x_true, X0.shape)
    margin = new_condition_margin_at(op, reg, X_true, X0)
    old_ok = reg.eval(spec.x_true) < reg.eval(X0) if spec.is_denoising else None
    g = reg.gradient(X0)
    pred_ok = np.sum(g * X_true, axis=-1) < np.sum(g * X0, axis=-1)
    flat = np.linalg.norm(reg.gradient(X0), axis=-1) == 0.0

    N = spec.resolution
    ring = np.zeros((N, N), dtype=bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True

    return RegionScanResult(
        spec=spec,
        x0=X0,
        old_ok=old_ok,
        new_ok=margin < 0,
        pred_ok=pred_ok,
        alpha_hat=alphas[idx],
        cost_at_alpha_hat=costs[idx, cells],
        cost_at_zero=costs[0],
        valid=valid,
        flat=flat,
        boundary=ring.ravel(),
    )


@dataclass
class RatioRow:
    problem: str
    regularizer: str
    condition: str
    ratio: float
    truncated: bool

    def as_tuple(self):
        return (self.problem, self.regularizer, self.condition, self.ratio, self.truncated)


def compute_area_ratios(result):
    """Area where the condition fails divided by the area where ``alpha_hat = 0``.

    A ratio of 1 means the condition characterizes positivity exactly on the
    scanned box; ``None`` (written ``n/a``) when it cannot be formed.
    """
    spec = result.spec
    zero = result.area_zero
    conditions = [("new", result.area_new_violated), ("old", result.area_old_violated)]
    if spec.upper == "predictive-risk":
        conditions.append(("predictive", result.area_pred_violated))
    rows = []
    for name, violated in conditions:
        if violated is None or zero == 0.0:
            ratio = None
        else:
            ratio = round(violated / zero, 3)
        rows.append(RatioRow(spec.problem, spec.regularizer, name, ratio, result.truncated(name)))
    return rows


def run_table3(resolution=100, workers=1, settings=DEFAULT_SETTINGS, grid=None, domain=None,
               x_true=(1.0, 0.5)):
    """All eight region scans (two operators times four regularizers)."""
    rows, results = [], {}
    for problem in PROBLEMS:
        for name in REGULARIZER_NAMES:
            kw = {} if domain is None else {"domain": domain}
            spec = RegionScanSpec(problem=problem, regularizer=name, resolution=resolution,
                                  grid=grid, x_true=x_true, **kw)
            res = run_region_scan(spec, workers=workers, settings=settings)
            results[(problem, name)] = res
            rows.extend(compute_area_ratios(res))
    return rows, results
