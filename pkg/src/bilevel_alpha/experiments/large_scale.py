"""Shepp-Logan deblurring with a gradient-Tikhonov regularizer."""

from dataclasses import dataclass, field

import numpy as np

from ..bilevel import AlphaGrid, Dataset, grid_search
from ..errors import InputError
from ..linops import StructuredOperator, gaussian_kernel
from ..regularizers import LinearMap, Regularizer
from ..varsolve import DEFAULT_SETTINGS, SolverSettings, solve_batch
from .phantom import generate_shepp_logan

NOISE_MODES = ("normalized", "literal")

LARGE_SCALE_SETTINGS = SolverSettings(grad_tol=1e-8, max_iter=5_000)


@dataclass
class LargeScaleSpec:
    side: int = 128
    # blur and noise scales are relative: sigma in units of the image width,
    # noise relative to ||A x_true||
    blur_sigma: float = 0.05
    truncate: float = 4.0
    noise_level: float = 0.1
    noise_mode: str = "normalized"
    grid: AlphaGrid = None
    kinds: tuple = ("mse", "predictive-risk")
    seed: int = 0
    # the blur spectrum bottoms out near 1e-16 relative, so the usual
    # injectivity threshold would reject it; the spectral solve is exact
    rank_tol: float = 1e-20

    def __post_init__(self):
        if self.side < 16:
            raise InputError("side must be at least 16")
        if self.blur_sigma <= 0:
            raise InputError("blur_sigma must be positive")
        if self.noise_level < 0:
            raise InputError("noise_level must be non-negative")
        if self.noise_mode not in NOISE_MODES:
            raise InputError(f"noise_mode must be one of {NOISE_MODES}")
        if self.grid is None:
            self.grid = AlphaGrid.paper_default()

    @property
    def image_shape(self):
        return (self.side, self.side)

    def operator(self):
        kernel = gaussian_kernel(self.blur_sigma * self.side, self.truncate)
        return StructuredOperator.convolution(self.image_shape, kernel, rank_tol=self.rank_tol)

    def regularizer(self):
        return Regularizer.generalized_tikhonov(LinearMap.image_gradient(self.image_shape))

    def noise_std(self, clean):
        norm = float(np.linalg.norm(clean))
        if self.noise_mode == "normalized":
            return self.noise_level * norm / np.sqrt(clean.size)
        return self.noise_level * norm


@dataclass
class LargeScaleRun:
    solution: object
    reconstruction: np.ndarray = field(repr=False)

    @property
    def alpha_hat(self):
        return self.solution.alpha_hat

    @property
    def cost_curve(self):
        return self.solution.cost_curve


@dataclass
class LargeScaleResult:
    spec: LargeScaleSpec
    phantom: np.ndarray = field(repr=False)
    measurement: np.ndarray = field(repr=False)
    runs: dict = field(default_factory=dict)


def run_large_scale(spec, settings=LARGE_SCALE_SETTINGS):
    op = spec.operator()
    reg = spec.regularizer()
    x_true = generate_shepp_logan(spec.side)
    clean = op.apply(x_true)
    rng = np.random.default_rng(spec.seed)
    y = clean + spec.noise_std(clean) * rng.standard_normal(clean.shape)
    data = Dataset.single(x_true, y)
    result = LargeScaleResult(spec, x_true, y)
    for kind in spec.kinds:
        sol = grid_search(kind, data, op, reg, spec.grid, settings)
        rec = solve_batch(op, reg, y[None, :], sol.alpha_hat, settings=settings).X[0]
        result.runs[kind] = LargeScaleRun(sol, rec)
    return result
