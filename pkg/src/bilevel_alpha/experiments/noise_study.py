"""Positivity of the learned parameter under additive Gaussian noise."""

from dataclasses import dataclass, field

import numpy as np

from ..bilevel import AlphaGrid, Dataset, grid_search
from ..errors import InputError
from ..linops import ForwardOperator
from ..regularizers import Regularizer
from ..varsolve import DEFAULT_SETTINGS


@dataclass
class NoiseStudySpec:
    x_true: tuple = (1.0, 0.0)
    samples: int = 1000
    mean: tuple = (0.0, 0.0)
    std: tuple = (0.1, 0.1)
    reg: Regularizer = None
    grid: AlphaGrid = None
    seed: int = 0

    def __post_init__(self):
        self.x_true = np.asarray(self.x_true, dtype=float)
        n = self.x_true.size
        self.mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (n,)).copy()
        self.std = np.broadcast_to(np.asarray(self.std, dtype=float), (n,)).copy()
        if self.samples < 1:
            raise InputError("samples must be at least 1")
        if np.any(self.std <= 0):
            raise InputError("noise standard deviations must be positive")
        if self.reg is None:
            self.reg = Regularizer.elastic_huber(beta=0.01, gamma=0.01)
        if self.grid is None:
            self.grid = AlphaGrid.linear(0.0, 0.1, 50)

    def draw(self):
        """Noisy measurements ``x_true + mean + std * z``, drawn as one ``(samples, n)`` block."""
        rng = np.random.default_rng(self.seed)
        z = rng.standard_normal((self.samples, self.x_true.size))
        return Dataset.from_arrays(
            np.broadcast_to(self.x_true, z.shape), self.x_true + self.mean + self.std * z
        )


@dataclass
class NoiseStudyResult:
    cost_curve: list
    alpha_hat: float
    is_positive: bool
    dataset: Dataset = field(repr=False)
    solution: object = field(repr=False)


def run_noise_study(spec, settings=DEFAULT_SETTINGS):
    data = spec.draw()
    op = ForwardOperator(np.eye(spec.x_true.size))
    sol = grid_search("mse", data, op, spec.reg, spec.grid, settings)
    return NoiseStudyResult(sol.cost_curve, sol.alpha_hat, sol.is_positive, data, sol)
