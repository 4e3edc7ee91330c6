"""Forward operators: dense matrices and matrix-free structured operators.

All operators act on the trailing axis of their input, so a stack of
vectors with shape ``(..., n)`` is mapped to shape ``(..., m)`` in one call.
"""

import numpy as np
from scipy import linalg
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from .errors import InputError, RankDeficiencyError

#: Relative singular-value threshold below which an operator counts as
#: rank deficient.
DEFAULT_RANK_TOL = 1e-10

#: Two-pixel Gaussian blur used for the deconvolution experiments.
BLUR_2X2 = np.array([[0.7274, 0.2726], [0.2726, 0.7274]])


def _as_batch(x, n, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != n:
        raise InputError(f"{name} has trailing dimension {x.shape[-1:] or ()}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite entries")
    return x


class ForwardOperator:
    """Dense ``m x n`` matrix with a cached Cholesky factor of ``A^T A``.

    The factorization is computed eagerly so that instances are immutable
    and can be shared between workers.
    """

    kind = "dense"

    def __init__(self, matrix, rank_tol=DEFAULT_RANK_TOL):
        A = np.array(matrix, dtype=float)
        if A.ndim == 1:
            A = A[None, :]
        if A.ndim != 2 or A.size == 0:
            raise InputError(f"operator must be a non-empty 2-D array, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise InputError("operator has non-finite entries")
        A.setflags(write=False)
        self.matrix = A
        self.rank_tol = rank_tol
        s = linalg.svd(A, compute_uv=False)
        self.sigma_max = float(s[0])
        self.sigma_min = float(s[-1]) if A.shape[0] >= A.shape[1] else 0.0
        gram = A.T @ A
        gram.setflags(write=False)
        self.gram_matrix = gram
        self._chol = None
        if self.is_injective():
            try:
                self._chol = linalg.cho_factor(gram)
            except linalg.LinAlgError:
                # numerically singular Gram despite the singular-value test
                self.sigma_min = 0.0

    @property
    def shape(self):
        return self.matrix.shape

    def is_injective(self):
        return self.sigma_min > self.rank_tol * self.sigma_max

    def is_square(self):
        return self.shape[0] == self.shape[1]

    def apply(self, x):
        return x @ self.matrix.T

    def adjoint(self, z):
        return z @ self.matrix

    def gram(self, x):
        return x @ self.gram_matrix

    def solve_normal(self, w):
        if self._chol is None:
            raise RankDeficiencyError(
                f"operator is not injective (sigma_min={self.sigma_min:.3e})"
            )
        w = np.asarray(w, dtype=float)
        flat = w.reshape(-1, w.shape[-1])
        return linalg.cho_solve(self._chol, flat.T).T.reshape(w.shape)

    def least_squares(self, y):
        return self.solve_normal(self.adjoint(y))

    def __repr__(self):
        return f"ForwardOperator(shape={self.shape})"


class StructuredOperator:
    """Matrix-free operator: the identity or a separable 2-D convolution.

    The convolution uses symmetric (half-sample) boundary extension with a
    symmetric kernel. Under that boundary rule the operator is diagonalized
    by the orthonormal 2-D DCT-II, which gives exact singular values and
    exact normal-equation solves.
    """

    def __init__(self, kind, n, image_shape=None, kernel=None, rank_tol=DEFAULT_RANK_TOL):
        if kind not in ("identity", "separable-2D-convolution"):
            raise InputError(f"unknown structured operator kind {kind!r}")
        self.kind = kind
        self.n = int(n)
        self.image_shape = tuple(image_shape) if image_shape is not None else None
        self.rank_tol = rank_tol
        self.kernel = None
        self._spectrum = None
        if kind == "identity":
            self.sigma_min = self.sigma_max = 1.0
            if self.image_shape is not None:
                self._spectrum = np.ones(self.image_shape)
            return
        h = np.asarray(kernel, dtype=float)
        if h.ndim != 1 or h.size % 2 == 0:
            raise InputError("convolution kernel must be 1-D with odd length")
        if not np.allclose(h, h[::-1], rtol=0, atol=1e-15):
            raise InputError("convolution kernel must be symmetric")
        radius = h.size // 2
        if radius >= min(self.image_shape):
            raise InputError("kernel radius must be smaller than the image side")
        self.kernel = h
        lam_rows = _symmetric_kernel_dct_eigenvalues(h, self.image_shape[0])
        lam_cols = _symmetric_kernel_dct_eigenvalues(h, self.image_shape[1])
        self._spectrum = np.outer(lam_rows, lam_cols)
        mags = np.abs(self._spectrum)
        self.sigma_min = float(mags.min())
        self.sigma_max = float(mags.max())

    @classmethod
    def identity(cls, n, image_shape=None):
        return cls("identity", n, image_shape=image_shape)

    @classmethod
    def convolution(cls, image_shape, kernel, rank_tol=DEFAULT_RANK_TOL):
        image_shape = tuple(int(s) for s in image_shape)
        return cls(
            "separable-2D-convolution",
            image_shape[0] * image_shape[1],
            image_shape=image_shape,
            kernel=kernel,
            rank_tol=rank_tol,
        )

    @property
    def shape(self):
        return (self.n, self.n)

    def is_injective(self):
        return self.sigma_min > self.rank_tol * self.sigma_max

    def is_square(self):
        return True

    def dct_spectrum(self):
        """Eigenvalues of the operator in the 2-D DCT-II basis, or ``None``."""
        return self._spectrum

    def _images(self, x):
        return x.reshape(x.shape[:-1] + self.image_shape)

    def apply(self, x):
        if self.kind == "identity":
            return np.array(x, dtype=float, copy=True)
        img = self._images(x)
        out = correlate1d(img, self.kernel, axis=-2, mode="reflect")
        out = correlate1d(out, self.kernel, axis=-1, mode="reflect")
        return out.reshape(x.shape)

    def adjoint(self, z):
        if self.kind == "identity":
            return np.array(z, dtype=float, copy=True)
        # computed spectrally; apply() uses direct correlation, so the
        # adjoint test compares two independent routes
        return self._spectral(z, self._spectrum)

    def gram(self, x):
        if self.kind == "identity":
            return np.array(x, dtype=float, copy=True)
        return self._spectral(x, self._spectrum**2)

    def solve_normal(self, w):
        if not self.is_injective():
            raise RankDeficiencyError(
                f"operator is not injective (sigma_min={self.sigma_min:.3e})"
            )
        if self.kind == "identity":
            return np.array(w, dtype=float, copy=True)
        return self._spectral(w, 1.0 / self._spectrum**2)

    def _spectral(self, x, multiplier):
        axes = (-2, -1)
        coeffs = dctn(self._images(np.asarray(x, dtype=float)), axes=axes, norm="ortho")
        return idctn(coeffs * multiplier, axes=axes, norm="ortho").reshape(np.shape(x))

    def least_squares(self, y):
        """``A^+ y`` in one spectral pass.

        Composing ``solve_normal(adjoint(y))`` would transform back and forth
        between bases and divide the round-off by ``sigma_min**2``.
        """
        if not self.is_injective():
            raise RankDeficiencyError(
                f"operator is not injective (sigma_min={self.sigma_min:.3e})"
            )
        if self.kind == "identity":
            return np.array(y, dtype=float, copy=True)
        return self._spectral(y, 1.0 / self._spectrum)

    def __repr__(self):
        if self.kind == "identity":
            return f"StructuredOperator.identity({self.n})"
        return f"StructuredOperator.convolution({self.image_shape}, radius={self.kernel.size // 2})"


def _symmetric_kernel_dct_eigenvalues(h, n):
    r = h.size // 2
    k = np.arange(n)
    lam = np.full(n, h[r])
    for j in range(1, r + 1):
        lam += 2.0 * h[r + j] * np.cos(np.pi * k * j / n)
    return lam


def gaussian_kernel(sigma, truncate=4.0):
    """Normalized 1-D Gaussian taps, cut at ``truncate`` standard deviations."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    radius = int(truncate * sigma + 0.5)
    t = np.arange(-radius, radius + 1, dtype=float)
    h = np.exp(-0.5 * (t / sigma) ** 2)
    return h / h.sum()


def as_operator(op, rank_tol=DEFAULT_RANK_TOL):
    if isinstance(op, (ForwardOperator, StructuredOperator)):
        return op
    return ForwardOperator(op, rank_tol=rank_tol)


def load_matrix(path, rank_tol=DEFAULT_RANK_TOL):
    """Read a whitespace-separated text matrix (one row per line)."""
    try:
        data = np.loadtxt(path, ndmin=2, comments="#")
    except ValueError as exc:
        raise InputError(f"cannot parse matrix file {path}: {exc}") from exc
    return ForwardOperator(data, rank_tol=rank_tol)


def apply(op, x):
    op = as_operator(op)
    return op.apply(_as_batch(x, op.shape[1]))


def apply_adjoint(op, z):
    op = as_operator(op)
    return op.adjoint(_as_batch(z, op.shape[0], "z"))


def least_squares_solution(op, y):
    """Solve ``A^T A x = A^T y``; requires an injective operator."""
    op = as_operator(op)
    y = _as_batch(y, op.shape[0], "y")
    return op.least_squares(y)


def solve_normal_equations(op, w):
    op = as_operator(op)
    return op.solve_normal(_as_batch(w, op.shape[1], "w"))


def smallest_singular_value(op):
    return as_operator(op).sigma_min
