"""Smooth convex regularizers with Bregman distances and linearizations.

Every method works on the trailing axis, so ``x`` may be a single vector or
a stack of vectors; scalar-valued methods then return one value per row.
"""

import numpy as np

from .errors import InputError


class LinearMap:
    """The map ``K`` inside ``R(x) = f(Kx)``.

    Small maps keep a dense matrix. ``image_gradient`` is matrix-free: it
    stacks vertical and horizontal forward differences, with the last
    difference along each axis set to zero so constant images map to zero.
    """

    def __init__(self, matrix=None, name="dense", image_shape=None):
        self.name = name
        self.image_shape = tuple(image_shape) if image_shape is not None else None
        self.matrix = None
        if matrix is not None:
            M = np.array(matrix, dtype=float)
            if M.ndim == 1:
                M = M[None, :]
            if M.ndim != 2 or not np.all(np.isfinite(M)):
                raise InputError("linear map must be a finite 2-D array")
            M.setflags(write=False)
            self.matrix = M

    @classmethod
    def identity(cls):
        return cls(name="identity")

    @classmethod
    def first_difference(cls, n):
        """Rows ``x_i - x_{i+1}``; for ``n = 2`` this is ``[1, -1]``."""
        if n < 2:
            raise InputError("first difference needs n >= 2")
        D = np.eye(n - 1, n) - np.eye(n - 1, n, k=1)
        return cls(D, name="first-difference")

    @classmethod
    def image_gradient(cls, image_shape):
        return cls(name="image-gradient", image_shape=image_shape)

    @property
    def is_identity(self):
        return self.name == "identity"

    def output_dim(self, n):
        if self.matrix is not None:
            return self.matrix.shape[0]
        if self.name == "image-gradient":
            return 2 * n
        return n

    def apply(self, x):
        if self.is_identity:
            return x
        if self.matrix is not None:
            return x @ self.matrix.T
        img = x.reshape(x.shape[:-1] + self.image_shape)
        dv = np.zeros_like(img)
        dh = np.zeros_like(img)
        dv[..., :-1, :] = img[..., 1:, :] - img[..., :-1, :]
        dh[..., :, :-1] = img[..., :, 1:] - img[..., :, :-1]
        return np.concatenate([dv.reshape(x.shape), dh.reshape(x.shape)], axis=-1)

    def adjoint(self, z):
        if self.is_identity:
            return z
        if self.matrix is not None:
            return z @ self.matrix
        n = z.shape[-1] // 2
        lead = z.shape[:-1]
        gv = z[..., :n].reshape(lead + self.image_shape)
        gh = z[..., n:].reshape(lead + self.image_shape)
        out = np.zeros_like(gv)
        out[..., :-1, :] -= gv[..., :-1, :]
        out[..., 1:, :] += gv[..., :-1, :]
        out[..., :, :-1] -= gh[..., :, :-1]
        out[..., :, 1:] += gh[..., :, :-1]
        return out.reshape(lead + (n,))

    def to_dense(self, n):
        if self.matrix is not None:
            return np.array(self.matrix)
        if self.is_identity:
            return np.eye(n)
        return self.apply(np.eye(n)).T

    def gram_dct_spectrum(self, image_shape):
        """Eigenvalues of ``K^T K`` in the 2-D DCT-II basis, if it is diagonal there."""
        image_shape = tuple(image_shape)
        if self.is_identity:
            return np.ones(image_shape)
        if self.name == "image-gradient" and self.image_shape == image_shape:
            mu_r = 2.0 - 2.0 * np.cos(np.pi * np.arange(image_shape[0]) / image_shape[0])
            mu_c = 2.0 - 2.0 * np.cos(np.pi * np.arange(image_shape[1]) / image_shape[1])
            return mu_r[:, None] + mu_c[None, :]
        return None

    def __repr__(self):
        if self.matrix is not None:
            return f"LinearMap({self.name}, shape={self.matrix.shape})"
        return f"LinearMap({self.name})"


def huber(s, gamma):
    """Elementwise Huber function: quadratic on ``|s| < gamma``, affine outside."""
    a = np.abs(s)
    return np.where(a >= gamma, a - 0.5 * gamma, s * s / (2.0 * gamma))


def huber_derivative(s, gamma):
    # s/gamma equals sign(s) at the kink, so either branch is exact there
    return np.where(np.abs(s) >= gamma, np.sign(s), s / gamma)


def huber_curvature(s, gamma):
    return np.where(np.abs(s) < gamma, 1.0 / gamma, 0.0)


class Regularizer:
    """Convex, continuously differentiable, non-negative regularizer.

    Kinds
    -----
    ``tikhonov``              ``0.5 * ||x||^2``
    ``generalized-tikhonov``  ``0.5 * ||Kx||^2``
    ``huber``                 ``sum_i hub(x_i)``
    ``generalized-huber``     ``sum_i hub([Kx]_i)``
    ``elastic-huber``         ``0.5 * beta * ||x||^2 + sum_i hub(x_i)``
    """

    KINDS = ("tikhonov", "generalized-tikhonov", "huber", "generalized-huber", "elastic-huber")

    def __init__(self, kind, K=None, gamma=None, beta=None):
        if kind not in self.KINDS:
            raise InputError(f"unknown regularizer kind {kind!r}")
        self.kind = kind
        if kind.startswith("generalized"):
            if K is None:
                raise InputError(f"{kind} requires a linear map K")
            self.K = K if isinstance(K, LinearMap) else LinearMap(K)
        else:
            self.K = LinearMap.identity()
        self.gamma = None
        self.beta = 0.0
        if "huber" in kind:
            if gamma is None or not gamma > 0:
                raise InputError(f"huber threshold gamma must be positive, got {gamma}")
            self.gamma = float(gamma)
        if kind == "elastic-huber":
            if beta is None or not beta >= 0:
                raise InputError(f"elastic weight beta must be non-negative, got {beta}")
            self.beta = float(beta)

    @classmethod
    def tikhonov(cls):
        return cls("tikhonov")

    @classmethod
    def generalized_tikhonov(cls, K):
        return cls("generalized-tikhonov", K=K)

    @classmethod
    def huber(cls, gamma):
        return cls("huber", gamma=gamma)

    @classmethod
    def generalized_huber(cls, K, gamma):
        return cls("generalized-huber", K=K, gamma=gamma)

    @classmethod
    def elastic_huber(cls, beta, gamma):
        return cls("elastic-huber", beta=beta, gamma=gamma)

    @property
    def is_quadratic(self):
        """True when the gradient is affine, so the lower-level problem is linear."""
        return self.gamma is None

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise InputError("regularizer argument contains non-finite entries")
        return x

    def eval(self, x):
        x = self._check(x)
        z = self.K.apply(x)
        if self.gamma is None:
            return 0.5 * np.sum(z * z, axis=-1)
        val = np.sum(huber(z, self.gamma), axis=-1)
        if self.beta:
            val = val + 0.5 * self.beta * np.sum(x * x, axis=-1)
        return val

    def gradient(self, x):
        x = self._check(x)
        z = self.K.apply(x)
        if self.gamma is None:
            return self.K.adjoint(z)
        g = self.K.adjoint(huber_derivative(z, self.gamma))
        if self.beta:
            g = g + self.beta * x
        return g

    def _curvature_weights(self, z):
        if self.gamma is None:
            return np.ones_like(z)
        return huber_curvature(z, self.gamma)

    def hessian(self, x):
        """Dense (generalized) Hessian, shape ``x.shape + (n,)``.

        On the Huber kink this is the one-sided curvature of the outer branch.
        """
        x = self._check(x)
        n = x.shape[-1]
        Kd = self.K.to_dense(n)
        w = self._curvature_weights(self.K.apply(x))
        H = np.einsum("...p,pi,pj->...ij", w, Kd, Kd)
        if self.beta:
            H = H + self.beta * np.eye(n)
        return H

    def hessian_vector(self, x, v):
        w = self._curvature_weights(self.K.apply(x))
        out = self.K.adjoint(w * self.K.apply(v))
        if self.beta:
            out = out + self.beta * v
        return out

    def bregman(self, x, z):
        x, z = self._check(x), self._check(z)
        return self.eval(x) - self.eval(z) - np.sum(self.gradient(z) * (x - z), axis=-1)

    def linearize(self, x, z):
        """First-order expansion of ``R`` around ``z``, evaluated at ``x``."""
        x, z = self._check(x), self._check(z)
        return self.eval(z) + np.sum(self.gradient(z) * (x - z), axis=-1)

    def symmetric_bregman(self, x, z):
        x, z = self._check(x), self._check(z)
        return np.sum((self.gradient(x) - self.gradient(z)) * (x - z), axis=-1)

    def describe(self):
        parts = [self.kind]
        if not self.K.is_identity:
            parts.append(f"K={self.K.name}")
        if self.gamma is not None:
            parts.append(f"gamma={self.gamma:g}")
        if self.kind == "elastic-huber":
            parts.append(f"beta={self.beta:g}")
        return ", ".join(parts)

    def __repr__(self):
        return f"Regularizer({self.describe()})"
