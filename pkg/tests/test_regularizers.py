import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.fft import dctn

from bilevel_alpha.errors import InputError
from bilevel_alpha.regularizers import LinearMap, Regularizer, huber, huber_derivative

GAMMA = 0.01
vec3 = arrays(float, 3, elements=st.floats(-3, 3, allow_nan=False))


def all_regs(n=3):
    D = LinearMap.first_difference(n)
    return [
        Regularizer.tikhonov(),
        Regularizer.generalized_tikhonov(D),
        Regularizer.huber(GAMMA),
        Regularizer.generalized_huber(D, GAMMA),
        Regularizer.elastic_huber(0.01, GAMMA),
    ]


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestHuber:
    def test_quadratic_branch(self):
        assert huber(0.005, GAMMA) == pytest.approx(0.00125)

    def test_linear_branch(self):
        assert huber(1.0, GAMMA) == pytest.approx(0.995)

    def test_continuous_at_kink(self):
        assert huber(GAMMA, GAMMA) == pytest.approx(GAMMA / 2)
        assert huber_derivative(GAMMA, GAMMA) == pytest.approx(1.0)

    def test_derivative_matches_fd(self):
        s = np.linspace(-0.05, 0.05, 41) + 1e-4
        fd = (huber(s + 1e-8, GAMMA) - huber(s - 1e-8, GAMMA)) / 2e-8
        np.testing.assert_allclose(huber_derivative(s, GAMMA), fd, atol=1e-6)


class TestEval:
    def test_tikhonov(self):
        assert Regularizer.tikhonov().eval([1.0, 0.5]) == pytest.approx(0.625)

    def test_huber_branches(self):
        reg = Regularizer.huber(GAMMA)
        assert reg.eval([0.005]) == pytest.approx(0.00125)
        assert reg.eval([1.0]) == pytest.approx(0.995)

    def test_non_finite(self):
        with pytest.raises(InputError):
            Regularizer.tikhonov().eval([np.inf, 0.0])

    @given(vec3)
    def test_non_negative(self, x):
        for reg in all_regs():
            assert reg.eval(x) >= 0


class TestGradient:
    def test_tikhonov(self):
        np.testing.assert_allclose(Regularizer.tikhonov().gradient([1.0, 0.5]), [1.0, 0.5])

    def test_huber_inner(self):
        np.testing.assert_allclose(Regularizer.huber(GAMMA).gradient([0.005]), [0.5])

    def test_generalized_tikhonov(self):
        reg = Regularizer.generalized_tikhonov(LinearMap(np.array([[1.0, -1.0]])))
        np.testing.assert_allclose(reg.gradient([2.0, 1.0]), [1.0, -1.0])

    def test_first_difference_preset(self):
        np.testing.assert_array_equal(LinearMap.first_difference(2).to_dense(2), [[1.0, -1.0]])
        np.testing.assert_array_equal(LinearMap.first_difference(3).to_dense(3),
                                      [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])

    @pytest.mark.parametrize("reg", all_regs(), ids=lambda r: r.kind)
    def test_matches_finite_differences(self, reg):
        x = np.random.default_rng(0).normal(size=3)
        np.testing.assert_allclose(reg.gradient(x), fd_gradient(reg.eval, x), atol=1e-5)

    @pytest.mark.parametrize("reg", all_regs(), ids=lambda r: r.kind)
    def test_hessian_matches_finite_differences(self, reg):
        x = np.random.default_rng(1).normal(size=3)
        H = reg.hessian(x)
        fd = np.stack([fd_gradient(lambda z: reg.gradient(z)[i], x) for i in range(3)])
        np.testing.assert_allclose(H, fd, atol=1e-4)
        v = np.array([0.3, -1.0, 2.0])
        np.testing.assert_allclose(reg.hessian_vector(x, v), H @ v, atol=1e-12)


class TestBregman:
    def test_tikhonov(self):
        assert Regularizer.tikhonov().bregman([2.0, 0.0], [1.0, 0.0]) == pytest.approx(0.5)

    def test_generalized_tikhonov(self):
        reg = Regularizer.generalized_tikhonov(LinearMap(np.array([[1.0, -1.0]])))
        assert reg.bregman([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)

    @given(vec3, vec3)
    @settings(deadline=None)
    def test_non_negative_and_zero_on_diagonal(self, x, z):
        for reg in all_regs():
            assert reg.bregman(x, z) >= -1e-12
            assert reg.bregman(x, x) == pytest.approx(0.0, abs=1e-12)

    @given(vec3, vec3)
    @settings(deadline=None)
    def test_convexity_inequality(self, x, z):
        # R(x) >= R(z) + <grad R(z), x - z>
        for reg in all_regs():
            assert reg.eval(x) >= reg.linearize(x, z) - 1e-10


class TestLinearize:
    def test_self(self):
        assert Regularizer.tikhonov().linearize([1.0, 0.5], [1.0, 0.5]) == pytest.approx(0.625)

    def test_tikhonov(self):
        assert Regularizer.tikhonov().linearize([1.0, 0.5], [1.2, 0.4]) == pytest.approx(0.6)

    def test_can_be_negative(self):
        assert Regularizer.huber(GAMMA).linearize([0.0], [1.0]) == pytest.approx(-0.005)

    @given(vec3, vec3)
    @settings(deadline=None)
    def test_eval_minus_bregman(self, x, z):
        for reg in all_regs():
            assert reg.linearize(x, z) == pytest.approx(reg.eval(x) - reg.bregman(x, z), abs=1e-9)


class TestSymmetricBregman:
    def test_tikhonov(self):
        assert Regularizer.tikhonov().symmetric_bregman([2.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)

    def test_elastic_huber_positive(self):
        assert Regularizer.elastic_huber(0.01, GAMMA).symmetric_bregman([1.0, 0.0], [1.1, 0.0]) > 0

    @given(vec3, vec3)
    @settings(deadline=None)
    def test_sum_of_two_distances(self, x, z):
        for reg in all_regs():
            expect = reg.bregman(x, z) + reg.bregman(z, x)
            assert reg.symmetric_bregman(x, z) == pytest.approx(expect, abs=1e-9)
            assert reg.symmetric_bregman(x, x) == 0.0


class TestImageGradient:
    shape = (5, 4)

    def test_adjoint_against_dense(self):
        K = LinearMap.image_gradient(self.shape)
        D = K.to_dense(20)
        rng = np.random.default_rng(0)
        x, z = rng.normal(size=20), rng.normal(size=D.shape[0])
        np.testing.assert_allclose(K.apply(x), D @ x)
        np.testing.assert_allclose(K.adjoint(z), D.T @ z)

    def test_constant_image_has_zero_gradient(self):
        K = LinearMap.image_gradient(self.shape)
        np.testing.assert_array_equal(K.apply(np.full(20, 3.0)), 0.0)

    def test_gram_is_dct_diagonal(self):
        K = LinearMap.image_gradient(self.shape)
        D = K.to_dense(20)
        G = D.T @ D
        mu = K.gram_dct_spectrum(self.shape)
        x = np.random.default_rng(1).normal(size=self.shape)
        lhs = dctn((G @ x.ravel()).reshape(self.shape), norm="ortho")
        np.testing.assert_allclose(lhs, mu * dctn(x, norm="ortho"), atol=1e-12)


class TestValidation:
    def test_gamma_positive(self):
        with pytest.raises(InputError):
            Regularizer.huber(0.0)

    def test_beta_non_negative(self):
        with pytest.raises(InputError):
            Regularizer.elastic_huber(-1.0, GAMMA)

    def test_generalized_needs_map(self):
        with pytest.raises(InputError):
            Regularizer("generalized-huber", gamma=GAMMA)

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            Regularizer("l1")
