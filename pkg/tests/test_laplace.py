import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize
from scipy.integrate import trapezoid

from bayesbr.laplace import (
    laplace_fit,
    laplace_fit_batch,
    laplace_logpdf,
    laplace_sample,
    latent_log_target,
    latent_score_and_info,
    prior_fallback,
    reparameterize_single_factor,
    single_factor_design,
)
from bayesbr.likelihood import loglik_binary_conditional, loglik_continuous_marginal
from bayesbr.model import Theta, build_spec

from conftest import random_theta, simulate_truth

GRID = np.linspace(-8, 8, 2001)


def grid_moments(y, a, b):
    """Posterior mean of z and log normaliser of exp(latent_log_target) by grid quadrature (k=1)."""
    lt = np.array([latent_log_target([z], y, a, b) for z in GRID])
    m = lt.max()
    w = np.exp(lt - m)
    dz = GRID[1] - GRID[0]
    Z = trapezoid(w, dx=dz)
    return trapezoid(w * GRID, dx=dz) / Z, m + np.log(Z)


class TestReparameterise:
    def test_ez1_single_factor(self):
        sf = reparameterize_single_factor(build_spec("EZ1-p", 2, 4, 3))
        assert sf.latent_dim == 1 and sf.factor == 1

    def test_ez2_rejected(self):
        with pytest.raises(ValueError):
            reparameterize_single_factor(build_spec("EZ2", 2, 4, 3))

    def test_continuous_marginal_unchanged(self):
        spec, d = simulate_truth((5, 5, 5), seed=2)
        th = random_theta(spec, np.random.default_rng(0))
        sf = reparameterize_single_factor(spec)
        # the binary factor has no continuous loadings, so the continuous marginal is the one-factor normal
        full, _ = loglik_continuous_marginal(d, th, spec)
        from scipy import stats

        lam = th.lam[0, :2, 0]
        cov = np.outer(lam, lam) + np.diag(th.psi[0])
        want = sum(stats.multivariate_normal(th.alpha[g, :2], cov).logpdf(y) for g, y in zip(d.groups, d.y_continuous))
        assert full == pytest.approx(want, rel=1e-12)
        a, b = single_factor_design(th, sf, 1)
        np.testing.assert_array_equal(a, th.alpha[1, 2:])
        np.testing.assert_array_equal(b[:, 0], th.lam[0, 2:, 1])


class TestTarget:
    def test_no_items_is_prior(self):
        assert latent_log_target([1.3], [], [], np.zeros((0, 1))) == pytest.approx(-0.5 * 1.3**2)

    def test_zero_intercepts(self):
        assert latent_log_target([0.0], [1, 0, 1, 1], np.zeros(4), np.ones(4)) == pytest.approx(4 * np.log(0.5))

    def test_composition_with_conditional_likelihood(self):
        spec = build_spec("EZ1", 0, 4, 1)
        th = random_theta(spec, np.random.default_rng(3))
        y = np.array([1, 0, 0, 1])
        z = np.array([0.4])
        ll, _ = loglik_binary_conditional(y, th, spec, z)
        a, b = th.alpha[0], th.lam[0, :, 0]
        assert latent_log_target(z, y, a, b) == pytest.approx(ll - 0.5 * z @ z, rel=1e-12)


class TestScoreInfo:
    def test_zero_loadings_identity(self):
        _, info = latent_score_and_info([0.2], [1, 0], [0.3, -1.0], [0.0, 0.0])
        np.testing.assert_array_equal(info, np.eye(1))

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b = rng.uniform(-3, 3, 4), rng.uniform(-3, 3, (4, 2))
            y, z = rng.integers(0, 2, 4), rng.normal(size=2)
            g, _ = latent_score_and_info(z, y, a, b)
            h = 1e-6
            fd = [(latent_log_target(z + h * e, y, a, b) - latent_log_target(z - h * e, y, a, b)) / (2 * h) for e in np.eye(2)]
            np.testing.assert_allclose(g, fd, atol=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_information_eigenvalues_at_least_one(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 4))
        a, b = rng.normal(0, 3, 5), rng.normal(0, 3, (5, d))
        _, info = latent_score_and_info(rng.normal(size=d), rng.integers(0, 2, 5), a, b)
        assert np.linalg.eigvalsh(info).min() >= 1 - 1e-12


class TestFit:
    def test_zero_loadings_prior(self):
        f = laplace_fit([1, 0, 1], [0.5, -1, 2], [0.0, 0.0, 0.0])
        assert f.mode[0] == 0.0 and f.covariance[0, 0] == pytest.approx(1.0)

    def test_stationary(self):
        rng = np.random.default_rng(5)
        a, b, y = rng.uniform(-3, 3, 4), rng.uniform(-3, 3, 4), rng.integers(0, 2, 4)
        f = laplace_fit(y, a, b)
        g, _ = latent_score_and_info(f.mode, y, a, b)
        assert np.linalg.norm(g) < 1e-8

    def test_one_item_quadrature(self):
        f = laplace_fit([1], [0.0], [1.0])
        mean, _ = grid_moments([1], [0.0], [1.0])
        assert f.mode[0] > 0
        assert abs(f.mode[0] - mean) < 0.05

    def test_flip_symmetry(self):
        y = np.array([1, 0, 1, 1])
        b = np.array([0.5, -1.2, 2.0, 0.3])
        f1, f0 = laplace_fit(y, np.zeros(4), b), laplace_fit(1 - y, np.zeros(4), b)
        assert f0.mode[0] == pytest.approx(-f1.mode[0], abs=1e-12)

    def test_matches_derivative_free_optimiser(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            d = int(rng.integers(1, 3))
            a, b, y = rng.uniform(-3, 3, 4), rng.uniform(-3, 3, (4, d)), rng.integers(0, 2, 4)
            f = laplace_fit(y, a, b)
            res = optimize.minimize(lambda z: -latent_log_target(z, y, a, b), np.zeros(d), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20_000})
            np.testing.assert_allclose(f.mode, res.x, atol=1e-4)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(7)
        a, b, y = rng.uniform(-3, 3, (50, 4)), rng.uniform(-3, 3, (50, 4, 2)), rng.integers(0, 2, (50, 4)).astype(float)
        mode, chol, logdet, ok = laplace_fit_batch(jnp.asarray(y), jnp.asarray(a), jnp.asarray(b))
        assert bool(np.all(ok))
        for m in range(50):
            f = laplace_fit(y[m], a[m], b[m])
            np.testing.assert_allclose(mode[m], f.mode, atol=1e-8)
            np.testing.assert_allclose(np.asarray(chol[m] @ chol[m].T), f.covariance, atol=1e-8)
            assert float(logdet[m]) == pytest.approx(f.log_det_info, abs=1e-8)

    def test_fallback_is_prior(self):
        f = prior_fallback(2)
        assert not f.converged
        np.testing.assert_array_equal(f.covariance, np.eye(2))


class TestDensity:
    def test_logpdf_at_mode(self):
        f = laplace_fit([1, 1, 0], [0.2, -0.4, 0.1], np.array([[1.0, 0.3], [0.5, -0.2], [-1.0, 0.8]]))
        want = -0.5 * (2 * np.log(2 * np.pi) + np.linalg.slogdet(f.covariance)[1])
        assert laplace_logpdf(f.mode, f) == pytest.approx(want, rel=1e-12)

    def test_sample_mean(self):
        f = laplace_fit([1, 0], [0.5, -0.5], [1.5, 0.7])
        z = laplace_sample(f, 0, size=100_000)
        sd = np.sqrt(f.covariance[0, 0])
        assert abs(z.mean() - f.mode[0]) < 4 * sd / np.sqrt(len(z))

    def test_seeded(self):
        f = laplace_fit([1], [0.0], [1.0])
        np.testing.assert_array_equal(laplace_sample(f, 3), laplace_sample(f, 3))
