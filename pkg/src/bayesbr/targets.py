"""Posterior targets shared by the batch sampler and the particle sampler.

A target bundles a dataset with a model and exposes jax-traceable log
densities on the unconstrained scale:

* ``log_posterior(q, mask)``: prior plus the marginal likelihood of the
  subjects selected by ``mask`` (only when the latent block integrates out);
* ``log_joint(x, mask)``: prior plus the augmented likelihood with one
  whitened latent vector per subject, ``x = [q, eps.ravel()]``. Rows outside
  ``mask`` keep their N(0, I) prior, so the same function serves every
  prefix of a sequential run without recompiling;
* ``row_loglik(q, i)`` and ``row_laplace(q, i, key)`` for one incoming subject.
"""

from __future__ import annotations

from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from bayesbr.data import Dataset
from bayesbr.laplace import gaussian_logpdf_chol, laplace_fit_batch, std_normal_logpdf
from bayesbr.likelihood import (
    LOG_2PI,
    _binary_loglik_latent,
    _latent_design,
    _loglik_augmented,
    _loglik_continuous,
    _loglik_marginal,
    bernoulli_logit_logpmf,
    group_index,
)
from bayesbr.model import ModelSpec, PriorConfig, constrain, layout
from bayesbr.priors import (
    PriorScales,
    _log_prior,
    pooled_sample_covariance,
    prior_scales,
    sample_prior,
)


class ModelTarget:
    """Posterior of ``spec`` given ``data`` (unconstrained coordinates)."""

    def __init__(
        self,
        data: Dataset,
        spec: ModelSpec,
        prior: PriorConfig = PriorConfig(),
        S_y: Optional[np.ndarray] = None,
        n_nodes: Optional[int] = None,
        marginal: Optional[bool] = None,
    ):
        if (data.schema.p_c, data.schema.p_b, data.schema.n_groups) != (spec.p_c, spec.p_b, spec.n_groups):
            raise ValueError("dataset schema does not match the model spec")
        self.data = data
        self.spec = spec
        self.prior = prior
        if S_y is None:
            S_y = pooled_sample_covariance(data.y_continuous, data.groups) if spec.p_c else np.zeros((0, 0))
        self.S_y = np.asarray(S_y, dtype=float)
        self.scales: PriorScales = prior_scales(spec, prior, self.S_y)
        self.n_nodes = n_nodes
        self.marginal = spec.has_marginal if marginal is None else bool(marginal)
        if self.marginal and not spec.has_marginal:
            raise ValueError(f"{spec.name} has no closed-form marginal likelihood")
        self.dim = layout(spec).dim
        self.latent_dim = spec.latent_dim if spec.p_b else 0
        self.n = data.n
        self.yc = jnp.asarray(data.y_continuous)
        self.yb = jnp.asarray(data.y_binary)
        self.grp = jnp.asarray(data.groups)
        self.groups = np.asarray(data.groups)

    # -- densities -------------------------------------------------------

    def log_prior(self, q):
        theta, logjac = constrain(q, self.spec)
        return _log_prior(theta, self.spec, self.scales) + logjac

    def loglik_rows(self, q):
        """(n,) per-subject marginal log-likelihood."""
        theta, _ = constrain(q, self.spec)
        return _loglik_marginal(theta, self.spec, self.yc, self.yb, self.grp, self.n_nodes)

    def log_posterior(self, q, mask):
        return self.log_prior(q) + jnp.sum(jnp.where(mask, self.loglik_rows(q), 0.0))

    def split(self, x):
        return x[: self.dim], x[self.dim :].reshape(self.n, self.latent_dim)

    def log_joint(self, x, mask):
        q, eps = self.split(x)
        theta, logjac = constrain(q, self.spec)
        lp = _log_prior(theta, self.spec, self.scales) + logjac
        aug = _loglik_augmented(theta, self.spec, self.yc, self.yb, self.grp, eps)
        free = std_normal_logpdf(eps)
        return lp + jnp.sum(jnp.where(mask, aug, free))

    def batch_logdensity(self):
        """Full-data log density for batch sampling (marginal when available, else augmented)."""
        mask = jnp.ones(self.n, dtype=bool)
        if self.marginal:
            return lambda x: self.log_posterior(x, mask)
        return lambda x: self.log_joint(x, mask)

    # -- single incoming subject ----------------------------------------

    def _row(self, i):
        return self.yc[i][None], self.yb[i][None], self.grp[i][None]

    def row_loglik(self, q, i):
        theta, _ = constrain(q, self.spec)
        yc, yb, g = self._row(i)
        return _loglik_marginal(theta, self.spec, yc, yb, g, self.n_nodes)[0]

    def _row_design(self, theta, i):
        yc, yb, g = self._row(i)
        offset, B = _latent_design(theta, self.spec, yc, g)
        return offset[0], B[group_index(self.spec, g)][0], yb[0], _loglik_continuous(theta, self.spec, yc, g)[0]

    def row_laplace(self, q, i, key):
        """Laplace-proposal draw for subject ``i``.

        Returns (log incremental weight, eps draw, binary linear predictor,
        converged flag). The weight is f(y_c) Bern(y_b | eta) N(eps) / q_L(eps).
        """
        theta, _ = constrain(q, self.spec)
        offset, B, yb, ll_c = self._row_design(theta, i)
        mode, chol, _, ok = laplace_fit_batch(yb, offset, B)
        xi = jax.random.normal(key, mode.shape)
        eps = mode + chol @ xi
        eta = offset + B @ eps
        logu = (
            ll_c
            + jnp.sum(bernoulli_logit_logpmf(yb, eta))
            + std_normal_logpdf(eps)
            - gaussian_logpdf_chol(eps, mode, chol)
        )
        return logu, eps, eta, ok

    def refresh_latent(self, q, eps, mask, key):
        """Independence Metropolis update of every absorbed subject's latent vector.

        Proposals come from each subject's Laplace approximation at the
        current parameters. Returns (eps, acceptance rate over absorbed rows).
        """
        theta, _ = constrain(q, self.spec)
        offset, B = _latent_design(theta, self.spec, self.yc, self.grp)
        Bsub = B[group_index(self.spec, self.grp)]
        mode, chol, _, _ = laplace_fit_batch(self.yb, offset, Bsub)
        k1, k2 = jax.random.split(key)
        prop = mode + jnp.einsum("nde,ne->nd", chol, jax.random.normal(k1, eps.shape))

        def target(e):
            return _binary_loglik_latent(self.yb, offset, Bsub, e) + std_normal_logpdf(e)

        log_ratio = target(prop) - target(eps) + gaussian_logpdf_chol(eps, mode, chol) - gaussian_logpdf_chol(prop, mode, chol)
        accept = (jnp.log(jax.random.uniform(k2, (self.n,))) < log_ratio) & mask
        new = jnp.where(accept[:, None], prop, eps)
        rate = jnp.sum(accept) / jnp.maximum(jnp.sum(mask), 1)
        return new, rate

    def linear_predictor(self, q, eps):
        """(n, p_b) binary linear predictors at the given latent vectors."""
        theta, _ = constrain(q, self.spec)
        offset, B = _latent_design(theta, self.spec, self.yc, self.grp)
        return offset + jnp.einsum("nid,nd->ni", B[group_index(self.spec, self.grp)], eps)

    # -- particles -------------------------------------------------------

    def sample_prior(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return sample_prior(self.spec, self.scales, rng, size)

    def intercepts(self, Q) -> np.ndarray:
        """(N, R, p) intercepts of unconstrained particles."""
        Q = np.asarray(Q)
        R, p = self.spec.n_groups, self.spec.p
        return Q[:, : R * p].reshape(len(Q), R, p)

    def fold(self, Q, E=None):
        """Reflect each particle so every free anchor loading is nonnegative.

        Acts on unconstrained coordinates (loadings, factor-correlation
        partial correlations) and on the whitened latents of the flipped
        factor. The joint target is invariant under this map.
        """
        return fold_unconstrained(self.spec, Q, E, self.groups)

    def initial_point(self, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
        """Data-informed starting point, falling back to prior draws."""
        mask = jnp.ones(self.n, dtype=bool)
        f = jax.jit(self.log_posterior if self.marginal else self.log_joint)
        x0 = data_informed_start(self)
        if not self.marginal:
            x0 = np.concatenate([x0, np.zeros(self.n * self.latent_dim)])
        if np.isfinite(float(f(jnp.asarray(x0), mask))):
            return x0
        for _ in range(max_tries):
            q = self.sample_prior(rng, 1)[0]
            x = q if self.marginal else np.concatenate([q, np.zeros(self.n * self.latent_dim)])
            if np.isfinite(float(f(jnp.asarray(x), mask))):
                return x
        raise ValueError(f"non-finite target at init after {max_tries} retries from prior draws")


def fold_unconstrained(spec: ModelSpec, Q, E=None, groups=None):
    Q = np.array(Q, dtype=float, copy=True)
    E = None if E is None else np.array(E, dtype=float, copy=True)
    if not spec.is_factor or all(spec.fixed_anchor):
        return Q, E
    lay = layout(spec)
    G, nf = spec.G, len(spec.free_loadings)
    load = Q[:, lay.slices["loadings"]].reshape(len(Q), G, nf)
    pos = {lf: j for j, lf in enumerate(spec.free_loadings)}
    signs = np.ones((len(Q), G, spec.k))
    for f, (a, fx) in enumerate(zip(spec.anchors, spec.fixed_anchor)):
        if not fx:
            signs[:, :, f] = np.where(load[:, :, pos[(a, f)]] < 0, -1.0, 1.0)
    col = np.asarray([f for _, f in spec.free_loadings], dtype=int)
    Q[:, lay.slices["loadings"]] = (load * signs[:, :, col]).reshape(len(Q), -1)
    if spec.correlated:
        if spec.k != 2:
            raise NotImplementedError("reflection of correlation parameters implemented for two factors")
        sl = lay.slices["phi"]
        Q[:, sl] = Q[:, sl] * (signs[:, :, 0] * signs[:, :, 1])
    if E is not None and E.shape[-1]:
        bf = list(spec.binary_factors)
        g_of = np.zeros(E.shape[1], dtype=int) if spec.pooled or groups is None else np.asarray(groups)
        s = signs[:, g_of][:, :, bf]  # (N, n, |bf|)
        E[:, :, : len(bf)] *= s
    return Q, E


def data_informed_start(target: ModelTarget) -> np.ndarray:
    """Intercepts at group means (logits for binary items), unit-scale structure."""
    from bayesbr.model import cov_to_unconstrained

    spec, d = target.spec, target.data
    lay = layout(spec)
    q = np.zeros(lay.dim)
    R, p, pc = spec.n_groups, spec.p, spec.p_c
    alpha = np.zeros((R, p))
    for r in range(R):
        rows = d.y[d.groups == r]
        if len(rows):
            alpha[r, :pc] = rows[:, :pc].mean(axis=0)
            prop = np.clip(rows[:, pc:].mean(axis=0), 0.02, 0.98)
            alpha[r, pc:] = np.log(prop / (1 - prop))
    q[lay.slices["alpha"]] = alpha.ravel()
    var = np.diag(target.S_y) if pc else np.zeros(0)
    G = spec.G
    if spec.is_factor:
        init = np.array([0.1 if not spec.principal[i, f] else 0.5 for i, f in spec.free_loadings])
        for j, (i, f) in enumerate(spec.free_loadings):
            if i < pc and spec.principal[i, f]:
                a = spec.anchors[f]
                init[j] = np.sqrt(var[i] / max(var[a], 1e-12))
        q[lay.slices["loadings"]] = np.tile(init, G)
        q[lay.slices["psi"]] = np.tile(np.log(np.maximum(0.5 * var, 1e-3)), G)
        if spec.residual:
            q[lay.slices["omega"]] = np.tile(cov_to_unconstrained(0.25 * np.eye(spec.p_b)), G)
    elif pc:
        q[lay.slices["variances"]] = np.tile(np.log(np.maximum(var, 1e-3)), G)
    return q


class NormalMeanTarget:
    """Conjugate toy: y_i ~ N(mu, sigma^2), mu ~ N(m0, s0^2), sigma known.

    Implements the same interface as :class:`ModelTarget` for the particle
    sampler and provides the analytic posterior and evidence.
    """

    latent_dim = 0
    marginal = True
    dim = 1

    def __init__(self, y, sigma: float = 1.0, prior_mean: float = 0.0, prior_sd: float = 10.0):
        self.y = np.asarray(y, dtype=float)
        self.n = len(self.y)
        self.sigma, self.m0, self.s0 = float(sigma), float(prior_mean), float(prior_sd)
        self._y = jnp.asarray(self.y)
        self.groups = np.zeros(self.n, dtype=int)

    def log_prior(self, q):
        return -0.5 * LOG_2PI - jnp.log(self.s0) - 0.5 * ((q[0] - self.m0) / self.s0) ** 2

    def loglik_rows(self, q):
        return -0.5 * LOG_2PI - jnp.log(self.sigma) - 0.5 * ((self._y - q[0]) / self.sigma) ** 2

    def log_posterior(self, q, mask):
        return self.log_prior(q) + jnp.sum(jnp.where(mask, self.loglik_rows(q), 0.0))

    def row_loglik(self, q, i):
        return -0.5 * LOG_2PI - jnp.log(self.sigma) - 0.5 * ((self._y[i] - q[0]) / self.sigma) ** 2

    def sample_prior(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.m0, self.s0, size=(size, 1))

    def fold(self, Q, E=None):
        return np.asarray(Q), E

    def posterior(self, n: Optional[int] = None):
        """Analytic posterior (mean, sd) after the first ``n`` observations."""
        y = self.y[: self.n if n is None else n]
        prec = 1 / self.s0**2 + len(y) / self.sigma**2
        mean = (self.m0 / self.s0**2 + y.sum() / self.sigma**2) / prec
        return mean, np.sqrt(1 / prec)

    def log_evidence(self, n: Optional[int] = None) -> float:
        """log of the marginal density of the first ``n`` observations."""
        from scipy.stats import multivariate_normal

        y = self.y[: self.n if n is None else n]
        if len(y) == 0:
            return 0.0
        cov = self.sigma**2 * np.eye(len(y)) + self.s0**2
        return float(multivariate_normal(np.full(len(y), self.m0), cov).logpdf(y))


__all__ = ["ModelTarget", "NormalMeanTarget", "data_informed_start", "fold_unconstrained"]
