"""Prior stack: log densities (jax-traceable) and a numpy prior sampler."""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import gammaln, multigammaln
from scipy import stats

from bayesbr.model import (
    ModelSpec,
    PriorConfig,
    Theta,
    constrain,
    cpc_pairs,
    cpcs_of_corr,
    layout,
    unconstrain,
    validate_theta,
)

LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class PriorScales:
    """Data-resolved prior constants for one model spec."""

    loading_sd: np.ndarray  # (p, k); 0 where the loading is fixed or structurally zero
    ig_shape: float
    ig_scale: np.ndarray  # (p_c,)
    lkj_eta: float
    iw_dof: float
    alpha_sd: float


def pooled_sample_covariance(yc: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Within-group (pooled) sample covariance of the continuous block."""
    yc = np.asarray(yc, dtype=float)
    if yc.shape[1] == 0:
        return np.zeros((0, 0))
    resid = yc.copy()
    for g in np.unique(groups):
        sel = groups == g
        resid[sel] -= yc[sel].mean(axis=0)
    dof = max(len(yc) - len(np.unique(groups)), 1)
    return resid.T @ resid / dof


def prior_scales(spec: ModelSpec, cfg: PriorConfig, S_y: np.ndarray) -> PriorScales:
    S_y = np.atleast_2d(np.asarray(S_y, dtype=float)) if spec.p_c else np.zeros((0, 0))
    if spec.p_c:
        prec_diag = np.diag(np.linalg.inv(S_y))
        ig_scale = (cfg.c0 - 1.0) / prec_diag
    else:
        ig_scale = np.zeros(0)
    sd = np.zeros((spec.p, spec.k))
    for i, f in spec.free_loadings:
        if not spec.principal[i, f]:
            sd[i, f] = cfg.crossloading_sd
        elif i >= spec.p_c:
            sd[i, f] = cfg.loading_sd_binary
        elif cfg.loading_sd_continuous is not None:
            sd[i, f] = cfg.loading_sd_continuous
        else:
            anchor = spec.anchors[f]
            sd[i, f] = 2.0 * np.sqrt(S_y[anchor, anchor])
    iw = cfg.iw_dof if cfg.iw_dof is not None else spec.p_b + 6
    return PriorScales(sd, cfg.c0, ig_scale, cfg.lkj_eta, float(iw), cfg.alpha_sd)


# ---------------------------------------------------------------------------
# densities


def normal_logpdf(x, mean, sd):
    return -0.5 * LOG_2PI - jnp.log(sd) - 0.5 * ((x - mean) / sd) ** 2


def invgamma_logpdf(x, shape, scale):
    return shape * jnp.log(scale) - gammaln(shape) - (shape + 1.0) * jnp.log(x) - scale / x


def beta_sym_logpdf_pm1(z, b):
    """Log density on (-1, 1) of 2*Beta(b, b) - 1."""
    return (b - 1.0) * (jnp.log1p(z) + jnp.log1p(-z)) - (2 * b - 1) * jnp.log(2.0) - (
        2 * gammaln(b) - gammaln(2 * b)
    )


def lkj_logpdf(R, eta):
    """LKJ(eta) log density of a d x d correlation matrix, normalised.

    Written through the canonical partial correlations: the CPC in column
    j is 2*Beta(b_j, b_j)-1 with b_j = eta + (d - 2 - j)/2, and the density
    of R is the product of those divided by the Jacobian CPC -> R.
    """
    d = R.shape[-1]
    if d < 2:
        return jnp.zeros(())
    z = cpcs_of_corr(R)
    out = jnp.zeros(())
    for pos, (i, j) in enumerate(cpc_pairs(d)):
        b = eta + (d - 2 - j) / 2.0
        out = out + beta_sym_logpdf_pm1(z[pos], b) - 0.5 * (d - j - 2) * jnp.log1p(-z[pos] ** 2)
    return out


def invwishart_logpdf(X, dof, scale):
    d = X.shape[-1]
    _, logdet_x = jnp.linalg.slogdet(X)
    _, logdet_s = jnp.linalg.slogdet(scale)
    return (
        0.5 * dof * logdet_s
        - 0.5 * dof * d * jnp.log(2.0)
        - multigammaln(0.5 * dof, d)
        - 0.5 * (dof + d + 1) * logdet_x
        - 0.5 * jnp.trace(jnp.linalg.solve(X, scale))
    )


def _log_prior(theta: Theta, spec: ModelSpec, sc: PriorScales):
    lp = jnp.sum(normal_logpdf(theta.alpha, 0.0, sc.alpha_sd))
    G = spec.G
    if spec.is_factor:
        if spec.free_loadings:
            ii, ff = (np.asarray(a) for a in zip(*spec.free_loadings))
            sd = jnp.asarray(sc.loading_sd[ii, ff])
            lp = lp + jnp.sum(normal_logpdf(theta.lam[..., ii, ff], 0.0, sd))
        if spec.p_c:
            lp = lp + jnp.sum(invgamma_logpdf(theta.psi, sc.ig_shape, jnp.asarray(sc.ig_scale)))
        if spec.correlated:
            lp = lp + sum(lkj_logpdf(theta.phi[g], sc.lkj_eta) for g in range(G))
        if spec.residual:
            eye = jnp.eye(spec.p_b)
            lp = lp + sum(invwishart_logpdf(theta.omega[g], sc.iw_dof, eye) for g in range(G))
        return lp
    if spec.p_c:
        var = jnp.diagonal(theta.sigma, axis1=-2, axis2=-1)
        lp = lp + jnp.sum(invgamma_logpdf(var, sc.ig_shape, jnp.asarray(sc.ig_scale)))
        if spec.variant == "SAT" and spec.p_c > 1:
            for g in range(G):
                sd = jnp.sqrt(var[g])
                lp = lp + lkj_logpdf(theta.sigma[g] / jnp.outer(sd, sd), sc.lkj_eta)
    return lp


def log_prior(theta: Theta, spec: ModelSpec, cfg: PriorConfig, S_y: np.ndarray):
    """Log prior density of ``theta`` and its gradient (a Theta-shaped pytree).

    Normal on principal loadings, N(0, 0.1^2) on cross-loadings,
    inverse-gamma(c0, (c0-1)/(S_y^-1)_jj) on idiosyncratic variances,
    LKJ on factor correlations, inverse-Wishart(I, dof) on the residual
    covariance, N(0, alpha_sd^2) on intercepts. SAT/IND put the same
    inverse-gamma on their variances and LKJ on the SAT correlation.
    """
    validate_theta(theta, spec)
    sc = prior_scales(spec, cfg, S_y)
    th = theta.map(lambda a: jnp.asarray(a, dtype=float))
    val, grad = jax.value_and_grad(lambda t: _log_prior(t, spec, sc))(th)
    return float(val), grad.numpy()


def log_prior_unconstrained(q, spec: ModelSpec, sc: PriorScales):
    """Prior density of the unconstrained vector (prior at constrain(q) plus log-Jacobian)."""
    theta, logjac = constrain(q, spec)
    return _log_prior(theta, spec, sc) + logjac


# ---------------------------------------------------------------------------
# sampling


def sample_lkj(d: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Draw an LKJ(eta) correlation matrix by sampling its canonical partial correlations."""
    from bayesbr.model import corr_from_unconstrained

    if d < 2:
        return np.ones((1, 1))
    y = []
    for i, j in cpc_pairs(d):
        b = eta + (d - 2 - j) / 2.0
        z = 2.0 * rng.beta(b, b) - 1.0
        y.append(np.arctanh(np.clip(z, -1 + 1e-12, 1 - 1e-12)))
    R, _ = corr_from_unconstrained(jnp.asarray(y), d)
    R = np.asarray(R)
    return 0.5 * (R + R.T)


def sample_prior_theta(spec: ModelSpec, sc: PriorScales, rng: np.random.Generator) -> Theta:
    G, R, p, k = spec.G, spec.n_groups, spec.p, spec.k
    alpha = rng.normal(0.0, sc.alpha_sd, size=(R, p))
    if spec.is_factor:
        lam = np.zeros((G, p, k))
        for f, (a, fx) in enumerate(zip(spec.anchors, spec.fixed_anchor)):
            if fx:
                lam[:, a, f] = 1.0
        for g in range(G):
            for i, f in spec.free_loadings:
                lam[g, i, f] = rng.normal(0.0, sc.loading_sd[i, f])
        if spec.correlated:
            phi = np.stack([sample_lkj(k, sc.lkj_eta, rng) for _ in range(G)])
        else:
            phi = np.broadcast_to(np.eye(k), (G, k, k)).copy()
        psi = np.stack([stats.invgamma.rvs(sc.ig_shape, scale=sc.ig_scale, random_state=rng) for _ in range(G)]).reshape(
            G, spec.p_c
        )
        omega = None
        if spec.residual:
            omega = np.stack(
                [
                    np.atleast_2d(stats.invwishart.rvs(df=sc.iw_dof, scale=np.eye(spec.p_b), random_state=rng))
                    for _ in range(G)
                ]
            )
        return Theta(alpha, lam, phi, psi=psi, omega=omega)
    var = np.stack([stats.invgamma.rvs(sc.ig_shape, scale=sc.ig_scale, random_state=rng) for _ in range(G)]).reshape(
        G, spec.p_c
    )
    sigma = np.zeros((G, spec.p_c, spec.p_c))
    for g in range(G):
        corr = sample_lkj(spec.p_c, sc.lkj_eta, rng) if spec.variant == "SAT" else np.eye(spec.p_c)
        sd = np.sqrt(var[g])
        sigma[g] = corr * np.outer(sd, sd)
    return Theta(alpha, np.zeros((G, p, 0)), np.zeros((G, 0, 0)), sigma=sigma)


def sample_prior(spec: ModelSpec, sc: PriorScales, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent prior draws on the unconstrained scale, shape (size, dim)."""
    out = np.empty((size, layout(spec).dim))
    for m in range(size):
        out[m] = unconstrain(sample_prior_theta(spec, sc, rng), spec)
    return out
