"""Likelihood pieces for every model variant (jax-traceable).

Conventions: ``yc`` is (n, p_c), ``yb`` is (n, p_b), ``grp`` is (n,) int group
indices. Functions prefixed with an underscore take a traced :class:`Theta`
and return per-subject arrays; the public wrappers take a Dataset and return
``(value, gradient)``.

Binary items are handled through a whitened latent vector ``eps ~ N(0, I)``
per subject. Conditional on the subject's continuous outcomes, the factor
scores loading on binary items are Gaussian, so the binary linear predictor
is ``eta = offset_i + B_g @ eps_i`` (plus, for AZ variants, the residual
effects stacked into the same whitened vector). EZ models have a latent
block of dimension one or two and are integrated by Gauss-Hermite
quadrature; AZ models keep the block as sampled latent variables.
"""

from __future__ import annotations

from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from bayesbr.model import ModelSpec, Theta, validate_theta

LOG_2PI = float(np.log(2 * np.pi))


def group_index(spec: ModelSpec, grp):
    """Covariance-block index per subject (0 for pooled models)."""
    return jnp.zeros_like(grp) if spec.pooled else grp


def _continuous_cov(theta: Theta, spec: ModelSpec):
    """(G, p_c, p_c) model-implied covariance of the continuous block."""
    if not spec.is_factor:
        return theta.sigma
    pc = spec.p_c
    lc = theta.lam[:, :pc, :]
    cov = jnp.einsum("gik,gkl,gjl->gij", lc, theta.phi, lc)
    return cov + jax.vmap(jnp.diag)(theta.psi)


def marginal_covariance(theta: Theta, spec: ModelSpec, group: int) -> np.ndarray:
    """Covariance of the continuous block for treatment ``group`` (factors integrated out)."""
    g = 0 if spec.pooled else group
    return np.asarray(_continuous_cov(theta.map(jnp.asarray), spec)[g])


def _mvn_logpdf_grouped(resid, cov, gidx):
    """Sum-free per-subject Gaussian log densities with group-indexed covariances."""
    pc = resid.shape[-1]
    chol = jnp.linalg.cholesky(cov)
    logdet = 2.0 * jnp.sum(jnp.log(jnp.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    prec = jax.vmap(lambda L: jax.scipy.linalg.cho_solve((L, True), jnp.eye(pc)))(chol)
    quad = jnp.einsum("ni,nij,nj->n", resid, prec[gidx], resid)
    return -0.5 * (pc * LOG_2PI + logdet[gidx] + quad)


def _loglik_continuous(theta: Theta, spec: ModelSpec, yc, grp):
    if not spec.p_c:
        return jnp.zeros(yc.shape[0])
    resid = yc - theta.alpha[grp, : spec.p_c]
    return _mvn_logpdf_grouped(resid, _continuous_cov(theta, spec), group_index(spec, grp))


def _latent_design(theta: Theta, spec: ModelSpec, yc, grp, conditional: bool = True):
    """Offsets (n, p_b) and whitened loadings (G, p_b, d) for the binary block.

    With ``conditional=True`` the factor scores are conditioned on the
    subject's continuous outcomes (continuous factors integrated out);
    otherwise they keep their prior N(0, Phi).
    """
    pc, pb = spec.p_c, spec.p_b
    alpha_b = theta.alpha[grp, pc:]
    if not spec.is_factor:
        return alpha_b, jnp.zeros((spec.G, pb, 0))
    bf = np.asarray(spec.binary_factors, dtype=int)
    lam_b = theta.lam[:, pc:, :][:, :, bf]  # (G, pb, dz)
    gidx = group_index(spec, grp)
    if conditional and pc:
        lc = theta.lam[:, :pc, :]  # (G, pc, k)
        w = lc / theta.psi[:, :, None]
        prec = jnp.linalg.inv(theta.phi) + jnp.einsum("gik,gil->gkl", lc, w)
        V = jnp.linalg.inv(prec)
        V = 0.5 * (V + jnp.swapaxes(V, -1, -2))
        resid = yc - theta.alpha[grp, :pc]
        m = jnp.einsum("nkl,nil,ni->nk", V[gidx], w[gidx], resid)[:, bf]
        offset = alpha_b + jnp.einsum("nik,nk->ni", lam_b[gidx], m)
        Vb = V[:, bf][:, :, bf]
    else:
        offset = alpha_b
        Vb = theta.phi[:, bf][:, :, bf]
    B = jnp.einsum("gik,gkl->gil", lam_b, jnp.linalg.cholesky(Vb))
    if spec.residual:
        B = jnp.concatenate([B, jnp.linalg.cholesky(theta.omega)], axis=-1)
    return offset, B


def bernoulli_logit_logpmf(y, eta):
    """log Bernoulli(y | sigmoid(eta)), elementwise."""
    return y * eta - jnp.logaddexp(0.0, eta)


def _binary_loglik_latent(yb, offset, Bsub, eps):
    """Per-subject sum_j log Bernoulli given whitened latents eps (n, d)."""
    eta = offset + jnp.einsum("nid,nd->ni", Bsub, eps)
    return jnp.sum(bernoulli_logit_logpmf(yb, eta), axis=-1)


@lru_cache(maxsize=None)
def gauss_hermite(d: int, n_nodes: int):
    """Tensor Gauss-Hermite rule for E[f(x)], x ~ N(0, I_d): nodes (Q, d), log weights (Q,)."""
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / np.sqrt(2 * np.pi)
    if d == 0:
        return np.zeros((1, 0)), np.zeros(1)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrid = np.meshgrid(*([w] * d), indexing="ij")
    logw = np.sum(np.log(np.stack([g.ravel() for g in wgrid], axis=-1)), axis=-1)
    return nodes, logw


def default_nodes(d: int) -> int:
    return 40 if d <= 1 else 20


def _binary_marginal(yb, offset, Bsub, n_nodes=None):
    """Per-subject log of the binary-block likelihood with the latent block integrated out."""
    d = Bsub.shape[-1]
    nodes, logw = gauss_hermite(d, n_nodes or default_nodes(d))
    eta = offset[:, None, :] + jnp.einsum("nid,qd->nqi", Bsub, jnp.asarray(nodes))
    ll = jnp.sum(bernoulli_logit_logpmf(yb[:, None, :], eta), axis=-1)
    return jax.scipy.special.logsumexp(ll + jnp.asarray(logw), axis=-1)


def _loglik_marginal(theta: Theta, spec: ModelSpec, yc, yb, grp, n_nodes=None):
    """Per-subject log f(y_i | theta) for variants that admit it (SAT, IND, EZ1, EZ2)."""
    if not spec.has_marginal:
        raise ValueError(f"{spec.name} has no closed-form marginal likelihood")
    out = _loglik_continuous(theta, spec, yc, grp)
    if spec.p_b:
        offset, B = _latent_design(theta, spec, yc, grp)
        Bsub = B[group_index(spec, grp)]
        if Bsub.shape[-1] == 0:
            out = out + jnp.sum(bernoulli_logit_logpmf(yb, offset), axis=-1)
        else:
            out = out + _binary_marginal(yb, offset, Bsub, n_nodes)
    return out


def _loglik_augmented(theta: Theta, spec: ModelSpec, yc, yb, grp, eps):
    """Per-subject log f(y_i | theta, eps_i) + log N(eps_i | 0, I)."""
    out = _loglik_continuous(theta, spec, yc, grp)
    d = eps.shape[-1]
    if spec.p_b:
        offset, B = _latent_design(theta, spec, yc, grp)
        out = out + _binary_loglik_latent(yb, offset, B[group_index(spec, grp)], eps)
    return out - 0.5 * jnp.sum(eps**2, axis=-1) - 0.5 * d * LOG_2PI


# ---------------------------------------------------------------------------
# public wrappers


def _arrays(d):
    return jnp.asarray(d.y_continuous), jnp.asarray(d.y_binary), jnp.asarray(d.groups)


def _as_jnp(theta: Theta) -> Theta:
    return theta.map(lambda a: jnp.asarray(a, dtype=float))


def loglik_continuous_marginal(d, theta: Theta, spec: ModelSpec):
    """Sum over subjects of log N(y_i^cont | alpha_r, marginal covariance); returns (value, grad)."""
    if not spec.p_c:
        raise ValueError("model has no continuous items")
    validate_theta(theta, spec)
    yc, _, grp = _arrays(d)
    fn = lambda t: jnp.sum(_loglik_continuous(t, spec, yc, grp))  # noqa: E731
    val, grad = jax.value_and_grad(fn)(_as_jnp(theta))
    return float(val), grad.numpy()


def loglik_binary_conditional(y_bin, theta: Theta, spec: ModelSpec, z, u=None, group: int = 0):
    """sum_j log Bernoulli(y_j | sigmoid(alpha_r + Lambda z (+ u))) over binary items.

    Returns the value and its gradient with respect to ``z``.
    """
    pc = spec.p_c
    g = 0 if spec.pooled else group
    alpha_b = jnp.asarray(theta.alpha)[group, pc:]
    lam_b = jnp.asarray(theta.lam)[g, pc:, :]
    y = jnp.asarray(y_bin, dtype=float)

    def fn(zz):
        eta = alpha_b + lam_b @ zz
        if u is not None:
            eta = eta + jnp.asarray(u)
        return jnp.sum(bernoulli_logit_logpmf(y, eta))

    val, grad = jax.value_and_grad(fn)(jnp.asarray(z, dtype=float))
    return float(val), np.asarray(grad)


def loglik_marginal(d, theta: Theta, spec: ModelSpec, n_nodes=None):
    """Full-data log f(Y | theta) for SAT/IND/EZ models; returns (value, grad)."""
    validate_theta(theta, spec)
    yc, yb, grp = _arrays(d)
    fn = lambda t: jnp.sum(_loglik_marginal(t, spec, yc, yb, grp, n_nodes))  # noqa: E731
    val, grad = jax.value_and_grad(fn)(_as_jnp(theta))
    return float(val), grad.numpy()


def pattern_probabilities_quadrature(theta: Theta, spec: ModelSpec, group: int, n_nodes=None) -> np.ndarray:
    """Exact (quadrature) probabilities of all 2^p_b binary response patterns for ``group``.

    Patterns are ordered as binary numbers with item 1 as the most
    significant bit. Only for models whose latent block has dimension <= 2.
    """
    if not spec.has_marginal:
        raise ValueError(f"{spec.name}: use the Monte Carlo pattern probabilities")
    pb = spec.p_b
    pats = all_patterns(pb)
    th = _as_jnp(theta)
    grp = jnp.full((1,), group)
    offset, B = _latent_design(th, spec, jnp.zeros((1, spec.p_c)), grp, conditional=False)
    Bg = B[0 if spec.pooled else group]
    d = Bg.shape[-1]
    nodes, logw = gauss_hermite(d, n_nodes or default_nodes(d))
    eta = offset[0][None, :] + jnp.asarray(nodes) @ Bg.T  # (Q, pb)
    ll = jnp.sum(bernoulli_logit_logpmf(jnp.asarray(pats)[:, None, :], eta[None]), axis=-1)
    probs = np.exp(np.asarray(jax.scipy.special.logsumexp(ll + jnp.asarray(logw), axis=-1)))
    return probs / probs.sum()


def all_patterns(pb: int) -> np.ndarray:
    """(2^pb, pb) array of 0/1 patterns; row r is the binary expansion of r."""
    r = np.arange(2**pb)
    return ((r[:, None] >> np.arange(pb - 1, -1, -1)[None, :]) & 1).astype(float)


def pattern_index(yb: np.ndarray) -> np.ndarray:
    yb = np.asarray(yb, dtype=int)
    pb = yb.shape[-1]
    return (yb * (1 << np.arange(pb - 1, -1, -1))).sum(axis=-1)
