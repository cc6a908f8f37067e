"""Laplace approximation of a subject's latent posterior given binary outcomes.

The latent target is the logistic-Gaussian log density

    l(z | y) = sum_j [y_j log pi_j + (1 - y_j) log(1 - pi_j)] - |z|^2 / 2,
    pi_j = sigmoid(a_j + b_j . z),

with intercepts ``a`` (p_b,) and loadings ``B`` (p_b, d). Its mode is found
by Fisher scoring, z <- z + I(z)^-1 score(z), with expected information
I(z) = I + B^T diag(pi (1 - pi)) B. For the logit link the expected and
observed information coincide, so every step is a Newton step on a
log-concave target.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax

from bayesbr.model import ModelSpec

LOG_2PI = float(np.log(2 * np.pi))


class LaplaceConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LaplaceFit:
    mode: np.ndarray
    covariance: np.ndarray
    log_det_info: float
    iterations: int
    converged: bool = True


@dataclass(frozen=True)
class SingleFactorSpec:
    """EZ1 rewritten as a one-factor model on the binary block (continuous factor integrated out)."""

    base: ModelSpec
    factor: int

    @property
    def latent_dim(self) -> int:
        return 1


def reparameterize_single_factor(spec: ModelSpec) -> SingleFactorSpec:
    """Absorb the continuous factor of an EZ1 model into the continuous marginal.

    Requires independent factors and no cross-loadings, so that the latent
    posterior of the binary factor depends on the binary items only.
    """
    if spec.variant != "EZ1":
        raise ValueError(f"single-factor reparameterisation needs EZ1 (independent factors), got {spec.variant}")
    if spec.p_b == 0:
        raise ValueError("model has no binary items")
    (factor,) = spec.binary_factors
    return SingleFactorSpec(spec, factor)


def single_factor_design(theta, sf: SingleFactorSpec, group: int):
    """(intercepts, loadings) of the binary block for ``group`` under the single-factor form."""
    spec = sf.base
    g = 0 if spec.pooled else group
    a = np.asarray(theta.alpha)[group, spec.p_c :]
    b = np.asarray(theta.lam)[g, spec.p_c :, sf.factor][:, None]
    return a, b


def _as2d(loadings, p):
    b = np.asarray(loadings, dtype=float)
    return b.reshape(p, -1)


def latent_log_target(z, y_bin, intercepts, loadings) -> float:
    """Log of Bernoulli likelihood times the standard normal kernel exp(-|z|^2/2)."""
    y = np.asarray(y_bin, dtype=float)
    a = np.asarray(intercepts, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if y.size == 0:
        return float(-0.5 * z @ z)
    B = _as2d(loadings, y.size)
    eta = a + B @ z
    ll = y * eta - np.logaddexp(0.0, eta)
    return float(ll.sum() - 0.5 * z @ z)


def latent_score_and_info(z, y_bin, intercepts, loadings):
    """Gradient of :func:`latent_log_target` and the expected (Fisher) information."""
    y = np.asarray(y_bin, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = z.size
    if y.size == 0:
        return -z, np.eye(d)
    B = _as2d(loadings, y.size)
    pi = 1.0 / (1.0 + np.exp(-(np.asarray(intercepts, dtype=float) + B @ z)))
    w = pi * (1.0 - pi)
    dpi = w[:, None] * B  # d pi_j / d z
    score = -z + dpi.T @ (y / pi - (1.0 - y) / (1.0 - pi))
    info = np.eye(d) + (dpi.T / w) @ dpi
    return score, info


def laplace_fit(y_bin, intercepts, loadings, tol: float = 1e-8, max_iter: int = 50) -> LaplaceFit:
    """Fisher-scoring mode and inverse information of the latent posterior.

    Starts at z = 0; on failure retries once with half steps before
    raising :class:`LaplaceConvergenceError`.
    """
    y = np.asarray(y_bin, dtype=float)
    B = _as2d(loadings, y.size) if y.size else np.zeros((0, np.size(loadings) or 1))
    d = B.shape[1] if y.size else 1
    for damping in (1.0, 0.5):
        z = np.zeros(d)
        for it in range(1, max_iter + 1):
            score, info = latent_score_and_info(z, y, intercepts, B)
            if np.linalg.norm(score) < tol:
                break
            z = z + damping * np.linalg.solve(info, score)
        else:
            score, info = latent_score_and_info(z, y, intercepts, B)
            if np.linalg.norm(score) >= tol or not np.all(np.isfinite(z)):
                continue
        cov = np.linalg.inv(info)
        return LaplaceFit(z, 0.5 * (cov + cov.T), float(np.linalg.slogdet(info)[1]), it)
    raise LaplaceConvergenceError(f"Fisher scoring did not reach |score| < {tol} in {max_iter} iterations")


def laplace_log_marginal(y_bin, intercepts, loadings, fit: LaplaceFit = None) -> float:
    """Laplace estimate of log f(y) = log E[prod_j Bern(y_j | a_j + b_j' z)], z ~ N(0, I).

    The information is the negative Hessian of the log target (logit link),
    so the estimate is the log target at the mode minus half its log determinant.
    """
    fit = fit if fit is not None else laplace_fit(y_bin, intercepts, loadings)
    return latent_log_target(fit.mode, y_bin, intercepts, loadings) - 0.5 * fit.log_det_info


def prior_fallback(d: int) -> LaplaceFit:
    """Proposal used when Fisher scoring fails: the N(0, I) prior."""
    return LaplaceFit(np.zeros(d), np.eye(d), 0.0, 0, converged=False)


def laplace_logpdf(z, fit: LaplaceFit) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = z.size
    r = z - fit.mode
    L = np.linalg.cholesky(fit.covariance)
    s = np.linalg.solve(L, r)
    return float(-0.5 * (d * LOG_2PI + 2 * np.sum(np.log(np.diag(L))) + s @ s))


def laplace_sample(fit: LaplaceFit, seed, size=None) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = np.linalg.cholesky(fit.covariance)
    d = fit.mode.size
    shape = (d,) if size is None else (size, d)
    xi = rng.standard_normal(shape)
    return fit.mode + xi @ L.T


# ---------------------------------------------------------------------------
# batched (jax) version used inside the samplers


def _score_info(z, y, a, B):
    eta = a + jnp.einsum("...jd,...d->...j", B, z)
    pi = jax.nn.sigmoid(eta)
    w = pi * (1.0 - pi)
    score = -z + jnp.einsum("...jd,...j->...d", B, y - pi)
    d = z.shape[-1]
    info = jnp.eye(d) + jnp.einsum("...jd,...j,...je->...de", B, w, B)
    return score, info


def laplace_fit_batch(y, a, B, tol: float = 1e-8, max_iter: int = 50):
    """Vectorised Fisher scoring over leading axes.

    y, a: (..., p_b); B: (..., p_b, d). Returns (mode, chol_cov, log_det_info,
    converged). Entries that fail both the full-step and the half-step pass
    fall back to the N(0, I) prior (mode 0, identity covariance).
    """
    d = B.shape[-1]
    batch = jnp.broadcast_shapes(y.shape[:-1], a.shape[:-1], B.shape[:-2])
    y = jnp.broadcast_to(y, batch + y.shape[-1:])
    a = jnp.broadcast_to(a, batch + a.shape[-1:])
    B = jnp.broadcast_to(B, batch + B.shape[-2:])

    def run(damping, done0):
        def cond(carry):
            it, _, done = carry
            return (it < max_iter) & ~jnp.all(done)

        def body(carry):
            it, z, done = carry
            score, info = _score_info(z, y, a, B)
            done = done | (jnp.linalg.norm(score, axis=-1) < tol)
            step = jnp.linalg.solve(info, score[..., None])[..., 0]
            return it + 1, jnp.where(done[..., None], z, z + damping * step), done

        z0 = jnp.zeros(batch + (d,))
        _, z, _ = lax.while_loop(cond, body, (0, z0, done0))
        score, _ = _score_info(z, y, a, B)
        ok = (jnp.linalg.norm(score, axis=-1) < tol) & jnp.all(jnp.isfinite(z), axis=-1)
        return z, ok

    z1, ok1 = run(1.0, jnp.zeros(batch, dtype=bool))
    # half-step restart only for the entries that failed
    z2, ok2 = run(0.5, ok1)
    z = jnp.where(ok1[..., None], z1, jnp.where(ok2[..., None], z2, 0.0))
    ok = ok1 | ok2
    _, info = _score_info(z, y, a, B)
    info = jnp.where(ok[..., None, None], info, jnp.eye(d))
    chol_info = jnp.linalg.cholesky(info)
    logdet = 2.0 * jnp.sum(jnp.log(jnp.diagonal(chol_info, axis1=-2, axis2=-1)), axis=-1)
    eye = jnp.broadcast_to(jnp.eye(d), info.shape)
    cov = jax.scipy.linalg.cho_solve((chol_info, True), eye)
    chol_cov = jnp.linalg.cholesky(0.5 * (cov + jnp.swapaxes(cov, -1, -2)))
    return z, chol_cov, logdet, ok


def gaussian_logpdf_chol(x, mean, chol_cov):
    """log N(x | mean, L L^T) over leading axes."""
    d = x.shape[-1]
    r = x - mean
    s = jax.scipy.linalg.solve_triangular(chol_cov, r[..., None], lower=True)[..., 0]
    logdet = 2.0 * jnp.sum(jnp.log(jnp.diagonal(chol_cov, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (d * LOG_2PI + logdet + jnp.sum(s**2, axis=-1))


def std_normal_logpdf(x):
    d = x.shape[-1]
    return -0.5 * (d * LOG_2PI + jnp.sum(x**2, axis=-1))


__all__ = [
    "LaplaceConvergenceError",
    "LaplaceFit",
    "SingleFactorSpec",
    "gaussian_logpdf_chol",
    "laplace_fit",
    "laplace_fit_batch",
    "laplace_log_marginal",
    "laplace_logpdf",
    "laplace_sample",
    "latent_log_target",
    "latent_score_and_info",
    "prior_fallback",
    "reparameterize_single_factor",
    "single_factor_design",
    "std_normal_logpdf",
]

