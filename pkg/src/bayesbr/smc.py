"""Iterated batch importance sampling over the path of partial posteriors.

Subjects are absorbed one at a time. Each particle's weight is multiplied
by an incremental weight u_i: the marginal likelihood f(y_i | theta) when
the latent block integrates out (``method="marginal"``), or a Laplace
importance estimate of it (``method="laplace"``): draw eps_i from a
Gaussian fitted to the subject's latent posterior and weight by
f(y_i | theta, eps_i) N(eps_i) / q_L(eps_i). When the effective sample
size drops below ``gamma * N`` the particles are resampled and moved by a
few HMC transitions that leave the current partial posterior invariant.

Weights are kept as logs throughout. Per-particle random streams are
derived from (seed, step, particle index), so the result does not depend
on how particles are split across workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.special import logsumexp

from bayesbr.hmc import make_jitter
from bayesbr.inference import weighted_quantile


@dataclass(frozen=True)
class SmcConfig:
    n_particles: int = 1000
    gamma: float = 0.5  # resample when ESS < gamma * N
    resampling: str = "multinomial"  # or "systematic"
    method: str = "auto"  # "marginal", "laplace" or "auto"
    n_jitter_steps: int = 10
    n_leapfrog: int = 10
    step_size: float = 0.2
    target_accept: float = 0.8
    latent_refresh: int = 2  # Laplace-proposal MH sweeps over absorbed latents per rejuvenation
    jitter_target: str = "joint"  # "joint" (parameters and stored latents) or "marginal" (quadrature)
    block_size: int = 250
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1] as a fraction of the particle count")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")
        if self.method not in ("auto", "marginal", "laplace"):
            raise ValueError(f"unknown incremental-weight method {self.method!r}")
        if self.jitter_target not in ("joint", "marginal"):
            raise ValueError(f"unknown jitter target {self.jitter_target!r}")


@dataclass
class ParticleSystem:
    """Particles on the unconstrained scale with log weights and (optionally) latent stores."""

    Q: np.ndarray  # (N, dim)
    logw: np.ndarray  # (N,)
    E: Optional[np.ndarray] = None  # (N, n, d) whitened latents, rows filled once absorbed
    eta: Optional[np.ndarray] = None  # (N, n, p_b) binary linear predictors
    absorbed: Optional[np.ndarray] = None  # (n,) bool
    log_evidence: float = 0.0
    log_L: list = field(default_factory=list)
    i: int = 0
    step_size: float = 0.2
    n_rejuvenations: int = 0
    n_fallbacks: int = 0

    @property
    def N(self) -> int:
        return len(self.logw)

    @property
    def weights(self) -> np.ndarray:
        """Weights scaled so the largest equals one (all ones after a rejuvenation)."""
        return np.exp(self.logw - np.max(self.logw))

    @property
    def ess(self) -> float:
        return ess_log(self.logw)


def ess(weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2 of nonnegative weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with at least one positive entry")
    return float(w.sum() ** 2 / np.sum(w**2))


def ess_log(logw) -> float:
    logw = np.asarray(logw, dtype=float)
    if np.all(logw == logw[0]) and np.isfinite(logw[0]):
        return float(len(logw))
    return float(np.exp(2 * logsumexp(logw) - logsumexp(2 * logw)))


def normalised_weights(logw) -> np.ndarray:
    w = np.exp(np.asarray(logw) - np.max(logw))
    return w / w.sum()


def resample_indices(logw, rng: np.random.Generator, scheme: str = "multinomial") -> np.ndarray:
    """Ancestor indices drawn in proportion to the weights."""
    w = normalised_weights(logw)
    N = len(w)
    cw = np.cumsum(w)
    cw[-1] = 1.0
    if scheme == "multinomial":
        u = rng.random(N)
    elif scheme == "systematic":
        u = (rng.random() + np.arange(N)) / N
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return np.searchsorted(cw, u, side="right").clip(0, N - 1)


def posterior_summary(ps: ParticleSystem, g: Callable, qs=(0.025, 0.975)):
    """Self-normalised weighted mean and weighted quantiles of g over particles.

    ``g`` maps the particle system's unconstrained matrix (N, dim) to an
    (N,) or (N, m) array.
    """
    vals = np.asarray(g(ps.Q), dtype=float)
    w = normalised_weights(ps.logw)
    mean = np.tensordot(w, vals, axes=(0, 0))
    if vals.ndim == 1:
        quant = weighted_quantile(vals, w, qs)
    else:
        quant = np.stack([weighted_quantile(vals[:, j], w, qs) for j in range(vals.shape[1])], axis=-1)
    return mean, quant


# ---------------------------------------------------------------------------
# particle-parallel evaluation


def _map_blocks(fn, arrays: Sequence, block: int, workers: int):
    """Apply ``fn`` to fixed-size particle blocks (padding the last) and concatenate.

    Block size depends only on the configuration, never on ``workers``,
    so results are identical for any worker count.
    """
    N = len(arrays[0])
    block = min(block, N)
    starts = list(range(0, N, block))

    def run(s):
        parts = []
        for a in arrays:
            chunk = a[s : s + block]
            if len(chunk) < block:
                pad = np.repeat(chunk[-1:], block - len(chunk), axis=0)
                chunk = np.concatenate([chunk, pad])
            parts.append(chunk)
        out = fn(*parts)
        out = out if isinstance(out, tuple) else (out,)
        n_keep = min(block, N - s)
        return tuple(np.asarray(o)[:n_keep] for o in out)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(s) for s in starts]
    out = tuple(np.concatenate([r[j] for r in results]) for j in range(len(results[0])))
    return out if len(out) > 1 else out[0]


def default_workers() -> int:
    env = os.environ.get("BAYESBR_WORKERS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def _particle_keys(seed: int, step: int, N: int) -> np.ndarray:
    base = jax.random.fold_in(jax.random.PRNGKey(seed), step)
    return np.asarray(jax.vmap(lambda m: jax.random.fold_in(base, m))(jnp.arange(N)))


class _Kernels:
    """Jitted per-target functions, built lazily and cached on the target."""

    def __init__(self, target, cfg: SmcConfig):
        self.t = target
        self.cfg = cfg
        try:
            self._cache = target.__dict__.setdefault("_smc_kernels", {})
        except AttributeError:
            self._cache = {}

    def get(self, name):
        # jitter kernels bake in the trajectory settings, so they are part of the key
        key = (name, self.cfg.n_jitter_steps, self.cfg.n_leapfrog)
        if key not in self._cache:
            self._cache[key] = getattr(self, "_build_" + name)()
        return self._cache[key]

    def _build_row_loglik(self):
        t = self.t
        return jax.jit(jax.vmap(t.row_loglik, in_axes=(0, None)))

    def _build_row_laplace(self):
        t = self.t
        return jax.jit(jax.vmap(t.row_laplace, in_axes=(0, None, 0)))

    def _build_jitter_marginal(self):
        return make_jitter(self.t.log_posterior, self.cfg.n_jitter_steps, self.cfg.n_leapfrog)

    def _build_jitter_joint(self):
        return make_jitter(self.t.log_joint, self.cfg.n_jitter_steps, self.cfg.n_leapfrog)

    def _build_refresh(self):
        t = self.t

        def one(q, eps, mask, key, sweeps):
            def body(s, carry):
                e, acc = carry
                e, r = t.refresh_latent(q, e, mask, jax.random.fold_in(key, s))
                return e, acc + r

            e, acc = jax.lax.fori_loop(0, sweeps, body, (eps, jnp.zeros(())))
            return e, t.linear_predictor(q, e), acc / jnp.maximum(sweeps, 1)

        return jax.jit(jax.vmap(one, in_axes=(0, 0, None, 0, None)), static_argnums=(4,))


# ---------------------------------------------------------------------------
# the algorithm


def _resolve_method(target, cfg: SmcConfig) -> str:
    if cfg.method == "auto":
        return "laplace" if target.latent_dim > 0 else "marginal"
    if cfg.method == "marginal" and not target.marginal:
        raise ValueError("this model has no closed-form marginal likelihood; use method='laplace'")
    if cfg.method == "laplace" and target.latent_dim == 0:
        return "marginal"
    return cfg.method


def ibis_init(target, n_particles: int, seed: int, cfg: Optional[SmcConfig] = None) -> ParticleSystem:
    """N i.i.d. prior draws with unit weights."""
    cfg = cfg or SmcConfig(n_particles=n_particles, seed=seed)
    rng = np.random.default_rng([seed, 0])
    Q = target.sample_prior(rng, n_particles)
    ps = ParticleSystem(Q, np.zeros(n_particles), step_size=cfg.step_size)
    ps.absorbed = np.zeros(target.n, dtype=bool)
    if target.latent_dim and _resolve_method(target, cfg) == "laplace":
        ps.E = np.zeros((n_particles, target.n, target.latent_dim))
        ps.eta = np.zeros((n_particles, target.n, target.spec.p_b))
    return ps


def _absorb(ps: ParticleSystem, logu: np.ndarray, subject: int) -> float:
    logu = np.where(np.isnan(logu), -np.inf, logu)
    if not np.any(np.isfinite(logu)):
        raise FloatingPointError(
            f"every incremental weight is zero at subject {subject}; weights must be accumulated in log space"
        )
    log_L = float(logsumexp(ps.logw + logu) - logsumexp(ps.logw))
    ps.logw = ps.logw + logu
    ps.log_evidence += log_L
    ps.log_L.append(log_L)
    ps.absorbed[subject] = True
    ps.i += 1
    return log_L


def ibis_step_marginal(ps: ParticleSystem, subject: int, target, cfg: SmcConfig, kernels=None) -> float:
    """Absorb ``subject`` with u = f(y_i | theta); returns log L_i."""
    k = kernels or _Kernels(target, cfg)
    f = k.get("row_loglik")
    logu = _map_blocks(lambda Q: f(jnp.asarray(Q), subject), [ps.Q], cfg.block_size, cfg.workers)
    return _absorb(ps, np.asarray(logu, dtype=float), subject)


def ibis_step_laplace(ps: ParticleSystem, subject: int, target, cfg: SmcConfig, kernels=None) -> float:
    """Absorb ``subject`` with a Laplace importance draw of its latent vector; returns log L_i."""
    k = kernels or _Kernels(target, cfg)
    f = k.get("row_laplace")
    keys = _particle_keys(cfg.seed, 2 * ps.i + 1, ps.N)
    logu, eps, eta, ok = _map_blocks(
        lambda Q, K: f(jnp.asarray(Q), subject, jnp.asarray(K)), [ps.Q, keys], cfg.block_size, cfg.workers
    )
    ps.E[:, subject] = eps
    ps.eta[:, subject] = eta
    ps.n_fallbacks += int(np.sum(~np.asarray(ok)))
    return _absorb(ps, np.asarray(logu, dtype=float), subject)


def maybe_rejuvenate(ps: ParticleSystem, target, cfg: SmcConfig, kernels=None, force: bool = False) -> dict:
    """Resample and jitter when ESS < gamma * N. Returns move diagnostics (empty if no move)."""
    if not force and ps.ess >= cfg.gamma * ps.N:
        return {}
    k = kernels or _Kernels(target, cfg)
    rng = np.random.default_rng([cfg.seed, ps.i, 1])
    idx = resample_indices(ps.logw, rng, cfg.resampling)
    ps.Q = ps.Q[idx]
    if ps.E is not None:
        ps.E = ps.E[idx]
        ps.eta = ps.eta[idx]
    ps.logw = np.zeros(ps.N)
    ps.n_rejuvenations += 1
    info = {"resampled": True, "unique": int(len(np.unique(idx)))}
    if cfg.n_jitter_steps == 0:
        return info
    ps.Q, ps.E = target.fold(ps.Q, ps.E)
    mask = jnp.asarray(ps.absorbed)
    keys = _particle_keys(cfg.seed, 2 * ps.i + 2, ps.N)
    joint = ps.E is not None and (cfg.jitter_target == "joint" or not target.marginal)
    if joint:
        X = np.concatenate([ps.Q, ps.E.reshape(ps.N, -1)], axis=1)
        f = k.get("jitter_joint")
    else:
        X = ps.Q
        f = k.get("jitter_marginal")
    inv_mass = _mass_estimate(X)
    X, acc, ndiv = _map_blocks(
        lambda x, kk: f(jnp.asarray(x), jnp.asarray(kk), ps.step_size, jnp.asarray(inv_mass), mask),
        [X, keys],
        cfg.block_size,
        cfg.workers,
    )
    info.update(accept=float(np.mean(acc)), divergent=int(np.sum(ndiv)), step_size=ps.step_size)
    # move the step size toward the target acceptance for the next rejuvenation
    ps.step_size = float(ps.step_size * np.exp(2.0 * (np.mean(acc) - cfg.target_accept)))
    ps.Q = X[:, : ps.Q.shape[1]]
    if joint:
        ps.E = X[:, ps.Q.shape[1] :].reshape(ps.E.shape)
    if ps.E is not None and cfg.latent_refresh > 0:
        rk = np.asarray(jax.vmap(lambda kk: jax.random.fold_in(kk, 7))(jnp.asarray(keys)))
        g = k.get("refresh")
        E, eta, racc = _map_blocks(
            lambda q, e, kk: g(jnp.asarray(q), jnp.asarray(e), mask, jnp.asarray(kk), cfg.latent_refresh),
            [ps.Q, ps.E, rk],
            cfg.block_size,
            cfg.workers,
        )
        ps.E, ps.eta = np.asarray(E), np.asarray(eta)
        info["latent_accept"] = float(np.mean(racc))
    return info


def _mass_estimate(X: np.ndarray) -> np.ndarray:
    var = np.var(X, axis=0)
    var = np.where(var > 1e-8, var, 1.0)
    return var


@dataclass
class SequentialResult:
    particles: ParticleSystem
    trace: list  # one dict per absorbed subject
    method: str


def run_sequential(
    target,
    order: Sequence[int],
    cfg: SmcConfig = SmcConfig(),
    score_fn: Optional[Callable] = None,
    callback: Optional[Callable] = None,
) -> SequentialResult:
    """Absorb subjects in ``order``, rejuvenating when the ESS degenerates.

    ``score_fn(Q) -> (N, R)`` maps particles to per-group scores; when
    given, every trace record holds their weighted means, 2.5%/97.5%
    quantiles and pairwise superiority probabilities.
    """
    method = _resolve_method(target, cfg)
    kernels = _Kernels(target, cfg)
    ps = ibis_init(target, cfg.n_particles, cfg.seed, cfg)
    step = ibis_step_laplace if method == "laplace" else ibis_step_marginal
    trace = []
    for pos, subject in enumerate(order):
        subject = int(subject)
        log_L = step(ps, subject, target, cfg, kernels)
        ess_before = ps.ess
        info = maybe_rejuvenate(ps, target, cfg, kernels)
        rec = {
            "i": pos + 1,
            "subject": subject,
            "group": int(target.groups[subject]),
            "ess": ess_before,
            "log_L": log_L,
            "log_evidence": ps.log_evidence,
            "rejuvenated": bool(info),
            "accept": info.get("accept", float("nan")),
        }
        if score_fn is not None:
            rec.update(score_summary(score_fn(ps.Q), ps.logw))
        trace.append(rec)
        if callback is not None:
            callback(ps, rec)
    return SequentialResult(ps, trace, method)


def score_summary(S: np.ndarray, logw: np.ndarray) -> dict:
    """Weighted mean, 2.5/97.5% quantiles and pairwise superiority of per-group scores (N, R)."""
    from bayesbr.mcda import superiority_prob

    S = np.asarray(S, dtype=float)
    w = normalised_weights(logw)
    R = S.shape[1]
    out = {"score_mean": S.T @ w, "score_lo": np.empty(R), "score_hi": np.empty(R)}
    for r in range(R):
        out["score_lo"][r], out["score_hi"][r] = weighted_quantile(S[:, r], w, [0.025, 0.975])
    out["superiority"] = np.array([[superiority_prob(S[:, a], S[:, b], w) if a != b else np.nan for b in range(R)] for a in range(R)])
    return out


__all__ = [
    "ParticleSystem",
    "SequentialResult",
    "SmcConfig",
    "default_workers",
    "ess",
    "ess_log",
    "ibis_init",
    "ibis_step_laplace",
    "ibis_step_marginal",
    "maybe_rejuvenate",
    "normalised_weights",
    "posterior_summary",
    "resample_indices",
    "run_sequential",
    "score_summary",
]
