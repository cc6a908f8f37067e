"""Fixed-length Hamiltonian Monte Carlo with dual-averaging step size and diagonal mass.

Targets are jax-traceable log densities on R^d. The kernel is used in two
ways: :func:`run_chain` for batch posterior sampling, and :func:`jitter`,
which applies a few transitions to many particles at once (vectorised with
``vmap``) to diversify an SMC population after resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax

# Each transition draws its step size uniformly from step * (1 +/- STEP_JITTER).
# A fixed trajectory length can sit near half a period of some coordinate and
# then barely move it; randomising the step breaks that resonance.
STEP_JITTER = 0.5


@dataclass(frozen=True)
class KernelConfig:
    """HMC settings.

    ``inv_mass`` is the diagonal of the inverse mass matrix (a variance
    scale per coordinate); ``None`` means identity, re-estimated during
    warmup when ``adapt_mass`` is set.
    """

    step_size: float = 0.1
    n_leapfrog: int = 16
    inv_mass: Optional[np.ndarray] = None
    adapt_steps: Optional[int] = None  # defaults to n_warmup
    target_accept: float = 0.8
    max_energy_error: float = 1000.0
    adapt_mass: bool = True
    da_gamma: float = 0.05
    da_t0: float = 10.0
    da_kappa: float = 0.75
    n_jitter_steps: int = 10
    step_jitter: float = STEP_JITTER

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be at least 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.n_jitter_steps < 0:
            raise ValueError("n_jitter_steps must be nonnegative")
        if not 0 <= self.step_jitter < 1:
            raise ValueError("step_jitter must lie in [0, 1)")


class ChainState(NamedTuple):
    position: jnp.ndarray
    logp: jnp.ndarray
    grad: jnp.ndarray


class StepInfo(NamedTuple):
    accept_prob: jnp.ndarray
    accepted: jnp.ndarray
    divergent: jnp.ndarray
    energy_error: jnp.ndarray


@dataclass
class ChainResult:
    draws: np.ndarray  # (n_samples, d) unconstrained positions
    logp: np.ndarray
    accept_rate: float
    n_divergent: int
    step_size: float
    inv_mass: np.ndarray
    warmup_divergent: int = 0
    extra: dict = field(default_factory=dict)


def _vg(logdensity):
    vg = jax.value_and_grad(logdensity)

    def f(x):
        lp, g = vg(x)
        ok = jnp.isfinite(lp) & jnp.all(jnp.isfinite(g))
        return jnp.where(ok, lp, -jnp.inf), jnp.where(ok, g, 0.0)

    return f


def init_state(position, logdensity) -> ChainState:
    lp, g = _vg(logdensity)(jnp.asarray(position, dtype=float))
    return ChainState(jnp.asarray(position, dtype=float), lp, g)


def leapfrog(vg, position, momentum, grad, step_size, inv_mass, n_steps):
    """``n_steps`` leapfrog steps; returns (position, momentum, logp, grad)."""

    def body(_, carry):
        x, p, g, _lp = carry
        p = p + 0.5 * step_size * g
        x = x + step_size * inv_mass * p
        lp, g = vg(x)
        p = p + 0.5 * step_size * g
        return x, p, g, lp

    x, p, g, lp = lax.fori_loop(0, n_steps, body, (position, momentum, grad, jnp.zeros(())))
    return x, p, lp, g


def hmc_transition(vg, state: ChainState, key, step_size, inv_mass, n_leapfrog: int, max_energy_error=1000.0, step_jitter=0.0):
    """One HMC transition (pure jax). Divergent trajectories are rejected and flagged."""
    d = state.position.shape[-1]
    step_size = step_size * (1.0 + step_jitter * jax.random.uniform(jax.random.fold_in(key, 2), minval=-1.0, maxval=1.0))
    p0 = jax.random.normal(jax.random.fold_in(key, 0), (d,)) / jnp.sqrt(inv_mass)
    x, p, lp, g = leapfrog(vg, state.position, p0, state.grad, step_size, inv_mass, n_leapfrog)
    h0 = -state.logp + 0.5 * jnp.sum(inv_mass * p0**2)
    h1 = -lp + 0.5 * jnp.sum(inv_mass * p**2)
    err = h1 - h0
    err = jnp.where(jnp.isnan(err), jnp.inf, err)
    divergent = err > max_energy_error
    accept_prob = jnp.where(divergent, 0.0, jnp.minimum(1.0, jnp.exp(-err)))
    u = jax.random.uniform(jax.random.fold_in(key, 1))
    accept = (u < accept_prob) & ~divergent
    new = ChainState(
        jnp.where(accept, x, state.position),
        jnp.where(accept, lp, state.logp),
        jnp.where(accept, g, state.grad),
    )
    return new, StepInfo(accept_prob, accept, divergent, err)


def hmc_step(state: ChainState, logdensity: Callable, cfg: KernelConfig, seed) -> tuple:
    """Single transition for ``logdensity`` from ``state``; returns (state, StepInfo)."""
    if not np.isfinite(float(state.logp)):
        raise ValueError("target is not finite at the current position")
    d = state.position.shape[-1]
    inv_mass = jnp.ones(d) if cfg.inv_mass is None else jnp.asarray(cfg.inv_mass, dtype=float)
    key = seed if isinstance(seed, jax.Array) else jax.random.PRNGKey(seed)
    return hmc_transition(_vg(logdensity), state, key, cfg.step_size, inv_mass, cfg.n_leapfrog, cfg.max_energy_error, cfg.step_jitter)


# ---------------------------------------------------------------------------
# adaptation


class DAState(NamedTuple):
    log_step: jnp.ndarray
    log_step_bar: jnp.ndarray
    h_bar: jnp.ndarray
    mu: jnp.ndarray
    t: jnp.ndarray


def da_init(step_size) -> DAState:
    ls = jnp.log(jnp.asarray(step_size, dtype=float))
    return DAState(ls, ls, jnp.zeros(()), jnp.log(10.0) + ls, jnp.zeros(()))


def da_update(s: DAState, accept_prob, target, gamma, t0, kappa) -> DAState:
    t = s.t + 1.0
    w = 1.0 / (t + t0)
    h_bar = (1.0 - w) * s.h_bar + w * (target - accept_prob)
    log_step = s.mu - jnp.sqrt(t) / gamma * h_bar
    eta = t**-kappa
    log_step_bar = eta * log_step + (1.0 - eta) * s.log_step_bar
    return DAState(log_step, log_step_bar, h_bar, s.mu, t)


def regularised_variance(var, n):
    """Shrink an empirical variance toward 1e-3 (same constants as Stan's windowed adaptation)."""
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _find_reasonable_step(vg, state, inv_mass, key, step0=0.1):
    step = float(step0)
    d = state.position.shape[-1]
    lf = jax.jit(lambda x, p, g, e: leapfrog(vg, x, p, g, e, inv_mass, 1))
    p0 = jax.random.normal(key, (d,)) / jnp.sqrt(inv_mass)
    h0 = float(-state.logp + 0.5 * jnp.sum(inv_mass * p0**2))

    def log_ratio(e):
        _, p, lp, _ = lf(state.position, p0, state.grad, e)
        h = float(-lp + 0.5 * jnp.sum(inv_mass * p**2))
        return -h + h0 if np.isfinite(h) else -np.inf

    direction = 1.0 if log_ratio(step) > np.log(0.5) else -1.0
    for _ in range(50):
        new = step * 2.0**direction
        lr = log_ratio(new)
        if (direction > 0 and not lr > np.log(0.5)) or (direction < 0 and lr > np.log(0.5)):
            return new if direction < 0 else step
        step = new
    return step


def _make_phase(vg, n_leapfrog, target, gamma, t0, kappa, max_err, step_jitter):
    """Adaptation phase: dual averaging plus running (Welford) moments of the positions."""

    def run(state, da, key, inv_mass, n_steps):
        def body(t, carry):
            st, da, mean, m2, ndiv = carry
            st, info = hmc_transition(vg, st, jax.random.fold_in(key, t), jnp.exp(da.log_step), inv_mass, n_leapfrog, max_err, step_jitter)
            da = da_update(da, info.accept_prob, target, gamma, t0, kappa)
            delta = st.position - mean
            mean = mean + delta / (t + 1.0)
            m2 = m2 + delta * (st.position - mean)
            return st, da, mean, m2, ndiv + info.divergent

        d = state.position.shape[-1]
        init = (state, da, jnp.zeros(d), jnp.zeros(d), jnp.zeros((), dtype=jnp.int32))
        return lax.fori_loop(0, n_steps, body, init)

    return jax.jit(run)


def _make_sampler(vg, n_leapfrog, max_err, n_samples, step_jitter):
    def run(state, key, step, inv_mass):
        def body(st, k):
            st, info = hmc_transition(vg, st, k, step, inv_mass, n_leapfrog, max_err, step_jitter)
            return st, (st.position, st.logp, info.accepted, info.divergent)

        keys = jax.random.split(key, n_samples)
        return lax.scan(body, state, keys)

    return jax.jit(run)


def _schedule(n_warmup: int):
    """Warmup windows: initial step-size only, mass-collection, final step-size."""
    if n_warmup < 20:
        return n_warmup, 0, 0
    first = max(int(0.15 * n_warmup), 1)
    last = max(int(0.10 * n_warmup), 1)
    return first, n_warmup - first - last, last


def run_chain(init, logdensity: Callable, cfg: KernelConfig, n_warmup: int, n_samples: int, seed) -> ChainResult:
    """Warm up (step size and diagonal mass) then draw ``n_samples`` positions.

    Returns unconstrained draws; model-level wrappers map them to the
    constrained scale and apply the sign convention.
    """
    if n_warmup < 0 or n_samples < 0:
        raise ValueError("n_warmup and n_samples must be nonnegative")
    x0 = jnp.asarray(init, dtype=float)
    d = x0.shape[-1]
    vg = _vg(logdensity)
    state = init_state(x0, logdensity)
    if not np.isfinite(float(state.logp)):
        raise ValueError("target is not finite at the initial position")
    key = jax.random.PRNGKey(seed) if not isinstance(seed, jax.Array) else seed
    k_step, k_adapt, k_sample = jax.random.split(key, 3)
    inv_mass = jnp.ones(d) if cfg.inv_mass is None else jnp.asarray(cfg.inv_mass, dtype=float)
    step = cfg.step_size
    warm_div = 0
    n_adapt = n_warmup if cfg.adapt_steps is None else min(cfg.adapt_steps, n_warmup)
    if n_adapt > 0:
        step = _find_reasonable_step(vg, state, inv_mass, k_step, cfg.step_size)
        phase = _make_phase(vg, cfg.n_leapfrog, cfg.target_accept, cfg.da_gamma, cfg.da_t0, cfg.da_kappa, cfg.max_energy_error, cfg.step_jitter)
        w1, w2, w3 = _schedule(n_adapt) if cfg.adapt_mass else (n_adapt, 0, 0)
        da = da_init(step)
        state, da, _, _, nd = phase(state, da, jax.random.fold_in(k_adapt, 0), inv_mass, w1)
        warm_div += int(nd)
        if w2 > 0:
            state, da, _, m2, nd = phase(state, da, jax.random.fold_in(k_adapt, 1), inv_mass, w2)
            warm_div += int(nd)
            inv_mass = regularised_variance(m2 / max(w2 - 1, 1), w2)
            step = _find_reasonable_step(vg, state, inv_mass, jax.random.fold_in(k_step, 1), float(jnp.exp(da.log_step_bar)))
            da = da_init(step)
            state, da, _, _, nd = phase(state, da, jax.random.fold_in(k_adapt, 2), inv_mass, w3)
            warm_div += int(nd)
        step = float(jnp.exp(da.log_step_bar))
        if n_warmup > n_adapt:
            fixed = _make_sampler(vg, cfg.n_leapfrog, cfg.max_energy_error, n_warmup - n_adapt, cfg.step_jitter)
            state, _ = fixed(state, jax.random.fold_in(k_adapt, 3), step, inv_mass)
    if n_samples == 0:
        return ChainResult(np.zeros((0, d)), np.zeros(0), float("nan"), 0, step, np.asarray(inv_mass), warm_div)
    sampler = _make_sampler(vg, cfg.n_leapfrog, cfg.max_energy_error, n_samples, cfg.step_jitter)
    _, (xs, lps, acc, div) = sampler(state, k_sample, step, inv_mass)
    return ChainResult(
        np.asarray(xs),
        np.asarray(lps),
        float(np.mean(acc)),
        int(np.sum(div)),
        step,
        np.asarray(inv_mass),
        warm_div,
    )


# ---------------------------------------------------------------------------
# particle jitter


def make_jitter(logdensity: Callable, n_steps: int, n_leapfrog: int, max_energy_error: float = 1000.0, step_jitter: float = STEP_JITTER):
    """Vectorised jitter: ``f(positions (N, d), keys (N, 2), step, inv_mass, *args)``.

    ``logdensity(x, *args)`` is shared by all particles; ``args`` (e.g. a
    mask of absorbed subjects) are broadcast. Returns (positions, mean
    acceptance probability per particle, divergences per particle).
    """

    def one(x, key, step, inv_mass, *args):
        vg = _vg(lambda y: logdensity(y, *args))
        lp, g = vg(x)
        st = ChainState(x, lp, g)

        def body(t, carry):
            st, acc, nd = carry
            st, info = hmc_transition(vg, st, jax.random.fold_in(key, t), step, inv_mass, n_leapfrog, max_energy_error, step_jitter)
            return st, acc + info.accept_prob, nd + info.divergent

        st, acc, nd = lax.fori_loop(0, n_steps, body, (st, jnp.zeros(()), jnp.zeros((), dtype=jnp.int32)))
        return st.position, acc / max(n_steps, 1), nd

    def batched(X, keys, step, inv_mass, *args):
        in_axes = (0, 0, None, None) + (None,) * len(args)
        return jax.vmap(one, in_axes=in_axes)(X, keys, step, inv_mass, *args)

    return jax.jit(batched)


def jitter(positions, logdensity: Callable, n_steps: int, step_size: float, seed, inv_mass=None, n_leapfrog: int = 10, args=()):
    """Apply ``n_steps`` HMC transitions independently to every row of ``positions``.

    The last state of each short chain becomes the particle's new value.
    ``n_steps = 0`` returns the input unchanged.
    """
    X = np.asarray(positions, dtype=float)
    if n_steps == 0:
        return X.copy(), np.ones(len(X))
    N, d = X.shape
    inv_mass = np.ones(d) if inv_mass is None else np.asarray(inv_mass, dtype=float)
    key = jax.random.PRNGKey(seed) if not isinstance(seed, jax.Array) else seed
    keys = jax.vmap(lambda m: jax.random.fold_in(key, m))(jnp.arange(N))
    f = make_jitter(logdensity, n_steps, n_leapfrog)
    out, acc, _ = f(jnp.asarray(X), keys, step_size, jnp.asarray(inv_mass), *args)
    return np.asarray(out), np.asarray(acc)


__all__ = [
    "ChainResult",
    "ChainState",
    "KernelConfig",
    "StepInfo",
    "hmc_step",
    "hmc_transition",
    "init_state",
    "jitter",
    "leapfrog",
    "make_jitter",
    "run_chain",
]
