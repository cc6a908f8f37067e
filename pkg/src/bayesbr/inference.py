"""Batch posterior sampling for a model variant and tabular summaries of the draws."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from bayesbr.data import Dataset
from bayesbr.hmc import ChainResult, KernelConfig, run_chain
from bayesbr.model import ModelSpec, PriorConfig, Theta, constrain_many, constrained_summary_params, sign_postprocess
from bayesbr.targets import ModelTarget


@dataclass
class PosteriorFit:
    spec: ModelSpec
    theta: Theta  # stacked constrained draws, sign convention applied
    q: np.ndarray  # (M, dim) unconstrained draws, reflected to the same convention
    chain: ChainResult
    group_labels: tuple

    @property
    def n_draws(self) -> int:
        return len(self.q)

    def named(self) -> dict:
        return constrained_summary_params(self.theta, self.spec, self.group_labels)


def fit_model(
    data: Dataset,
    spec: ModelSpec,
    n_warmup: int = 1000,
    n_samples: int = 1000,
    seed: int = 0,
    kernel: KernelConfig = KernelConfig(),
    prior: PriorConfig = PriorConfig(),
    S_y: Optional[np.ndarray] = None,
) -> PosteriorFit:
    """Run one HMC chain on the full-data posterior and return constrained draws.

    Latent variables are integrated out by quadrature when the model allows
    it (SAT, IND, EZ); otherwise they are sampled jointly with the
    parameters and discarded.
    """
    target = ModelTarget(data, spec, prior, S_y=S_y)
    rng = np.random.default_rng(seed)
    x0 = target.initial_point(rng)
    res = run_chain(x0, target.batch_logdensity(), kernel, n_warmup, n_samples, seed)
    Q = res.draws[:, : target.dim]
    Q, _ = target.fold(Q)
    theta = constrain_many(Q, spec) if len(Q) else None
    if theta is not None:
        theta = sign_postprocess(theta, spec)
    res.draws = None  # latent blocks can be large; keep only the parameters
    return PosteriorFit(spec, theta, Q, res, data.schema.group_labels)


def weighted_quantile(x, w, qs):
    """Quantiles of a weighted sample: smallest x whose cumulative normalised weight reaches q."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    cw = cw / cw[-1]
    idx = np.searchsorted(cw, np.asarray(qs) - 1e-12, side="left")
    return x[order][np.minimum(idx, len(x) - 1)]


def summarise_draws(named: dict, weights=None) -> list:
    """Rows (name, q2.5, q97.5, mean, median) for each named parameter."""
    rows = []
    for name, v in named.items():
        v = np.asarray(v, dtype=float)
        w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
        lo, hi, med = weighted_quantile(v, w, [0.025, 0.975, 0.5])
        rows.append((name, float(lo), float(hi), float(np.sum(w * v) / np.sum(w)), float(med)))
    return rows


__all__ = ["PosteriorFit", "fit_model", "summarise_draws", "weighted_quantile"]
