"""Model checking and comparison.

* Posterior predictive p-values with one discrepancy per data type: a
  likelihood-ratio statistic comparing sample and model-implied covariances
  of the continuous block, and the G^2 statistic on binary response-pattern
  frequencies.
* Out-of-sample log scores estimated by mixtures of parameters: the
  predictive density of a test subject is the average over posterior draws
  of its conditional density. Continuous and binary scores are computed
  separately; the combined score is their sum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import logsumexp

from bayesbr.data import Dataset, simulate_dataset, split_folds
from bayesbr.hmc import KernelConfig
from bayesbr.inference import PosteriorFit, fit_model
from bayesbr.likelihood import (
    _continuous_cov,
    _latent_design,
    _mvn_logpdf_grouped,
    all_patterns,
    default_nodes,
    gauss_hermite,
    group_index,
    pattern_index,
)
from bayesbr.model import ModelSpec, PriorConfig, Theta, constrain


# ---------------------------------------------------------------------------
# discrepancies


def lrt_statistic(S, Sigma, n: int) -> float:
    """(n-1) {log|Sigma| + tr(S Sigma^-1) - log|S| - p}."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    p = S.shape[0]
    sign_s, logdet_s = np.linalg.slogdet(S)
    if sign_s <= 0:
        raise np.linalg.LinAlgError("sample covariance is singular")
    sign, logdet = np.linalg.slogdet(Sigma)
    if sign <= 0:
        raise np.linalg.LinAlgError("model-implied covariance is not positive-definite")
    tr = np.trace(np.linalg.solve(Sigma, S))
    return float((n - 1) * (logdet + tr - logdet_s - p))


def discrepancy_lrt(yc, groups, theta: Theta, spec: ModelSpec) -> float:
    """Sum over treatment groups of the covariance LRT statistic."""
    yc = np.asarray(yc, dtype=float)
    groups = np.asarray(groups)
    cov = np.asarray(_continuous_cov(theta.map(jnp.asarray), spec))
    total = 0.0
    for r in range(spec.n_groups):
        y = yc[groups == r]
        n_r = len(y)
        if n_r <= spec.p_c:
            raise ValueError(f"group {r} has {n_r} subjects; need more than {spec.p_c}")
        S = np.atleast_2d(np.cov(y, rowvar=False))
        total += lrt_statistic(S, cov[0 if spec.pooled else r], n_r)
    return total


def discrepancy_g2(observed, expected, n: Optional[int] = None) -> float:
    """G^2 = sum_r O_r log(O_r / (n pi_r)); empty cells contribute zero."""
    O = np.asarray(observed, dtype=float)
    pi = np.asarray(expected, dtype=float)
    n = O.sum() if n is None else n
    nz = O > 0
    if np.any(pi[nz] <= 0):
        raise ValueError("model assigns zero probability to an observed response pattern")
    return float(np.sum(O[nz] * np.log(O[nz] / (n * pi[nz]))))


def pattern_counts(yb, groups, n_groups: int) -> np.ndarray:
    """(R, 2^p_b) observed response-pattern counts per group."""
    yb = np.asarray(yb)
    P = 2 ** yb.shape[1]
    idx = pattern_index(yb)
    out = np.zeros((n_groups, P))
    np.add.at(out, (np.asarray(groups), idx), 1.0)
    return out


# ---------------------------------------------------------------------------
# response-pattern probabilities


def latent_rule(spec: ModelSpec, method: str = "auto", n_mc: int = 100_000, seed: int = 0):
    """Integration rule for the latent block: (nodes (Q, d), log weights (Q,)).

    ``auto`` uses tensor Gauss-Hermite quadrature when the block has
    dimension <= 2 and Monte Carlo (shared draws for every pattern and
    parameter value) otherwise.
    """
    d = spec.latent_dim if spec.p_b else 0
    if method == "auto":
        method = "quadrature" if d <= 2 else "mc"
    if method == "quadrature":
        return gauss_hermite(d, default_nodes(d))
    if method != "mc":
        raise ValueError(f"unknown integration method {method!r}")
    nodes = np.random.default_rng(seed).standard_normal((n_mc, d))
    return nodes, np.full(n_mc, -np.log(n_mc))


def _pattern_table(theta: Theta, spec: ModelSpec, nodes, logw, pats):
    """(R, P) pattern probabilities for every group under one parameter value."""
    R = spec.n_groups
    grp = jnp.arange(R)
    offset, B = _latent_design(theta, spec, jnp.zeros((R, spec.p_c)), grp, conditional=False)
    Bsub = B[group_index(spec, grp)]  # (R, pb, d)
    eta = offset[:, None, :] + jnp.einsum("rid,qd->rqi", Bsub, nodes)  # (R, Q, pb)
    # log P(pattern | node) = sum_j y_j eta - log(1 + e^eta)
    lse = jnp.sum(jnp.logaddexp(0.0, eta), axis=-1)  # (R, Q)
    ll = jnp.einsum("pi,rqi->rpq", pats, eta) - lse[:, None, :]
    lp = logsumexp(ll + logw, axis=-1)
    p = jnp.exp(lp)
    return p / jnp.sum(p, axis=-1, keepdims=True)


def response_pattern_probs(theta: Theta, spec: ModelSpec, group: int, n_mc: int = 100_000, seed: int = 0, method: str = "mc"):
    """Probabilities of all 2^p_b binary patterns for ``group`` (item 1 is the most significant bit).

    Monte Carlo by default (``n_mc`` shared latent draws), or
    ``method="quadrature"`` for models with a latent block of dimension <= 2.
    """
    if spec.p_b > 12:
        raise ValueError("pattern enumeration limited to 12 binary items")
    nodes, logw = latent_rule(spec, method, n_mc, seed)
    pats = jnp.asarray(all_patterns(spec.p_b))
    th = theta.map(lambda a: jnp.asarray(a, dtype=float))
    table = _pattern_table(th, spec, jnp.asarray(nodes), jnp.asarray(logw), pats)
    return np.asarray(table[group])


@lru_cache(maxsize=None)
def _table_fn(spec: ModelSpec):
    pats = jnp.asarray(all_patterns(spec.p_b))

    def one(q, nodes, logw):
        theta, _ = constrain(q, spec)
        return _pattern_table(theta, spec, nodes, logw, pats)

    return jax.jit(lambda Q, nodes, logw: jax.lax.map(lambda q: one(q, nodes, logw), Q))


def pattern_tables(Q, spec: ModelSpec, method: str = "auto", n_mc: int = 100_000, seed: int = 0) -> np.ndarray:
    """(M, R, 2^p_b) pattern probabilities for unconstrained draws ``Q``."""
    nodes, logw = latent_rule(spec, method, n_mc, seed)
    return np.asarray(_table_fn(spec)(jnp.asarray(Q), jnp.asarray(nodes), jnp.asarray(logw)))


@lru_cache(maxsize=None)
def _cont_fn(spec: ModelSpec):
    def one(q, yc, grp):
        theta, _ = constrain(q, spec)
        resid = yc - theta.alpha[grp, : spec.p_c]
        return _mvn_logpdf_grouped(resid, _continuous_cov(theta, spec), group_index(spec, grp))

    return jax.jit(jax.vmap(one, in_axes=(0, None, None)))


# ---------------------------------------------------------------------------
# posterior predictive p-values


def ppp_value(
    fit: PosteriorFit,
    data: Dataset,
    which: str,
    seed: int = 0,
    thin: int = 5,
    n_mc: int = 100_000,
    method: str = "auto",
    indicator: str = "<",
) -> float:
    """Fraction of retained draws whose replicated-data discrepancy exceeds the observed one.

    Every ``thin``-th draw is used. Replicates keep each group's size.
    The default indicator is 1[D(Y) < D(Y_rep)]; ``indicator=">="`` counts
    the complementary event. Ties count one half under either indicator.
    """
    spec = fit.spec
    if indicator not in ("<", ">="):
        raise ValueError("indicator must be '<' or '>='")
    if which not in ("continuous", "binary"):
        raise ValueError("which must be 'continuous' or 'binary'")
    if which == "continuous" and not spec.p_c:
        raise ValueError("model has no continuous items")
    if which == "binary" and not spec.p_b:
        raise ValueError("model has no binary items")
    idx = np.arange(0, fit.n_draws, max(thin, 1))
    if len(idx) == 0:
        raise ValueError("no posterior draws")
    counts = data.counts
    R = spec.n_groups
    tables = pattern_tables(fit.q[idx], spec, method, n_mc, seed) if which == "binary" else None
    obs_counts = pattern_counts(data.y_binary, data.groups, R) if which == "binary" else None
    ind = np.empty(len(idx))
    for t, m in enumerate(idx):
        theta = fit.theta.take(m)
        rep = simulate_dataset(spec, theta, counts, seed=[seed, int(m)], schema=data.schema)
        if which == "continuous":
            d_obs = discrepancy_lrt(data.y_continuous, data.groups, theta, spec)
            d_rep = discrepancy_lrt(rep.y_continuous, rep.groups, theta, spec)
        else:
            rep_counts = pattern_counts(rep.y_binary, rep.groups, R)
            d_obs = sum(discrepancy_g2(obs_counts[r], tables[t, r], counts[r]) for r in range(R))
            d_rep = sum(discrepancy_g2(rep_counts[r], tables[t, r], counts[r]) for r in range(R))
        if d_obs == d_rep:
            ind[t] = 0.5
        else:
            ind[t] = float(d_obs < d_rep) if indicator == "<" else float(d_obs >= d_rep)
    return float(ind.mean())


# ---------------------------------------------------------------------------
# log scores


@dataclass(frozen=True)
class LogScores:
    continuous: float
    binary: float
    joint: float  # -log of the mixture of the joint density

    @property
    def combined(self) -> float:
        return self.continuous + self.binary


def _mp(logdens: np.ndarray) -> np.ndarray:
    """-log mean_m exp(logdens[m, i]) over draws (axis 0)."""
    M = logdens.shape[0]
    if M == 0:
        raise ValueError("at least one posterior draw is required")
    return -(np.asarray(logsumexp(jnp.asarray(logdens), axis=0)) - np.log(M))


def log_score_terms(test: Dataset, fit: PosteriorFit, method: str = "auto", n_mc: int = 20_000, seed: int = 0):
    """Per-subject MP log scores: (continuous (n,), binary (n,), joint (n,))."""
    spec = fit.spec
    n = test.n
    M = fit.n_draws
    if M == 0:
        raise ValueError("at least one posterior draw is required")
    grp = np.asarray(test.groups)
    lc = np.zeros((M, n))
    lb = np.zeros((M, n))
    if spec.p_c:
        lc = np.asarray(_cont_fn(spec)(jnp.asarray(fit.q), jnp.asarray(test.y_continuous), jnp.asarray(grp)))
    if spec.p_b:
        tables = pattern_tables(fit.q, spec, method, n_mc, seed)
        pidx = pattern_index(test.y_binary)
        with np.errstate(divide="ignore"):
            lb = np.log(tables[:, grp, pidx])
    sc = _mp(lc) if spec.p_c else np.zeros(n)
    sb = _mp(lb) if spec.p_b else np.zeros(n)
    return sc, sb, _mp(lc + lb)


def log_score_mp(test: Dataset, fit: PosteriorFit, method: str = "auto", n_mc: int = 20_000, seed: int = 0) -> LogScores:
    """Summed mixtures-of-parameters log scores of the test rows (smaller is better)."""
    sc, sb, sj = log_score_terms(test, fit, method, n_mc, seed)
    return LogScores(float(sc.sum()), float(sb.sum()), float(sj.sum()))


@dataclass
class AssessmentReport:
    model: str
    ls_continuous: float
    ls_binary: float
    ppp_continuous: Optional[float] = None
    ppp_binary: Optional[float] = None
    folds: list = field(default_factory=list)  # LogScores per fold

    @property
    def ls_combined(self) -> float:
        return self.ls_continuous + self.ls_binary


def cv_log_scores(
    data: Dataset,
    specs: Sequence[ModelSpec],
    k: int = 3,
    seed: int = 0,
    n_warmup: int = 500,
    n_samples: int = 1000,
    kernel: KernelConfig = KernelConfig(),
    prior: PriorConfig = PriorConfig(),
    method: str = "auto",
    n_mc: int = 20_000,
    workers: int = 1,
) -> list:
    """k-fold cross-validated log scores per model (same folds and chain seeds for every model).

    Fold fits are independent jobs; with ``workers > 1`` they run on a
    thread pool and are collected in job order, so results do not depend
    on the worker count.
    """
    folds = split_folds(data, k, seed)
    jobs = [(spec, f) for spec in specs for f in range(len(folds))]

    def run(job):
        spec, f = job
        train, test = folds[f]
        fit = fit_model(train, spec, n_warmup, n_samples, seed=seed * 1000 + f, kernel=kernel, prior=prior)
        return log_score_mp(test, fit, method, n_mc, seed)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            scores = list(ex.map(run, jobs))
    else:
        scores = [run(j) for j in jobs]
    reports = []
    for m, spec in enumerate(specs):
        per_fold = scores[m * len(folds) : (m + 1) * len(folds)]
        reports.append(
            AssessmentReport(
                spec.name,
                float(sum(s.continuous for s in per_fold)),
                float(sum(s.binary for s in per_fold)),
                folds=per_fold,
            )
        )
    return reports


REPORT_HEADER = ["Model", "Continuous-LS", "Binary-LS", "Combined", "Continuous-PPP", "Binary-PPP"]


def report_rows(reports: Sequence[AssessmentReport]) -> list:
    def fmt(v):
        return "" if v is None else f"{v:.4f}"

    return [[r.model, fmt(r.ls_continuous), fmt(r.ls_binary), fmt(r.ls_combined), fmt(r.ppp_continuous), fmt(r.ppp_binary)] for r in reports]


__all__ = [
    "AssessmentReport",
    "LogScores",
    "REPORT_HEADER",
    "cv_log_scores",
    "discrepancy_g2",
    "discrepancy_lrt",
    "latent_rule",
    "log_score_mp",
    "log_score_terms",
    "lrt_statistic",
    "pattern_counts",
    "pattern_tables",
    "ppp_value",
    "report_rows",
    "response_pattern_probs",
]
