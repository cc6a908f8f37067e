"""Benefit-risk scores from posterior draws or weighted particles.

Each criterion maps the expected outcome of a treatment group onto [0, 1]
with a clamped linear partial value function; the score is the weighted
sum of the partial values. Continuous criteria use the group intercept
directly. Binary criteria use the event probability, by default
sigmoid(alpha) (the probability for a subject with zero latent scores) or,
with ``marginalised=True``, the population probability averaged over the
latent variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from bayesbr.model import ModelSpec, Theta

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class Criterion:
    name: str
    weight: float
    low: float
    high: float
    orientation: str = "decreasing"  # "decreasing": the low end of the range is best
    scale: str = "raw"  # "raw" for continuous items, "probability" for binary items

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"criterion {self.name!r}: weight must be nonnegative")
        if self.low == self.high:
            raise ValueError(f"criterion {self.name!r}: range endpoints must differ")
        if self.orientation not in ("increasing", "decreasing"):
            raise ValueError(f"criterion {self.name!r}: orientation must be 'increasing' or 'decreasing'")
        if self.scale not in ("raw", "probability"):
            raise ValueError(f"criterion {self.name!r}: scale must be 'raw' or 'probability'")

    @property
    def worst(self) -> float:
        return self.high if self.orientation == "decreasing" else self.low

    @property
    def best(self) -> float:
        return self.low if self.orientation == "decreasing" else self.high


@dataclass(frozen=True)
class McdaConfig:
    criteria: tuple
    marginalised: bool = False

    def __post_init__(self):
        object.__setattr__(self, "criteria", tuple(self.criteria))
        if not self.criteria:
            raise ValueError("at least one criterion is required")
        total = sum(c.weight for c in self.criteria)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"criterion weights must sum to 1, got {total!r}")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.criteria])

    @property
    def names(self) -> list:
        return [c.name for c in self.criteria]

    def check(self, spec: ModelSpec) -> None:
        if len(self.criteria) != spec.p:
            raise ValueError(f"MCDA config has {len(self.criteria)} criteria but the model has {spec.p} items")
        for j, c in enumerate(self.criteria):
            want = "raw" if j < spec.p_c else "probability"
            if c.scale != want:
                raise ValueError(f"criterion {c.name!r} must use scale {want!r} for item {j + 1}")


def default_config() -> McdaConfig:
    """Six-criterion configuration for a diabetes benefit-risk assessment.

    Two continuous benefits (reductions in haemoglobin A1c and fasting
    glucose) and four adverse-event probabilities, all preferring lower values.
    """
    return McdaConfig(
        (
            Criterion("haemoglobin", 0.592, -6.0, 3.0, "decreasing", "raw"),
            Criterion("glucose", 0.118, -15.0, 7.5, "decreasing", "raw"),
            Criterion("diarrhoea", 0.089, 0.10, 0.35, "decreasing", "probability"),
            Criterion("nausea", 0.178, 0.10, 0.25, "decreasing", "probability"),
            Criterion("vomiting", 0.018, 0.10, 0.20, "decreasing", "probability"),
            Criterion("dyspepsia", 0.005, 0.10, 0.25, "decreasing", "probability"),
        )
    )


def renormalised(cfg: McdaConfig, weights: Sequence[float]) -> McdaConfig:
    """Same criteria with ``weights`` rescaled to sum to one."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    crit = tuple(Criterion(c.name, float(wi), c.low, c.high, c.orientation, c.scale) for c, wi in zip(cfg.criteria, w))
    return McdaConfig(crit, cfg.marginalised)


def partial_utility(x, c: Criterion):
    """Linear map with worst endpoint -> 0 and best -> 1, clamped to [0, 1]."""
    x = np.asarray(x, dtype=float)
    u = (x - c.worst) / (c.best - c.worst)
    return np.clip(u, 0.0, 1.0)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def expected_outcomes(theta: Theta, spec: ModelSpec, marginalised: bool = False, n_nodes: int = 40) -> np.ndarray:
    """(..., R, p) expected outcomes per group: alpha for continuous items, event probabilities for binary ones.

    The marginalised probability integrates sigmoid over the latent
    linear predictor, which is Gaussian per item, with 1-d Gauss-Hermite
    quadrature.
    """
    alpha = np.asarray(theta.alpha, dtype=float)
    pc = spec.p_c
    if not spec.p_b or not marginalised or not spec.is_factor:
        return expected_from_alpha(alpha, pc)
    out = alpha.copy()
    lam = np.asarray(theta.lam, dtype=float)[..., pc:, :]  # (..., G, pb, k)
    var = np.einsum("...gik,...gkl,...gil->...gi", lam, np.asarray(theta.phi, dtype=float), lam)
    if spec.residual:
        var = var + np.diagonal(np.asarray(theta.omega, dtype=float), axis1=-2, axis2=-1)
    sd = np.sqrt(var)  # (..., G, pb)
    if spec.pooled:
        sd = np.repeat(sd, spec.n_groups, axis=-2)
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    eta = alpha[..., pc:, None] + sd[..., None] * x
    out[..., pc:] = _sigmoid(eta) @ w
    return out


def expected_from_alpha(alpha, p_c: int) -> np.ndarray:
    """Continuous items at alpha, binary items at sigmoid(alpha)."""
    out = np.array(alpha, dtype=float, copy=True)
    out[..., p_c:] = _sigmoid(out[..., p_c:])
    return out


def scores_from_expected(expected: np.ndarray, cfg: McdaConfig) -> np.ndarray:
    """Weighted partial-value sum over the last axis of ``expected`` (..., p) -> (...)."""
    u = np.stack([partial_utility(expected[..., j], c) for j, c in enumerate(cfg.criteria)], axis=-1)
    # dividing by the weight total computed the same way makes the endpoints exactly 0 and 1
    total = np.ones(len(cfg.criteria)) @ cfg.weights
    return np.clip((u @ cfg.weights) / total, 0.0, 1.0)


def mcda_score(theta: Theta, group: int, cfg: McdaConfig, spec: ModelSpec) -> float:
    """Score of one treatment group under one parameter draw."""
    cfg.check(spec)
    e = expected_outcomes(theta, spec, cfg.marginalised)
    return float(scores_from_expected(e[..., group, :], cfg))


@dataclass
class ScorePosterior:
    scores: np.ndarray  # (M, R)
    weights: np.ndarray = field(default=None)  # (M,), sums to one
    group_labels: Optional[tuple] = None

    def __post_init__(self):
        self.scores = np.atleast_2d(np.asarray(self.scores, dtype=float))
        M = len(self.scores)
        w = np.ones(M) if self.weights is None else np.asarray(self.weights, dtype=float)
        self.weights = w / w.sum()
        if np.any((self.scores < 0) | (self.scores > 1)):
            raise ValueError("scores must lie in [0, 1]")

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.scores

    def quantiles(self, qs=(0.025, 0.5, 0.975)) -> np.ndarray:
        from bayesbr.inference import weighted_quantile

        return np.stack([weighted_quantile(self.scores[:, r], self.weights, qs) for r in range(self.scores.shape[1])])

    def superiority_matrix(self) -> np.ndarray:
        R = self.scores.shape[1]
        P = np.full((R, R), np.nan)
        for a in range(R):
            for b in range(R):
                if a != b:
                    P[a, b] = superiority_prob(self.scores[:, a], self.scores[:, b], self.weights)
        return P


def score_posterior(theta: Theta, cfg: McdaConfig, spec: ModelSpec, weights=None, group_labels=None) -> ScorePosterior:
    """Scores of every group for each draw of a stacked Theta (leading draw axis)."""
    cfg.check(spec)
    e = expected_outcomes(theta, spec, cfg.marginalised)
    s = scores_from_expected(e, cfg)
    return ScorePosterior(s.reshape(-1, spec.n_groups), weights, group_labels)


def particle_score_fn(target, cfg: McdaConfig):
    """``Q (N, dim) -> (N, R)`` scores for a model target's unconstrained particles."""
    spec = target.spec
    cfg.check(spec)
    if not cfg.marginalised:
        def fn(Q):
            return scores_from_expected(expected_from_alpha(target.intercepts(Q), spec.p_c), cfg)

        return fn

    from bayesbr.model import constrain_many

    def fn_marg(Q):
        th = constrain_many(Q, spec)
        return scores_from_expected(expected_outcomes(th, spec, True), cfg)

    return fn_marg


def superiority_prob(sa, sb, weights=None) -> float:
    """Weighted P(s_a > s_b) over paired draws; ties count one half."""
    sa = np.asarray(sa, dtype=float)
    sb = np.asarray(sb, dtype=float)
    w = np.ones(len(sa)) if weights is None else np.asarray(weights, dtype=float)
    ind = (sa > sb).astype(float) + 0.5 * (sa == sb)
    return float(np.sum(w * ind) / np.sum(w))


def first_crossing(values: Sequence[float], threshold: float):
    """1-based index of the first value strictly above ``threshold``; None if never."""
    for i, v in enumerate(values, start=1):
        if v > threshold:
            return i
    return None


def sequential_trace(trace: list, group_labels: Sequence[str], threshold: float = 0.99):
    """Flatten sequential records into table rows and first-crossing indices.

    Returns (header, rows, crossings) where ``crossings[(a, b)]`` is the
    first step at which P(s_a > s_b) exceeds ``threshold`` (None if never).
    """
    labels = list(group_labels)
    R = len(labels)
    pairs = [(a, b) for a in range(R) for b in range(R) if a != b]
    header = ["i", "subject", "group", "ess", "log_L", "log_evidence", "rejuvenated"]
    has_scores = bool(trace) and "score_mean" in trace[0]
    if has_scores:
        for r in labels:
            header += [f"mean_{r}", f"q025_{r}", f"q975_{r}"]
        header += [f"P({labels[a]}>{labels[b]})" for a, b in pairs]
    rows = []
    for rec in trace:
        row = [rec["i"], rec["subject"], labels[rec["group"]], rec["ess"], rec["log_L"], rec["log_evidence"], int(rec["rejuvenated"])]
        if has_scores:
            for r in range(R):
                row += [rec["score_mean"][r], rec["score_lo"][r], rec["score_hi"][r]]
            row += [rec["superiority"][a, b] for a, b in pairs]
        rows.append(row)
    crossings = {}
    if has_scores:
        for a, b in pairs:
            crossings[(labels[a], labels[b])] = first_crossing([rec["superiority"][a, b] for rec in trace], threshold)
    return header, rows, crossings


__all__ = [
    "Criterion",
    "McdaConfig",
    "ScorePosterior",
    "default_config",
    "expected_from_alpha",
    "expected_outcomes",
    "first_crossing",
    "mcda_score",
    "partial_utility",
    "particle_score_fn",
    "renormalised",
    "score_posterior",
    "scores_from_expected",
    "sequential_trace",
    "superiority_prob",
]
