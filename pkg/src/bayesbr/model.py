"""Model variants, parameter containers and the constrained/unconstrained maps.

Every variant shares one parameter container, :class:`Theta`, whose arrays
carry a leading group axis ``G`` (``G = 1`` when the covariance structure is
pooled across treatment arms, ``G = R`` otherwise). Intercepts are always
group specific and have shape ``(R, p)``.

The unconstrained vector used by the samplers is laid out block by block
(intercepts, free loadings, factor correlations, log idiosyncratic
variances, residual covariance, saturated covariance); see
:class:`ParamLayout`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

VARIANTS = ("SAT", "IND", "EZ1", "EZ2", "AZ1", "AZ2")

LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class ModelSpec:
    """Structural description of one model variant.

    ``loading_mask`` marks every loading that is not structurally zero,
    ``principal_mask`` the Table-2 style pattern (the remaining masked
    entries are cross-loadings with a shrinkage prior). ``anchors[f]`` is
    the item whose loading identifies factor ``f``; ``fixed_anchor[f]``
    says whether that loading is pinned to one or only sign-identified.
    """

    variant: str
    pooled: bool
    n_groups: int
    p_c: int
    p_b: int
    k: int
    loading_mask: tuple
    principal_mask: tuple
    anchors: tuple
    fixed_anchor: tuple
    correlated: bool
    residual: bool
    link: str = "logit"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}")
        if self.link != "logit":
            raise ValueError("only the logit link is supported")
        if self.n_groups < 1:
            raise ValueError("n_groups must be >= 1")
        mask = np.asarray(self.loading_mask, dtype=bool).reshape(self.p, self.k)
        if self.k:
            for f, (item, fixed) in enumerate(zip(self.anchors, self.fixed_anchor)):
                if not mask[item, f]:
                    raise ValueError(f"anchor item {item} is not loaded on factor {f}")

    @property
    def p(self) -> int:
        return self.p_c + self.p_b

    @property
    def name(self) -> str:
        return self.variant + ("-p" if self.pooled else "")

    @property
    def G(self) -> int:
        return 1 if self.pooled else self.n_groups

    @property
    def is_factor(self) -> bool:
        return self.k > 0

    @cached_property
    def mask(self) -> np.ndarray:
        return np.asarray(self.loading_mask, dtype=bool).reshape(self.p, self.k)

    @cached_property
    def principal(self) -> np.ndarray:
        return np.asarray(self.principal_mask, dtype=bool).reshape(self.p, self.k)

    @cached_property
    def free_loadings(self) -> tuple:
        """(item, factor) pairs sampled freely, row-major over the mask."""
        fixed = {(a, f) for f, (a, fx) in enumerate(zip(self.anchors, self.fixed_anchor)) if fx}
        return tuple(
            (i, f) for i in range(self.p) for f in range(self.k) if self.mask[i, f] and (i, f) not in fixed
        )

    @cached_property
    def binary_factors(self) -> tuple:
        """Factors that load on at least one binary item."""
        if not self.k or not self.p_b:
            return ()
        return tuple(f for f in range(self.k) if self.mask[self.p_c:, f].any())

    @property
    def latent_dim(self) -> int:
        """Dimension of the per-subject latent block that cannot be integrated in closed form."""
        if not self.p_b:
            return 0
        return len(self.binary_factors) + (self.p_b if self.residual else 0)

    @property
    def has_marginal(self) -> bool:
        """Whether f(y_i | theta) is available by closed form or low-dimensional quadrature."""
        return not self.residual and self.latent_dim <= 2

    @property
    def k_corr(self) -> int:
        return self.k * (self.k - 1) // 2 if self.correlated else 0


def build_spec(variant: str, p_c: int, p_b: int, n_groups: int, pooled: bool = False) -> ModelSpec:
    """Build the ModelSpec for one of the named variants.

    EZ/AZ variants use one factor for the continuous block and one for the
    binary block. The continuous factor is anchored on the first item with
    its loading fixed to 1; the binary factor is anchored on the first
    binary item, which keeps a free loading whose sign is fixed by
    :func:`sign_postprocess`.
    """
    variant = variant.upper()
    if variant.endswith("-P"):
        variant, pooled = variant[:-2], True
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}; choose from {VARIANTS}")
    if p_c + p_b < 1:
        raise ValueError("at least one item is required")
    p = p_c + p_b
    if variant in ("SAT", "IND"):
        return ModelSpec(variant, pooled, n_groups, p_c, p_b, 0, (), (), (), (), False, False)
    if variant in ("AZ1", "AZ2") and p_b == 0:
        raise ValueError(f"{variant} needs binary items for its residual covariance")
    blocks = []
    if p_c:
        blocks.append(range(0, p_c))
    if p_b:
        blocks.append(range(p_c, p))
    k = len(blocks)
    principal = np.zeros((p, k), dtype=bool)
    for f, items in enumerate(blocks):
        principal[list(items), f] = True
    mask = principal.copy()
    if variant == "AZ2":
        mask[:] = True
    anchors = tuple(items[0] for items in blocks)
    fixed = tuple(p_c > 0 and f == 0 for f in range(k))
    correlated = variant != "EZ1" and k == 2
    residual = variant in ("AZ1", "AZ2")
    return ModelSpec(
        variant,
        pooled,
        n_groups,
        p_c,
        p_b,
        k,
        tuple(mask.ravel().tolist()),
        tuple(principal.ravel().tolist()),
        anchors,
        fixed,
        correlated,
        residual,
    )


@dataclass
class Theta:
    """Parameter block of a model.

    alpha : (R, p) intercepts.
    lam   : (G, p, k) loadings.
    phi   : (G, k, k) factor correlation matrix.
    psi   : (G, p_c) idiosyncratic variances (psi_j^2) of continuous items; factor models only.
    omega : (G, p_b, p_b) residual covariance of the binary block; AZ variants only.
    sigma : (G, p_c, p_c) continuous covariance; SAT/IND only.

    Leading batch axes (posterior draws, particles) are allowed in front
    of every array.
    """

    alpha: object
    lam: object
    phi: object
    psi: Optional[object] = None
    omega: Optional[object] = None
    sigma: Optional[object] = None

    def map(self, fn):
        return Theta(**{f.name: (None if getattr(self, f.name) is None else fn(getattr(self, f.name))) for f in fields(self)})

    def numpy(self) -> "Theta":
        return self.map(np.asarray)

    def take(self, idx) -> "Theta":
        return self.map(lambda a: a[idx])


jax.tree_util.register_dataclass(
    Theta, data_fields=["alpha", "lam", "phi", "psi", "omega", "sigma"], meta_fields=[]
)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the prior stack.

    ``loading_sd_continuous=None`` means twice the sample standard
    deviation of the item anchoring each continuous factor;
    ``iw_dof=None`` means ``p_b + 6``.
    """

    loading_sd_continuous: Optional[float] = None
    loading_sd_binary: float = 2.0
    crossloading_sd: float = 0.1
    c0: float = 2.5
    lkj_eta: float = 2.0
    iw_dof: Optional[float] = None
    alpha_sd: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not v > 0:
                raise ValueError(f"prior hyperparameter {f.name} must be positive, got {v}")
        if self.c0 <= 1:
            raise ValueError("c0 must exceed 1 so that the inverse-gamma scale (c0-1)/s is positive")


@dataclass(frozen=True)
class LatentState:
    """Per-subject latent variables in raw coordinates: z (n, k) and u (n, p_b) or None."""

    z: np.ndarray
    u: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# unconstrained layout


@dataclass(frozen=True)
class ParamLayout:
    spec: ModelSpec
    slices: dict = field(default_factory=dict)
    dim: int = 0

    @classmethod
    def of(cls, spec: ModelSpec) -> "ParamLayout":
        sizes = [("alpha", spec.n_groups * spec.p)]
        G = spec.G
        if spec.is_factor:
            sizes.append(("loadings", G * len(spec.free_loadings)))
            sizes.append(("phi", G * spec.k_corr))
            sizes.append(("psi", G * spec.p_c))
            if spec.residual:
                sizes.append(("omega", G * spec.p_b * (spec.p_b + 1) // 2))
        else:
            sizes.append(("variances", G * spec.p_c))
            if spec.variant == "SAT":
                sizes.append(("corr", G * spec.p_c * (spec.p_c - 1) // 2))
        slices, start = {}, 0
        for name, size in sizes:
            slices[name] = slice(start, start + size)
            start += size
        return cls(spec, slices, start)


def layout(spec: ModelSpec) -> ParamLayout:
    return _layout_cache(spec)


_LAYOUTS: dict = {}


def _layout_cache(spec):
    if spec not in _LAYOUTS:
        _LAYOUTS[spec] = ParamLayout.of(spec)
    return _LAYOUTS[spec]


def cpc_pairs(d: int) -> list:
    """Lower-triangular (row, col) positions of canonical partial correlations, column-major."""
    return [(i, j) for j in range(d) for i in range(j + 1, d)]


def corr_from_unconstrained(y, d: int):
    """Correlation matrix from ``d(d-1)/2`` reals via tanh'd canonical partial correlations.

    Returns the matrix and the log absolute Jacobian of the map onto its
    strictly-lower entries.
    """
    if d == 1:
        return jnp.ones((1, 1)), jnp.zeros(())
    pairs = cpc_pairs(d)
    z = jnp.tanh(y)
    log1mz2 = jnp.log1p(-z**2)
    cpc = [[None] * d for _ in range(d)]
    logjac = jnp.sum(log1mz2)
    for pos, (i, j) in enumerate(pairs):
        cpc[i][j] = z[pos]
        logjac = logjac + 0.5 * (d - j - 2) * log1mz2[pos]
    rows = []
    for i in range(d):
        row, ssq = [], 0.0
        for j in range(d):
            if j < i:
                v = cpc[i][j] if j == 0 else cpc[i][j] * jnp.sqrt(1.0 - ssq)
                ssq = ssq + v**2
                row.append(v)
            elif j == i:
                row.append(jnp.sqrt(jnp.maximum(1.0 - ssq, 0.0)) if i else jnp.ones(()))
            else:
                row.append(jnp.zeros(()))
        rows.append(jnp.stack(row))
    L = jnp.stack(rows)
    return L @ L.T, logjac


def corr_to_unconstrained(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    L = np.linalg.cholesky(R)
    out = []
    for i, j in cpc_pairs(d):
        denom = np.sqrt(1.0 - np.sum(L[i, :j] ** 2))
        out.append(np.arctanh(np.clip(L[i, j] / denom, -1 + 1e-15, 1 - 1e-15)))
    return np.asarray(out)


def cpcs_of_corr(R):
    """Canonical partial correlations (column-major) of a correlation matrix (jnp-traceable)."""
    d = R.shape[0]
    L = jnp.linalg.cholesky(R)
    out = []
    for i, j in cpc_pairs(d):
        out.append(L[i, j] / jnp.sqrt(1.0 - jnp.sum(L[i, :j] ** 2)))
    return jnp.stack(out) if out else jnp.zeros((0,))


def cov_from_unconstrained(y, d: int):
    """Covariance matrix from its Cholesky factor (log diagonal first, then strict lower row-major)."""
    diag = jnp.exp(y[:d])
    L = jnp.diag(diag)
    rows, cols = np.tril_indices(d, -1)
    L = L.at[rows, cols].set(y[d:])
    logjac = d * LOG2 + jnp.sum((d - jnp.arange(d) + 1) * y[:d])
    return L @ L.T, logjac


def cov_to_unconstrained(S: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(np.asarray(S, dtype=float))
    d = L.shape[0]
    rows, cols = np.tril_indices(d, -1)
    return np.concatenate([np.log(np.diag(L)), L[rows, cols]])


def constrain(q, spec: ModelSpec):
    """Map an unconstrained vector to :class:`Theta`; returns ``(theta, log_jacobian)``.

    The Jacobian is taken with respect to the constrained coordinates the
    prior is written in: free loadings, idiosyncratic variances, the
    strictly-lower entries of each correlation matrix, the lower triangle
    of each residual covariance, and (SAT) variances plus correlations.
    """
    lay = layout(spec)
    G, R, p, k = spec.G, spec.n_groups, spec.p, spec.k
    q = jnp.asarray(q)
    alpha = q[lay.slices["alpha"]].reshape(R, p)
    logjac = jnp.zeros(())
    if spec.is_factor:
        nf = len(spec.free_loadings)
        free = q[lay.slices["loadings"]].reshape(G, nf)
        lam = jnp.zeros((G, p, k))
        for f, (a, fx) in enumerate(zip(spec.anchors, spec.fixed_anchor)):
            if fx:
                lam = lam.at[:, a, f].set(1.0)
        if nf:
            ii, ff = zip(*spec.free_loadings)
            lam = lam.at[:, np.asarray(ii), np.asarray(ff)].set(free)
        if spec.correlated:
            yc = q[lay.slices["phi"]].reshape(G, spec.k_corr)
            phi, lj = jax.vmap(lambda y: corr_from_unconstrained(y, k))(yc)
            logjac = logjac + jnp.sum(lj)
        else:
            phi = jnp.broadcast_to(jnp.eye(k), (G, k, k))
        lpsi = q[lay.slices["psi"]].reshape(G, spec.p_c)
        psi = jnp.exp(lpsi)
        logjac = logjac + jnp.sum(lpsi)
        omega = None
        if spec.residual:
            m = spec.p_b * (spec.p_b + 1) // 2
            yo = q[lay.slices["omega"]].reshape(G, m)
            omega, lj = jax.vmap(lambda y: cov_from_unconstrained(y, spec.p_b))(yo)
            logjac = logjac + jnp.sum(lj)
        return Theta(alpha, lam, phi, psi=psi, omega=omega), logjac
    lvar = q[lay.slices["variances"]].reshape(G, spec.p_c)
    var = jnp.exp(lvar)
    logjac = logjac + jnp.sum(lvar)
    if spec.variant == "SAT" and spec.p_c > 1:
        m = spec.p_c * (spec.p_c - 1) // 2
        yc = q[lay.slices["corr"]].reshape(G, m)
        corr, lj = jax.vmap(lambda y: corr_from_unconstrained(y, spec.p_c))(yc)
        logjac = logjac + jnp.sum(lj)
    else:
        corr = jnp.broadcast_to(jnp.eye(spec.p_c), (G, spec.p_c, spec.p_c))
    sd = jnp.sqrt(var)
    sigma = corr * sd[:, :, None] * sd[:, None, :]
    return Theta(alpha, jnp.zeros((G, p, 0)), jnp.zeros((G, 0, 0)), sigma=sigma), logjac


def unconstrain(theta: Theta, spec: ModelSpec) -> np.ndarray:
    """Inverse of :func:`constrain` (numpy; raises ``ValueError`` on non-PD input)."""
    validate_theta(theta, spec)
    th = theta.numpy()
    lay = layout(spec)
    q = np.zeros(lay.dim)
    q[lay.slices["alpha"]] = th.alpha.ravel()
    G = spec.G
    if spec.is_factor:
        if spec.free_loadings:
            ii, ff = zip(*spec.free_loadings)
            q[lay.slices["loadings"]] = th.lam[:, np.asarray(ii), np.asarray(ff)].ravel()
        if spec.correlated:
            q[lay.slices["phi"]] = np.concatenate([corr_to_unconstrained(th.phi[g]) for g in range(G)])
        q[lay.slices["psi"]] = np.log(th.psi).ravel()
        if spec.residual:
            q[lay.slices["omega"]] = np.concatenate([cov_to_unconstrained(th.omega[g]) for g in range(G)])
        return q
    var = np.stack([np.diag(th.sigma[g]) for g in range(G)])
    q[lay.slices["variances"]] = np.log(var).ravel()
    if spec.variant == "SAT" and spec.p_c > 1:
        parts = []
        for g in range(G):
            sd = np.sqrt(var[g])
            parts.append(corr_to_unconstrained(th.sigma[g] / np.outer(sd, sd)))
        q[lay.slices["corr"]] = np.concatenate(parts)
    return q


def _is_pd(a) -> bool:
    try:
        np.linalg.cholesky(np.asarray(a, dtype=float))
    except np.linalg.LinAlgError:
        return False
    return bool(np.allclose(a, np.swapaxes(a, -1, -2), atol=1e-10))


def validate_theta(theta: Theta, spec: ModelSpec) -> None:
    """Raise ``ValueError`` if ``theta`` violates the invariants of ``spec``."""
    th = theta.numpy()
    G, R, p, k = spec.G, spec.n_groups, spec.p, spec.k
    if th.alpha.shape != (R, p):
        raise ValueError(f"alpha must have shape {(R, p)}, got {th.alpha.shape}")
    if spec.is_factor:
        if th.lam.shape != (G, p, k) or th.phi.shape != (G, k, k):
            raise ValueError("loading/correlation shapes do not match the model spec")
        if np.any(th.lam[:, ~spec.mask] != 0.0):
            raise ValueError("loadings outside the mask must be exactly zero")
        for f, (a, fx) in enumerate(zip(spec.anchors, spec.fixed_anchor)):
            if fx and np.any(th.lam[:, a, f] != 1.0):
                raise ValueError(f"anchor loading of factor {f} must equal 1")
        for g in range(G):
            if not _is_pd(th.phi[g]) or not np.allclose(np.diag(th.phi[g]), 1.0):
                raise ValueError("phi must be a positive-definite correlation matrix")
            if not spec.correlated and not np.allclose(th.phi[g], np.eye(k)):
                raise ValueError(f"{spec.variant} has independent factors; phi must be the identity")
        if th.psi is None or th.psi.shape != (G, spec.p_c) or np.any(th.psi <= 0):
            raise ValueError("psi must hold positive idiosyncratic variances")
        if spec.residual:
            if th.omega is None or th.omega.shape != (G, spec.p_b, spec.p_b):
                raise ValueError("omega missing or misshapen")
            for g in range(G):
                if not _is_pd(th.omega[g]):
                    raise ValueError("omega must be symmetric positive-definite")
    else:
        if th.sigma is None or th.sigma.shape != (G, spec.p_c, spec.p_c):
            raise ValueError("sigma missing or misshapen")
        for g in range(G):
            if spec.p_c and not _is_pd(th.sigma[g]):
                raise ValueError("sigma must be symmetric positive-definite")
            if spec.variant == "IND" and np.any(th.sigma[g] - np.diag(np.diag(th.sigma[g])) != 0):
                raise ValueError("IND covariance must be diagonal")


def stack_thetas(thetas) -> Theta:
    thetas = list(thetas)
    first = thetas[0]
    return Theta(
        **{
            f.name: (None if getattr(first, f.name) is None else np.stack([np.asarray(getattr(t, f.name)) for t in thetas]))
            for f in fields(first)
        }
    )


def constrain_many(Q: np.ndarray, spec: ModelSpec) -> Theta:
    """Vectorised :func:`constrain` over rows of ``Q``; returns numpy arrays with a leading axis."""
    fn = _constrain_batch(spec)
    return fn(jnp.asarray(Q)).numpy()


_CONSTRAIN_FNS: dict = {}


def _constrain_batch(spec):
    if spec not in _CONSTRAIN_FNS:
        _CONSTRAIN_FNS[spec] = jax.jit(jax.vmap(lambda q: constrain(q, spec)[0]))
    return _CONSTRAIN_FNS[spec]


def reflection_signs(theta: Theta, spec: ModelSpec) -> np.ndarray:
    """Per-draw, per-group, per-factor sign (+1/-1) that makes each free anchor loading nonnegative."""
    lam = np.asarray(theta.lam)
    batch = lam.shape[:-3]
    signs = np.ones(batch + (spec.G, spec.k))
    for f, (a, fx) in enumerate(zip(spec.anchors, spec.fixed_anchor)):
        if not fx:
            signs[..., f] = np.where(lam[..., a, f] < 0, -1.0, 1.0)
    return signs


def sign_postprocess(theta: Theta, spec: ModelSpec) -> Theta:
    """Reflect each factor whose (free) anchor loading is negative.

    Flipping factor f negates column f of the loadings and row/column f of
    the factor correlation matrix (diagonal untouched). The likelihood and
    the prior are invariant under this reflection. Works on a single Theta
    or on a stack of draws with leading axes.
    """
    if not spec.is_factor:
        return theta
    s = reflection_signs(theta, spec)
    lam = np.asarray(theta.lam) * s[..., None, :]
    phi = np.asarray(theta.phi) * s[..., :, None] * s[..., None, :]
    return replace(theta.numpy(), lam=lam, phi=phi)


def param_names(spec: ModelSpec, group_labels=None, item_names=None) -> list:
    """Names of the unconstrained coordinates, 1-indexed (``lambda[2,1]``, ``alpha[1,AVM]``)."""
    R, G = spec.n_groups, spec.G
    labels = list(group_labels) if group_labels is not None else [f"g{r + 1}" for r in range(R)]
    gl = (lambda g: "") if spec.pooled else (lambda g: f"|{labels[g]}")
    names = [f"alpha[{j + 1},{labels[r]}]" for r in range(R) for j in range(spec.p)]
    if spec.is_factor:
        names += [f"lambda[{i + 1},{f + 1}]{gl(g)}" for g in range(G) for i, f in spec.free_loadings]
        names += [f"phi_cpc[{i + 1},{j + 1}]{gl(g)}" for g in range(G) for i, j in cpc_pairs(spec.k)] if spec.correlated else []
        names += [f"log_psi[{j + 1}]{gl(g)}" for g in range(G) for j in range(spec.p_c)]
        if spec.residual:
            d = spec.p_b
            rows, cols = np.tril_indices(d, -1)
            for g in range(G):
                names += [f"omega_logdiag[{j + 1}]{gl(g)}" for j in range(d)]
                names += [f"omega_chol[{i + 1},{j + 1}]{gl(g)}" for i, j in zip(rows, cols)]
    else:
        names += [f"log_var[{j + 1}]{gl(g)}" for g in range(G) for j in range(spec.p_c)]
        if spec.variant == "SAT":
            names += [f"corr_cpc[{i + 1},{j + 1}]{gl(g)}" for g in range(G) for i, j in cpc_pairs(spec.p_c)]
    return names


def constrained_summary_params(theta: Theta, spec: ModelSpec, group_labels=None) -> dict:
    """Flatten a (stack of) Theta into named constrained parameters for reporting.

    Reported: every intercept, every free loading, factor correlations,
    idiosyncratic variances, residual covariances and saturated covariances.
    """
    R, G = spec.n_groups, spec.G
    labels = list(group_labels) if group_labels is not None else [f"g{r + 1}" for r in range(R)]
    gl = (lambda g: "") if spec.pooled else (lambda g: f"|{labels[g]}")
    th = theta.numpy()
    out = {}
    if spec.is_factor:
        for g in range(G):
            for i, f in spec.free_loadings:
                out[f"lambda[{i + 1},{f + 1}]{gl(g)}"] = th.lam[..., g, i, f]
    for r in range(R):
        for j in range(spec.p):
            out[f"alpha[{j + 1},{labels[r]}]"] = th.alpha[..., r, j]
    if spec.is_factor:
        for g in range(G):
            if spec.correlated:
                for i, j in itertools.combinations(range(spec.k), 2):
                    out[f"phi[{i + 1},{j + 1}]{gl(g)}"] = th.phi[..., g, i, j]
            for j in range(spec.p_c):
                out[f"psi[{j + 1}]{gl(g)}"] = th.psi[..., g, j]
            if spec.residual:
                for i in range(spec.p_b):
                    for j in range(i + 1):
                        out[f"omega[{i + 1},{j + 1}]{gl(g)}"] = th.omega[..., g, i, j]
    else:
        for g in range(G):
            for i in range(spec.p_c):
                for j in range(i + 1):
                    if spec.variant == "IND" and i != j:
                        continue
                    out[f"sigma[{i + 1},{j + 1}]{gl(g)}"] = th.sigma[..., g, i, j]
    return out


def theta_from_named(named: dict, spec: ModelSpec, group_labels=None) -> Theta:
    """Inverse of :func:`constrained_summary_params`: rebuild a stacked Theta from named columns."""
    R, G, p, k = spec.n_groups, spec.G, spec.p, spec.k
    labels = list(group_labels) if group_labels is not None else [f"g{r + 1}" for r in range(R)]
    gl = (lambda g: "") if spec.pooled else (lambda g: f"|{labels[g]}")
    first = np.asarray(next(iter(named.values())))
    batch = first.shape

    def col(name):
        if name not in named:
            raise KeyError(f"draws are missing column {name!r}")
        return np.asarray(named[name], dtype=float)

    alpha = np.zeros(batch + (R, p))
    for r in range(R):
        for j in range(p):
            alpha[..., r, j] = col(f"alpha[{j + 1},{labels[r]}]")
    if spec.is_factor:
        lam = np.zeros(batch + (G, p, k))
        for f, (a, fx) in enumerate(zip(spec.anchors, spec.fixed_anchor)):
            if fx:
                lam[..., :, a, f] = 1.0
        phi = np.broadcast_to(np.eye(k), batch + (G, k, k)).copy()
        psi = np.zeros(batch + (G, spec.p_c))
        omega = np.zeros(batch + (G, spec.p_b, spec.p_b)) if spec.residual else None
        for g in range(G):
            for i, f in spec.free_loadings:
                lam[..., g, i, f] = col(f"lambda[{i + 1},{f + 1}]{gl(g)}")
            if spec.correlated:
                for i, j in itertools.combinations(range(k), 2):
                    phi[..., g, i, j] = phi[..., g, j, i] = col(f"phi[{i + 1},{j + 1}]{gl(g)}")
            for j in range(spec.p_c):
                psi[..., g, j] = col(f"psi[{j + 1}]{gl(g)}")
            if spec.residual:
                for i in range(spec.p_b):
                    for j in range(i + 1):
                        omega[..., g, i, j] = omega[..., g, j, i] = col(f"omega[{i + 1},{j + 1}]{gl(g)}")
        return Theta(alpha, lam, phi, psi=psi, omega=omega)
    sigma = np.zeros(batch + (G, spec.p_c, spec.p_c))
    for g in range(G):
        for i in range(spec.p_c):
            for j in range(i + 1):
                if spec.variant == "IND" and i != j:
                    continue
                sigma[..., g, i, j] = sigma[..., g, j, i] = col(f"sigma[{i + 1},{j + 1}]{gl(g)}")
    return Theta(alpha, np.zeros(batch + (G, p, 0)), np.zeros(batch + (G, 0, 0)), sigma=sigma)
