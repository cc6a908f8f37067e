"""Mixed-type multi-group datasets: schema, file IO, simulation, reordering, folds."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from bayesbr.model import ModelSpec, Theta


class DataError(ValueError):
    """Raised when a dataset file or object violates the schema."""


@dataclass(frozen=True)
class OutcomeSchema:
    items: tuple  # ((name, kind), ...) with kind in {"continuous", "binary"}
    group_labels: tuple

    def __post_init__(self):
        items = tuple((str(n), str(k)) for n, k in self.items)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "group_labels", tuple(str(g) for g in self.group_labels))
        if not items:
            raise DataError("schema needs at least one item")
        kinds = [k for _, k in items]
        if any(k not in ("continuous", "binary") for k in kinds):
            raise DataError(f"item kinds must be 'continuous' or 'binary', got {kinds}")
        if "binary" in kinds and "continuous" in kinds[kinds.index("binary"):]:
            raise DataError("continuous items must be listed before binary items")
        names = [n for n, _ in items]
        if len(set(names)) != len(names):
            raise DataError("item names must be unique")
        if not self.group_labels:
            raise DataError("schema needs at least one group")
        if len(set(self.group_labels)) != len(self.group_labels):
            raise DataError("group labels must be unique")

    @property
    def names(self) -> list:
        return [n for n, _ in self.items]

    @property
    def p(self) -> int:
        return len(self.items)

    @property
    def p_c(self) -> int:
        return sum(k == "continuous" for _, k in self.items)

    @property
    def p_b(self) -> int:
        return self.p - self.p_c

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Subjects x outcomes with treatment-group indices. Arrays are read-only."""

    schema: OutcomeSchema
    subject_ids: tuple
    groups: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        groups = np.asarray(self.groups, dtype=np.int64).copy()
        y = np.asarray(self.y, dtype=float).reshape(len(groups), self.schema.p).copy()
        groups.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        if len(self.subject_ids) != len(groups):
            raise DataError("one subject id per row is required")
        if len(groups) and (groups.min() < 0 or groups.max() >= self.schema.n_groups):
            raise DataError("group index out of range")
        pc = self.schema.p_c
        if not np.all(np.isfinite(y[:, :pc])):
            raise DataError("continuous entries must be finite")
        if not np.all(np.isin(y[:, pc:], (0.0, 1.0))):
            raise DataError("binary entries must be 0 or 1")

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.schema == other.schema
            and self.subject_ids == other.subject_ids
            and np.array_equal(self.groups, other.groups)
            and np.array_equal(self.y, other.y)
        )

    def __len__(self):
        return len(self.groups)

    @property
    def n(self) -> int:
        return len(self.groups)

    @property
    def counts(self) -> tuple:
        return tuple(int(c) for c in np.bincount(self.groups, minlength=self.schema.n_groups))

    @property
    def y_continuous(self) -> np.ndarray:
        return self.y[:, : self.schema.p_c]

    @property
    def y_binary(self) -> np.ndarray:
        return self.y[:, self.schema.p_c :]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.schema, tuple(self.subject_ids[i] for i in idx), self.groups[idx], self.y[idx])


@dataclass(frozen=True)
class SequentialSchedule:
    order: tuple
    assigned_group: tuple

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise DataError("schedule order must be a permutation of the row indices")


# ---------------------------------------------------------------------------
# IO


def _fmt(v: float, binary: bool) -> str:
    return str(int(v)) if binary else repr(float(v))


def dataset_text(d: Dataset, delimiter: str = ",") -> str:
    """``subject_id, group, <items...>`` delimited text with a header row."""
    pc = d.schema.p_c
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(["subject_id", "group", *d.schema.names])
    for sid, g, row in zip(d.subject_ids, d.groups, d.y):
        w.writerow([sid, d.schema.group_labels[g], *(_fmt(v, j >= pc) for j, v in enumerate(row))])
    return buf.getvalue()


def write_dataset(d: Dataset, path, delimiter: str = ",") -> None:
    """Write :func:`dataset_text` to ``path`` as UTF-8."""
    Path(path).write_text(dataset_text(d, delimiter), encoding="utf-8")


def load_dataset(path, schema: OutcomeSchema, delimiter: Optional[str] = None) -> Dataset:
    """Read and validate a dataset file against ``schema``.

    Raises :class:`DataError` for an empty file, missing columns, unknown
    group labels, non-numeric or missing values, and binary values other
    than 0/1 (the message names the row and column).
    """
    text = Path(path).read_text(encoding="utf-8")
    if delimiter is None:
        delimiter = "\t" if str(path).endswith((".tsv", ".tab")) else ","
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter) if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataError("empty file")
    header = [h.strip() for h in rows[0]]
    required = ["subject_id", "group", *schema.names]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    col = {name: header.index(name) for name in required}
    label_index = {g: r for r, g in enumerate(schema.group_labels)}
    ids, groups, ys = [], [], []
    pc = schema.p_c
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < len(header):
            raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        label = row[col["group"]].strip()
        if label not in label_index:
            raise DataError(f"row {lineno}: unknown group label {label!r}")
        vals = []
        for j, name in enumerate(schema.names):
            raw = row[col[name]].strip()
            try:
                v = float(raw)
            except ValueError:
                raise DataError(f"row {lineno}, column {name!r}: not a number ({raw!r})") from None
            if not math.isfinite(v):
                raise DataError(f"row {lineno}, column {name!r}: missing or non-finite value")
            if j >= pc and v not in (0.0, 1.0):
                raise DataError(f"row {lineno}, column {name!r}: binary value must be 0 or 1, got {raw!r}")
            vals.append(v)
        ids.append(row[col["subject_id"]].strip())
        groups.append(label_index[label])
        ys.append(vals)
    return Dataset(schema, tuple(ids), np.asarray(groups), np.asarray(ys))


# ---------------------------------------------------------------------------
# reordering and splitting


def interleave_groups(d: Dataset, seed: int) -> SequentialSchedule:
    """Shuffle subjects within each group, then cycle through groups 1..R.

    Exhausted groups are skipped, so every prefix of length m*R contains m
    subjects from each group that still has subjects left.
    """
    rng = np.random.default_rng(seed)
    queues = []
    for r in range(d.schema.n_groups):
        idx = np.flatnonzero(d.groups == r)
        if len(idx) == 0:
            raise DataError(f"group {d.schema.group_labels[r]!r} has no subjects")
        queues.append(list(rng.permutation(idx)))
    order, assigned = [], []
    while any(queues):
        for r, q in enumerate(queues):
            if q:
                order.append(int(q.pop(0)))
                assigned.append(r)
    return SequentialSchedule(tuple(order), tuple(assigned))


def split_folds(d: Dataset, k: int, seed: int) -> list:
    """Stratified k-fold split: returns [(train, test), ...].

    Each group is shuffled and dealt round-robin to folds; the dealing
    position carries over between groups so fold sizes differ by at most one.
    """
    if not 2 <= k <= d.n:
        raise DataError(f"fold count k={k} out of range [2, {d.n}]")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(d.n, dtype=int)
    pos = 0
    for r in range(d.schema.n_groups):
        idx = rng.permutation(np.flatnonzero(d.groups == r))
        fold_of[idx] = (pos + np.arange(len(idx))) % k
        pos = (pos + len(idx)) % k
    out = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        out.append((d.subset(train), d.subset(test)))
    return out


# ---------------------------------------------------------------------------
# simulation


def default_schema(spec: ModelSpec, group_labels: Optional[Sequence[str]] = None) -> OutcomeSchema:
    items = [(f"y{j + 1}", "continuous") for j in range(spec.p_c)]
    items += [(f"y{spec.p_c + j + 1}", "binary") for j in range(spec.p_b)]
    labels = group_labels or [f"g{r + 1}" for r in range(spec.n_groups)]
    return OutcomeSchema(tuple(items), tuple(labels))


def _chol(a, what):
    try:
        return np.linalg.cholesky(np.asarray(a, dtype=float))
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} is not positive-definite") from None


def simulate_dataset(
    spec: ModelSpec,
    theta: Theta,
    counts: Sequence[int],
    seed: int,
    schema: Optional[OutcomeSchema] = None,
) -> Dataset:
    """Draw a dataset from the generative model.

    z_i ~ N(0, Phi), u_i ~ N(0, Omega) (AZ only), continuous items
    alpha + Lambda z + e with e ~ N(0, diag(psi)), binary items
    Bernoulli(sigmoid(alpha + Lambda z + u)). SAT/IND draw the continuous
    block from N(alpha, Sigma) and binary items from Bernoulli(sigmoid(alpha)).
    """
    th = theta.numpy()
    if len(counts) != spec.n_groups:
        raise ValueError("one count per group is required")
    schema = schema or default_schema(spec)
    if schema.p_c != spec.p_c or schema.p_b != spec.p_b or schema.n_groups != spec.n_groups:
        raise ValueError("schema does not match the model spec")
    rng = np.random.default_rng(seed)
    pc, pb = spec.p_c, spec.p_b
    ys, groups = [], []
    for r, n_r in enumerate(counts):
        g = 0 if spec.pooled else r
        alpha = th.alpha[r]
        if spec.is_factor:
            Lphi = _chol(th.phi[g], "phi")
            if np.any(np.asarray(th.psi[g]) <= 0):
                raise ValueError("psi is not positive-definite")
            z = rng.standard_normal((n_r, spec.k)) @ Lphi.T
            eta = alpha + z @ th.lam[g].T
            if spec.residual:
                Lom = _chol(th.omega[g], "omega")
                eta[:, pc:] += rng.standard_normal((n_r, pb)) @ Lom.T
            yc = eta[:, :pc] + rng.standard_normal((n_r, pc)) * np.sqrt(th.psi[g])
        else:
            Ls = _chol(th.sigma[g], "sigma") if pc else np.zeros((0, 0))
            yc = alpha[:pc] + rng.standard_normal((n_r, pc)) @ Ls.T
            eta = np.broadcast_to(alpha, (n_r, spec.p))
        prob = 1.0 / (1.0 + np.exp(-eta[:, pc:]))
        yb = (rng.random((n_r, pb)) < prob).astype(float)
        ys.append(np.concatenate([yc, yb], axis=1))
        groups.append(np.full(n_r, r))
    y = np.concatenate(ys) if ys else np.zeros((0, spec.p))
    grp = np.concatenate(groups) if groups else np.zeros(0, dtype=int)
    ids = tuple(f"S{i + 1:04d}" for i in range(len(grp)))
    return Dataset(schema, ids, grp, y)
