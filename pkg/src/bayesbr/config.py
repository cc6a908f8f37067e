"""Run configuration: one YAML document drives simulation, fitting, assessment, MCDA and sequential runs.

Example::

    seed: 7
    groups: [AVM, MET, RSG]
    items:
      - {name: haemoglobin, kind: continuous, weight: 0.592, low: -6.0, high: 3.0}
      - {name: diarrhoea, kind: binary, weight: 0.089, low: 0.10, high: 0.35}
    models: [EZ1-p]
    mcmc: {n_warmup: 1000, n_samples: 1000}
    smc: {n_particles: 1000, gamma: 0.5}

Relative paths are resolved against the directory holding the config file.
Missing sections fall back to the built-in defaults (six diabetes criteria,
three arms, an EZ1-p truth for simulation).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from bayesbr.data import OutcomeSchema
from bayesbr.hmc import KernelConfig
from bayesbr.mcda import Criterion, McdaConfig, default_config
from bayesbr.model import VARIANTS, ModelSpec, PriorConfig, Theta, build_spec, constrained_summary_params, theta_from_named
from bayesbr.smc import SmcConfig


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configurations."""


DEFAULT_GROUPS = ("AVM", "MET", "RSG")
DEFAULT_COUNTS = (150, 146, 153)


def default_truth_theta() -> Theta:
    """EZ1-p parameters used to simulate the default dataset (pooled structure, three arms)."""
    alpha = np.array(
        [
            [-2.30, -4.05, -1.87, -2.27, -2.83, -5.19],
            [-1.83, -2.95, -1.39, -2.58, -3.45, -5.17],
            [-1.60, -2.81, -2.70, -2.44, -4.11, -6.55],
        ]
    )
    lam = np.zeros((1, 6, 2))
    lam[0, 0, 0] = 1.0
    lam[0, 1, 0] = 1.78
    lam[0, 2:, 1] = [0.46, -0.39, 2.15, 2.36]
    return Theta(alpha, lam, np.eye(2)[None], psi=np.array([[0.45, 4.0]]))


def default_truth() -> dict:
    spec = build_spec("EZ1-p", 2, 4, 3)
    named = constrained_summary_params(default_truth_theta(), spec, DEFAULT_GROUPS)
    return {k: float(v) for k, v in named.items()}


@dataclass(frozen=True)
class McmcSettings:
    n_warmup: int = 1000
    n_samples: int = 1000
    step_size: float = 0.1
    n_leapfrog: int = 16
    target_accept: float = 0.8

    def kernel(self) -> KernelConfig:
        return KernelConfig(step_size=self.step_size, n_leapfrog=self.n_leapfrog, target_accept=self.target_accept)


@dataclass(frozen=True)
class AssessSettings:
    folds: int = 3
    n_warmup: int = 500
    n_samples: int = 1000
    ppp: bool = True
    ppp_thin: int = 5
    n_mc: int = 20_000
    method: str = "auto"


@dataclass(frozen=True)
class SimulateSettings:
    model: str = "EZ1-p"
    counts: tuple = DEFAULT_COUNTS
    truth: Optional[dict] = None  # named constrained parameters; None -> default truth


@dataclass(frozen=True)
class RunConfig:
    seed: int
    schema: OutcomeSchema
    mcda: McdaConfig
    models: tuple = ("EZ1-p",)
    data: Optional[Path] = None
    out: Path = Path("out")
    workers: Optional[int] = None
    threshold: float = 0.99
    prior: PriorConfig = PriorConfig()
    mcmc: McmcSettings = McmcSettings()
    smc: SmcConfig = SmcConfig()
    assess: AssessSettings = AssessSettings()
    simulate: SimulateSettings = SimulateSettings()

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not self.models:
            raise ConfigError("at least one model is required")
        for m in self.models:
            if m.removesuffix("-p") not in VARIANTS:
                raise ConfigError(f"unknown model {m!r}; choose from {', '.join(VARIANTS)} (optionally with -p)")
        if not 0 < self.threshold <= 1:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be positive")
        if len(self.mcda.criteria) != self.schema.p:
            raise ConfigError("every item needs MCDA settings")

    def spec(self, model: str) -> ModelSpec:
        pooled = model.endswith("-p")
        return build_spec(model.removesuffix("-p"), self.schema.p_c, self.schema.p_b, self.schema.n_groups, pooled)

    def truth_theta(self) -> tuple:
        """(spec, Theta) of the simulation truth."""
        spec = self.spec(self.simulate.model)
        named = self.simulate.truth if self.simulate.truth is not None else default_truth()
        try:
            theta = theta_from_named({k: np.asarray(v, dtype=float) for k, v in named.items()}, spec, self.schema.group_labels)
        except KeyError as e:
            raise ConfigError(f"simulation truth: {e.args[0]}") from None
        return spec, theta


def default_items() -> list:
    out = []
    for c in default_config().criteria:
        kind = "continuous" if c.scale == "raw" else "binary"
        out.append({"name": c.name, "kind": kind, "weight": c.weight, "low": c.low, "high": c.high, "orientation": c.orientation})
    return out


def _settings(cls, raw, what):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {what!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"section {what!r}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section {what!r}: {e}") from None


def _path(v, base: Path) -> Optional[Path]:
    if v is None:
        return None
    p = Path(v)
    return p if p.is_absolute() else base / p


def parse_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    """Build a RunConfig from a parsed YAML mapping."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {"seed", "groups", "items", "models", "data", "out", "workers", "threshold", "prior", "mcmc", "smc", "assess", "simulate", "marginalised"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    if raw.get("seed") is None:
        raise ConfigError("a seed is required (set 'seed' in the config or pass --seed)")
    items = raw.get("items") or default_items()
    groups = tuple(raw.get("groups") or DEFAULT_GROUPS)
    try:
        schema = OutcomeSchema(tuple((it["name"], it["kind"]) for it in items), groups)
        crit = tuple(
            Criterion(
                it["name"],
                float(it["weight"]),
                float(it["low"]),
                float(it["high"]),
                it.get("orientation", "decreasing"),
                "raw" if it["kind"] == "continuous" else "probability",
            )
            for it in items
        )
        mcda = McdaConfig(crit, bool(raw.get("marginalised", False)))
    except KeyError as e:
        raise ConfigError(f"item is missing field {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from None
    sim = dict(raw.get("simulate") or {})
    if "counts" in sim:
        sim["counts"] = tuple(int(c) for c in sim["counts"])
    elif len(groups) != len(DEFAULT_COUNTS):
        raise ConfigError("simulate.counts is required when the groups differ from the default")
    smc = dict(raw.get("smc") or {})
    smc.setdefault("seed", int(raw["seed"]))
    models = raw.get("models") or ["EZ1-p"]
    if isinstance(models, str):
        models = [models]
    return RunConfig(
        seed=raw["seed"],
        schema=schema,
        mcda=mcda,
        models=tuple(str(m) for m in models),
        data=_path(raw.get("data"), base),
        out=_path(raw.get("out", "out"), base),
        workers=raw.get("workers"),
        threshold=float(raw.get("threshold", 0.99)),
        prior=_settings(PriorConfig, raw.get("prior"), "prior"),
        mcmc=_settings(McmcSettings, raw.get("mcmc"), "mcmc"),
        smc=_settings(SmcConfig, smc, "smc"),
        assess=_settings(AssessSettings, raw.get("assess"), "assess"),
        simulate=_settings(SimulateSettings, sim, "simulate"),
    )


def load_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a YAML config (or start from defaults) and apply command-line overrides."""
    raw, base = {}, Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {str(path)!r} does not exist")
        with open(path, encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"cannot parse {str(path)!r}: {e}") from None
        base = path.parent
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    cfg = parse_config(raw, base)
    if overrides and overrides.get("out") is not None:
        cfg = dataclasses.replace(cfg, out=Path(overrides["out"]))
    if overrides and overrides.get("data") is not None:
        cfg = dataclasses.replace(cfg, data=Path(overrides["data"]))
    return cfg


__all__ = [
    "AssessSettings",
    "ConfigError",
    "McmcSettings",
    "RunConfig",
    "SimulateSettings",
    "default_truth",
    "default_truth_theta",
    "load_config",
    "parse_config",
]
