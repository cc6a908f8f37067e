"""Command-line entry point: ``bayesbr {simulate,fit,assess,mcda,sequential}``.

Every command reads one YAML config (see :mod:`bayesbr.config`), takes its
seed from the config or ``--seed`` and writes comma-separated tables to the
output directory. Outputs are built in memory and written only after the
command succeeds, so a failed run leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np

from bayesbr.config import ConfigError, RunConfig, load_config
from bayesbr.data import DataError, Dataset, dataset_text, load_dataset

WORKERS_ENV = "BAYESBR_WORKERS"


def fmt(v) -> str:
    """Shortest round-tripping text for a number; empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_outputs(outputs: dict, out: Path) -> list:
    """Write ``{name: text}`` under ``out``; on failure remove what was written and re-raise."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name in sorted(outputs):
            path = out / name
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(outputs[name], encoding="utf-8")
            os.replace(tmp, path)
            written.append(path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        for name in outputs:
            (out / (name + ".tmp")).unlink(missing_ok=True)
        raise
    return written


def read_table(path: Path) -> tuple:
    """(header, rows of strings) from a comma-separated file."""
    if not path.is_file():
        raise DataError(f"file {str(path)!r} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{str(path)!r}: empty file")
    return rows[0], rows[1:]


def resolve_workers(flag, configured) -> int:
    """Worker count: ``--workers``, then the environment variable, then the config, then the core count."""
    if flag is not None:
        return int(flag)
    if os.environ.get(WORKERS_ENV):
        return max(int(os.environ[WORKERS_ENV]), 1)
    if configured is not None:
        return int(configured)
    return os.cpu_count() or 1


def _dataset(cfg: RunConfig) -> Dataset:
    path = cfg.data if cfg.data is not None else cfg.out / "dataset.csv"
    if not Path(path).is_file():
        raise DataError(f"dataset {str(path)!r} does not exist; run 'simulate' or set 'data' in the config")
    return load_dataset(path, cfg.schema)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, n: int = None) -> dict:
    """Simulated dataset and the parameters that generated it."""
    from bayesbr.data import simulate_dataset

    counts = list(cfg.simulate.counts)
    if n is not None:
        R = cfg.schema.n_groups
        counts = [n // R + (r < n % R) for r in range(R)]
    if len(counts) != cfg.schema.n_groups:
        raise ConfigError("simulate.counts needs one entry per group")
    if any(c < 0 for c in counts):
        raise ConfigError("group sizes must be nonnegative")
    if sum(counts) == 0:
        raise ConfigError("cannot simulate an empty dataset (n=0)")
    spec, theta = cfg.truth_theta()
    d = simulate_dataset(spec, theta, counts, cfg.seed, schema=cfg.schema)
    from bayesbr.model import constrained_summary_params

    truth = constrained_summary_params(theta, spec, cfg.schema.group_labels)
    return {
        "dataset.csv": dataset_text(d),
        "truth.csv": table(["parameter", "value"], [(k, float(v)) for k, v in truth.items()]),
    }


def cmd_fit(cfg: RunConfig) -> dict:
    """Posterior draws and interval summaries for every configured model."""
    from bayesbr.inference import fit_model, summarise_draws

    d = _dataset(cfg)
    out = {}
    for model in cfg.models:
        spec = cfg.spec(model)
        fit = fit_model(d, spec, cfg.mcmc.n_warmup, cfg.mcmc.n_samples, cfg.seed, cfg.mcmc.kernel(), cfg.prior)
        named = fit.named()
        names = list(named)
        cols = np.column_stack([np.asarray(named[k], dtype=float) for k in names])
        out[f"draws_{model}.csv"] = table(names, cols.tolist())
        out[f"summary_{model}.csv"] = table(["parameter", "q2.5", "q97.5", "post_mean", "median"], summarise_draws(named))
        ch = fit.chain
        out[f"diagnostics_{model}.csv"] = table(
            ["accept_rate", "n_divergent", "step_size", "warmup_divergent"],
            [(float(ch.accept_rate), int(ch.n_divergent), float(ch.step_size), int(ch.warmup_divergent))],
        )
    return out


def cmd_assess(cfg: RunConfig, workers: int = 1) -> dict:
    """Cross-validated log scores and posterior predictive p-values per model."""
    from bayesbr.assessment import REPORT_HEADER, cv_log_scores, ppp_value, report_rows
    from bayesbr.inference import fit_model

    d = _dataset(cfg)
    a = cfg.assess
    specs = [cfg.spec(m) for m in cfg.models]
    reports = cv_log_scores(
        d, specs, a.folds, cfg.seed, a.n_warmup, a.n_samples, cfg.mcmc.kernel(), cfg.prior, a.method, a.n_mc, workers=workers
    )
    for rep, spec in zip(reports, specs):
        if not a.ppp:
            continue
        fit = fit_model(d, spec, cfg.mcmc.n_warmup, cfg.mcmc.n_samples, cfg.seed, cfg.mcmc.kernel(), cfg.prior)
        if spec.p_c:
            rep.ppp_continuous = ppp_value(fit, d, "continuous", cfg.seed, a.ppp_thin, a.n_mc, a.method)
        if spec.p_b:
            rep.ppp_binary = ppp_value(fit, d, "binary", cfg.seed, a.ppp_thin, a.n_mc, a.method)
    fold_rows = []
    for rep in reports:
        for f, s in enumerate(rep.folds, start=1):
            fold_rows.append((rep.model, f, s.continuous, s.binary, s.combined, s.joint))
    return {
        "assessment.csv": table(REPORT_HEADER, report_rows(reports)),
        "assessment_folds.csv": table(["Model", "fold", "Continuous-LS", "Binary-LS", "Combined", "Joint-LS"], fold_rows),
    }


def _score_outputs(model: str, post, labels) -> dict:
    R = len(labels)
    qs = post.quantiles((0.025, 0.5, 0.975))
    summary = [(labels[r], post.mean[r], qs[r, 0], qs[r, 1], qs[r, 2]) for r in range(R)]
    P = post.superiority_matrix()
    return {
        f"scores_{model}.csv": table(["draw", "weight"] + list(labels), [[m + 1, post.weights[m]] + list(post.scores[m]) for m in range(len(post.scores))]),
        f"score_summary_{model}.csv": table(["group", "mean", "q2.5", "median", "q97.5"], summary),
        f"superiority_{model}.csv": table(["P(row>col)"] + list(labels), [[labels[a]] + [None if a == b else P[a, b] for b in range(R)] for a in range(R)]),
    }


def cmd_mcda(cfg: RunConfig, draws: Path = None) -> dict:
    """MCDA score posterior and pairwise superiority probabilities from a draws file."""
    from bayesbr.mcda import score_posterior
    from bayesbr.model import theta_from_named

    out = {}
    labels = cfg.schema.group_labels
    if draws is not None and len(cfg.models) != 1:
        raise ConfigError("--draws needs exactly one --model")
    for model in cfg.models:
        spec = cfg.spec(model)
        path = Path(draws) if draws is not None else cfg.out / f"draws_{model}.csv"
        header, rows = read_table(path)
        try:
            vals = np.array(rows, dtype=float).reshape(len(rows), len(header))
        except ValueError:
            raise DataError(f"{str(path)!r}: non-numeric draw values") from None
        if len(vals) == 0:
            raise DataError(f"{str(path)!r}: no draws")
        named = {h: vals[:, j] for j, h in enumerate(header)}
        try:
            theta = theta_from_named(named, spec, labels)
        except KeyError as e:
            raise DataError(f"{str(path)!r}: {e.args[0]}") from None
        post = score_posterior(theta, cfg.mcda, spec, group_labels=labels)
        out.update(_score_outputs(model, post, labels))
    return out


def cmd_sequential(cfg: RunConfig, workers: int = 1) -> dict:
    """Subject-by-subject SMC: per-step trace, first-crossing indices and final score posterior."""
    import dataclasses

    from bayesbr.data import interleave_groups
    from bayesbr.mcda import ScorePosterior, particle_score_fn, sequential_trace
    from bayesbr.smc import normalised_weights, run_sequential
    from bayesbr.targets import ModelTarget

    d = _dataset(cfg)
    labels = cfg.schema.group_labels
    schedule = interleave_groups(d, cfg.seed)
    smc_cfg = dataclasses.replace(cfg.smc, workers=workers)
    out = {}
    for model in cfg.models:
        spec = cfg.spec(model)
        target = ModelTarget(d, spec, cfg.prior)
        score_fn = particle_score_fn(target, cfg.mcda)
        res = run_sequential(target, schedule.order, smc_cfg, score_fn=score_fn)
        header, rows, crossings = sequential_trace(res.trace, labels, cfg.threshold)
        for row in rows:
            row[1] = d.subject_ids[row[1]]
        out[f"trace_{model}.csv"] = table(header, rows)
        out[f"crossing_{model}.csv"] = table(
            ["better", "worse", "threshold", "first_index"],
            [(a, b, cfg.threshold, idx) for (a, b), idx in crossings.items()],
        )
        ps = res.particles
        post = ScorePosterior(score_fn(ps.Q), normalised_weights(ps.logw), labels)
        final = _score_outputs(model, post, labels)
        out[f"final_scores_{model}.csv"] = final[f"score_summary_{model}.csv"]
        out[f"final_superiority_{model}.csv"] = final[f"superiority_{model}.csv"]
        out[f"evidence_{model}.csv"] = table(
            ["model", "log_evidence", "n_rejuvenations", "n_fallbacks", "method"],
            [(model, ps.log_evidence, ps.n_rejuvenations, ps.n_fallbacks, res.method)],
        )
    return out


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bayesbr", description="Bayesian benefit-risk analysis with factor models, MCDA scores and sequential Monte Carlo.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--data", type=Path, help="dataset file (default: <out>/dataset.csv)")
        p.add_argument("--workers", type=int, help=f"worker threads (default: ${WORKERS_ENV} or the number of cores)")
        p.add_argument("--model", action="append", help="model variant, e.g. EZ1-p; repeatable")
        p.add_argument("--threshold", type=float, help="superiority probability threshold for first-crossing reports")

    p = sub.add_parser("simulate", help="simulate a dataset from the configured truth")
    common(p)
    p.add_argument("--n", type=int, help="total subjects, split evenly across groups")
    common(sub.add_parser("fit", help="batch HMC fit: draws and parameter summaries"))
    common(sub.add_parser("assess", help="cross-validated log scores and PPP values"))
    p = sub.add_parser("mcda", help="MCDA score posterior from a draws file")
    common(p)
    p.add_argument("--draws", type=Path, help="draws file (default: <out>/draws_<model>.csv)")
    common(sub.add_parser("sequential", help="subject-by-subject SMC with score trace"))
    return ap


def run(args) -> dict:
    overrides = {"seed": args.seed, "out": args.out, "data": args.data, "threshold": args.threshold}
    if args.model:
        overrides["models"] = list(args.model)
    cfg = load_config(args.config, overrides)
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be positive")
    workers = resolve_workers(args.workers, cfg.workers)
    if args.command == "simulate":
        outputs = cmd_simulate(cfg, args.n)
    elif args.command == "fit":
        outputs = cmd_fit(cfg)
    elif args.command == "assess":
        outputs = cmd_assess(cfg, workers)
    elif args.command == "mcda":
        outputs = cmd_mcda(cfg, args.draws)
    else:
        outputs = cmd_sequential(cfg, workers)
    return cfg, outputs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, outputs = run(args)
        written = write_outputs(outputs, cfg.out)
    except (ConfigError, DataError, ValueError, RuntimeError, KeyError, FloatingPointError, OSError) as e:
        print(f"bayesbr {args.command}: error: {e}", file=sys.stderr)
        return 2
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
