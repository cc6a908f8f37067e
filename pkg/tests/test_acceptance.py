"""Acceptance battery: one test per criterion, each printing a single PASS/FAIL line.

Criteria 4, 6, 7 and 9 are long simulation batteries and carry the ``slow`` marker.
"""

import time

import jax
import jax.numpy as jnp
import numpy as np
import pytest
import yaml
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from bayesbr.assessment import cv_log_scores, discrepancy_g2, lrt_statistic, ppp_value
from bayesbr.cli import main
from bayesbr.config import DEFAULT_COUNTS, DEFAULT_GROUPS, default_truth, default_truth_theta
from bayesbr.data import interleave_groups, simulate_dataset
from bayesbr.inference import fit_model
from bayesbr.laplace import laplace_fit, laplace_log_marginal, latent_log_target
from bayesbr.mcda import (
    ScorePosterior,
    default_config,
    expected_from_alpha,
    particle_score_fn,
    partial_utility,
    scores_from_expected,
    sequential_trace,
)
from bayesbr.model import VARIANTS, build_spec, constrain_many, constrained_summary_params, sign_postprocess
from bayesbr.smc import SmcConfig, ess, ibis_init, normalised_weights, run_sequential
from bayesbr.targets import ModelTarget, NormalMeanTarget

from conftest import diabetes_schema, random_q, simulate_truth


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------


def test_criterion_1_gradients(capsys):
    t0 = time.time()
    _, d = simulate_truth((10, 10, 10), seed=21)
    h = 1e-5
    worst = {}
    for name in [v + s for v in VARIANTS for s in ("", "-p")]:
        pooled = name.endswith("-p")
        spec = build_spec(name.removesuffix("-p"), 2, 4, 3, pooled)
        t = ModelTarget(d, spec)
        f = t.batch_logdensity()
        vf = jax.jit(jax.vmap(f))
        g = jax.jit(jax.grad(f))
        rng = np.random.default_rng(1)
        err = 0.0
        for _ in range(20):
            q = random_q(spec, rng, 0.3)
            x = q if t.marginal else np.concatenate([q, rng.normal(size=d.n * t.latent_dim)])
            E = h * np.eye(len(x))
            fd = (np.asarray(vf(jnp.asarray(x + E))) - np.asarray(vf(jnp.asarray(x - E)))) / (2 * h)
            an = np.asarray(g(jnp.asarray(x)))
            err = max(err, np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-12))
        worst[name] = err
    elapsed = time.time() - t0
    top = max(worst, key=worst.get)
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 60
    report(capsys, 1, ok, f"max relative gradient error {worst[top]:.2e} ({top}) over 12 variants x 20 points; {elapsed:.0f}s (limit 60s)")


def test_criterion_2_laplace_vs_quadrature(capsys):
    t0 = time.time()
    rng = np.random.default_rng(2)
    z = np.linspace(-8, 8, 2001)
    mean_err, rel_err = 0.0, 0.0
    for _ in range(200):
        p = int(rng.integers(1, 7))
        a, b = rng.uniform(-3, 3, p), rng.uniform(-3, 3, p)
        y = rng.integers(0, 2, p)
        eta = a[None, :] + z[:, None] * b[None, :]
        lt = (y * eta - np.logaddexp(0, eta)).sum(1) - 0.5 * z**2
        m = lt.max()
        w = np.exp(lt - m)
        Z = trapezoid(w, z)
        post_mean = trapezoid(w * z, z) / Z
        log_norm = m + np.log(Z) - 0.5 * np.log(2 * np.pi)
        fit = laplace_fit(y, a, b)
        mean_err = max(mean_err, abs(fit.mode[0] - post_mean))
        rel_err = max(rel_err, abs(laplace_log_marginal(y, a, b, fit) - log_norm) / abs(log_norm))
    elapsed = time.time() - t0
    ok = mean_err < 0.05 and rel_err < 0.10 and elapsed < 60
    report(capsys, 2, ok, f"200 configurations: max |mode - mean| {mean_err:.4f} (limit 0.05), max log-normaliser rel. error {rel_err:.4f} (limit 0.10); {elapsed:.0f}s")


def test_criterion_3_evidence_oracle(capsys):
    t0 = time.time()
    rng = np.random.default_rng(3)
    t = NormalMeanTarget(rng.normal(1.0, 1.0, 100), prior_sd=10.0)
    exact_ev = t.log_evidence()
    mean, sd = t.posterior()
    ev_err, z_max = 0.0, 0.0
    for seed in range(10):
        ps = run_sequential(t, range(100), SmcConfig(n_particles=2000, seed=seed)).particles
        w = normalised_weights(ps.logw)
        est = float(w @ ps.Q[:, 0])
        se = sd / np.sqrt(ps.ess)
        ev_err = max(ev_err, abs(ps.log_evidence - exact_ev) / abs(exact_ev))
        z_max = max(z_max, abs(est - mean) / se)
    elapsed = time.time() - t0
    ok = ev_err < 0.05 and z_max < 3 and elapsed < 120
    report(capsys, 3, ok, f"10 seeds: max evidence rel. error {ev_err:.2e} (limit 5%), max |mean error| {z_max:.2f} MC se (limit 3); {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_4_smc_vs_batch(capsys):
    t0 = time.time()
    spec, d = simulate_truth((50, 50, 50), seed=1)
    fit = fit_model(d, spec, 1000, 20_000, seed=1)
    batch = {k: float(v.mean()) for k, v in fit.named().items()}
    t = ModelTarget(d, spec)
    ps = run_sequential(t, interleave_groups(d, 1).order, SmcConfig(n_particles=1000, seed=1)).particles
    w = normalised_weights(ps.logw)
    Q, _ = t.fold(ps.Q)
    smc = constrained_summary_params(sign_postprocess(constrain_many(Q, spec), spec), spec, d.schema.group_labels)
    keys = [k for k in batch if k.startswith(("alpha", "lambda"))]
    diffs = {k: abs(batch[k] - float(w @ smc[k])) for k in keys}
    top = max(diffs, key=diffs.get)
    elapsed = time.time() - t0
    ok = diffs[top] < 0.1 and elapsed < 1800
    report(capsys, 4, ok, f"{len(keys)} alpha/lambda means: max |SMC - batch| {diffs[top]:.3f} at {top} (limit 0.1); {elapsed:.0f}s (limit 1800s)")


def test_criterion_5_ess(capsys):
    checks = [
        ess(np.ones(1000)) == 1000,
        ess(np.r_[np.zeros(9), 2.5]) == 1,
        abs(ess([1, 2, 3]) - 36 / 14) < 1e-12,
    ]
    after = []

    def record(ps, rec):
        if rec["rejuvenated"]:
            after.append(ps.ess)

    run_sequential(NormalMeanTarget(np.random.default_rng(5).normal(0, 1, 40)), range(40), SmcConfig(n_particles=200, seed=5), callback=record)
    _, d = simulate_truth((6, 6, 6), seed=5)
    t = ModelTarget(d, build_spec("AZ1", 2, 4, 3, True))
    run_sequential(t, range(d.n), SmcConfig(n_particles=64, seed=5), callback=record)
    checks.append(len(after) > 0 and all(e == 64 or e == 200 for e in after))
    report(capsys, 5, all(checks), f"equal/single/(1,2,3) examples {checks[:3]}; ESS exactly N after all {len(after)} rejuvenations: {checks[3]}")


@pytest.mark.slow
def test_criterion_6_ppp_calibration(capsys):
    t0 = time.time()
    spec = build_spec("EZ1-p", 2, 4, 3)
    inside = 0
    vals = []
    for rep in range(20):
        d = simulate_dataset(spec, default_truth_theta(), [150, 150, 150], 600 + rep, schema=diabetes_schema())
        fit = fit_model(d, spec, 300, 500, seed=rep)
        pc = ppp_value(fit, d, "continuous", seed=rep)
        pb = ppp_value(fit, d, "binary", seed=rep)
        vals.append((round(pc, 2), round(pb, 2)))
        inside += (0.1 <= pc <= 0.9) and (0.1 <= pb <= 0.9)
    elapsed = time.time() - t0
    ok = inside >= 18 and elapsed < 3600
    report(capsys, 6, ok, f"both PPP values in [0.1, 0.9] in {inside}/20 replications (need 18); values {vals}; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_7_model_selection(capsys):
    t0 = time.time()
    specs = [build_spec("EZ1", 2, 4, 3, True), build_spec("IND", 2, 4, 3), build_spec("SAT", 2, 4, 3)]
    wins = 0
    table = []
    for seed in range(10):
        d = simulate_dataset(specs[0], default_truth_theta(), list(DEFAULT_COUNTS), 700 + seed, schema=diabetes_schema())
        reps = cv_log_scores(d, specs, k=3, seed=seed, n_warmup=300, n_samples=300)
        ez, ind, sat = (r.ls_combined for r in reps)
        table.append((round(ez, 1), round(ind, 1), round(sat, 1)))
        wins += ez < ind and ez < sat
    elapsed = time.time() - t0
    ok = wins >= 8 and elapsed < 7200
    report(capsys, 7, ok, f"EZ1-p best combined 3-fold log score in {wins}/10 seeds (need 8); (EZ1-p, IND, SAT) {table}; {elapsed:.0f}s")


def test_criterion_8_exact_fit_zeros(capsys):
    rng = np.random.default_rng(8)
    A = rng.normal(size=(4, 4))
    S = A @ A.T + np.eye(4)
    lrt = lrt_statistic(S, S, 100)
    pi = rng.dirichlet(np.ones(16))
    g2 = discrepancy_g2(200 * pi, pi, 200)
    ok = abs(lrt) < 1e-9 and abs(g2) < 1e-9
    report(capsys, 8, ok, f"LRT(S, S) = {lrt:.1e}, G2(n pi, pi) = {g2:.1e} (limit 1e-9)")


@pytest.mark.slow
def test_criterion_9_mcda(capsys):
    cfg = default_config()
    weights_ok = abs(cfg.weights.sum() - 1.0) < 1e-12 and round(float(cfg.weights.sum()), 3) == 1.000
    ends_ok = all(partial_utility(c.best, c) == 1.0 and partial_utility(c.worst, c) == 0.0 for c in cfg.criteria)
    P = ScorePosterior(np.column_stack([np.linspace(0.6, 0.7, 50), np.linspace(0.1, 0.5, 50)])).superiority_matrix()
    disjoint_ok = P[0, 1] == 1.0 and P[1, 0] == 0.0

    spec = build_spec("EZ1-p", 2, 4, 3)
    theta = default_truth_theta()
    theta.alpha[0, 0] = -5.0  # AVM: larger haemoglobin reduction
    true_scores = scores_from_expected(expected_from_alpha(theta.alpha, 2), cfg)
    gap = true_scores[0] - max(true_scores[1:])
    n = 90
    crossed = []
    for seed in range(10):
        d = simulate_dataset(spec, theta, [n // 3] * 3, 900 + seed, schema=diabetes_schema())
        t = ModelTarget(d, spec)
        res = run_sequential(t, interleave_groups(d, seed).order, SmcConfig(n_particles=300, seed=seed), score_fn=particle_score_fn(t, cfg))
        _, _, cross = sequential_trace(res.trace, DEFAULT_GROUPS, 0.99)
        first = [cross[("AVM", g)] for g in ("MET", "RSG")]
        crossed.append(None if None in first else max(first))
    hits = sum(c is not None and c < n for c in crossed)
    ok = weights_ok and ends_ok and disjoint_ok and gap >= 0.15 and hits >= 9
    report(
        capsys,
        9,
        ok,
        f"weights sum 1.000: {weights_ok}; endpoints 0/1: {ends_ok}; disjoint superiority 0/1: {disjoint_ok}; "
        f"true gap {gap:.3f}; P(AVM > both) crossed 0.99 before n={n} in {hits}/10 seeds (need 9), first indices {crossed}",
    )


def test_criterion_10_cli_determinism(capsys, tmp_path):
    cfg = {
        "seed": 11,
        "out": "run",
        "models": ["EZ1-p", "IND"],
        "mcmc": {"n_warmup": 100, "n_samples": 60},
        "smc": {"n_particles": 80, "block_size": 32},
        "assess": {"folds": 2, "n_warmup": 60, "n_samples": 40, "n_mc": 2000},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    outs = {}
    for tag, workers in (("a", "1"), ("b", "1"), ("c", "3")):
        out = tmp_path / tag
        argv = ["--config", str(path), "--out", str(out), "--workers", workers]
        codes = [main(["simulate", *argv, "--n", "45"])]
        codes += [main([cmd, *argv]) for cmd in ("fit", "assess", "mcda", "sequential")]
        assert codes == [0] * 5
        outs[tag] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    same_rerun = outs["a"] == outs["b"]
    same_workers = outs["a"] == outs["c"]
    report(capsys, 10, same_rerun and same_workers, f"{len(outs['a'])} output files; identical rerun: {same_rerun}; identical with 3 workers: {same_workers}")
