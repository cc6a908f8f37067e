import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from bayesbr.config import default_truth_theta
from bayesbr.mcda import (
    Criterion,
    McdaConfig,
    ScorePosterior,
    default_config,
    expected_outcomes,
    first_crossing,
    mcda_score,
    partial_utility,
    renormalised,
    score_posterior,
    scores_from_expected,
    sequential_trace,
    superiority_prob,
)
from bayesbr.model import build_spec, stack_thetas
from bayesbr.smc import ParticleSystem, posterior_summary, score_summary

from conftest import random_theta

HB = Criterion("haemoglobin", 1.0, -6.0, 3.0)
NAUSEA = Criterion("nausea", 1.0, 0.10, 0.25, scale="probability")


class TestCriterion:
    def test_haemoglobin(self):
        np.testing.assert_allclose(partial_utility([-6.0, 3.0, -1.5], HB), [1.0, 0.0, 0.5])

    def test_clamp(self):
        np.testing.assert_array_equal(partial_utility([-100.0, 100.0], HB), [1.0, 0.0])

    def test_nausea(self):
        assert partial_utility(0.10, NAUSEA) == 1.0
        assert partial_utility(0.25, NAUSEA) == 0.0

    def test_increasing(self):
        c = Criterion("x", 1.0, 0.0, 2.0, "increasing")
        np.testing.assert_allclose(partial_utility([0.0, 0.5, 2.0], c), [0.0, 0.25, 1.0])

    @pytest.mark.parametrize("kw", [{"weight": -0.1}, {"high": -6.0}, {"orientation": "up"}, {"scale": "logit"}])
    def test_invalid(self, kw):
        args = dict(name="x", weight=1.0, low=-6.0, high=3.0)
        args.update(kw)
        with pytest.raises(ValueError):
            Criterion(**args)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            McdaConfig((Criterion("a", 0.5, 0, 1), Criterion("b", 0.4, 0, 1)))


class TestDefaultConfig:
    def test_weights(self):
        cfg = default_config()
        assert cfg.weights.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(cfg.weights, [0.592, 0.118, 0.089, 0.178, 0.018, 0.005])
        assert all(c.orientation == "decreasing" for c in cfg.criteria)

    def test_check_against_spec(self):
        default_config().check(build_spec("EZ1-p", 2, 4, 3))
        with pytest.raises(ValueError):
            default_config().check(build_spec("EZ1-p", 3, 3, 3))


class TestScore:
    def test_best_endpoints(self):
        cfg = default_config()
        best = np.array([c.best for c in cfg.criteria])
        assert scores_from_expected(best, cfg) == 1.0

    def test_degenerate_weights(self):
        cfg = renormalised(default_config(), [1, 0, 0, 0, 0, 0])
        x = np.array([-2.0, 0.0, 0.2, 0.2, 0.2, 0.2])
        assert scores_from_expected(x, cfg) == pytest.approx(partial_utility(-2.0, cfg.criteria[0]))

    def test_avm_truth_by_hand(self):
        spec = build_spec("EZ1-p", 2, 4, 3)
        theta = default_truth_theta()
        a = [-2.30, -4.05, -1.87, -2.27, -2.83, -5.19]
        # (weight, worst, best) per criterion; binary items at the inverse-logit of alpha
        terms = [(0.592, 3.0, -6.0), (0.118, 7.5, -15.0), (0.089, 0.35, 0.10), (0.178, 0.25, 0.10), (0.018, 0.20, 0.10), (0.005, 0.25, 0.10)]
        x = a[:2] + [1 / (1 + np.exp(-v)) for v in a[2:]]
        want = 0.0
        for xi, (w, worst, best) in zip(x, terms):
            want += w * min(max((xi - worst) / (best - worst), 0.0), 1.0)
        hb = (3 - (-2.30)) / 9
        assert hb == pytest.approx(0.5889, abs=1e-4)
        assert 0.592 * hb == pytest.approx(0.3486, abs=1e-4)
        assert mcda_score(theta, 0, default_config(), spec) == pytest.approx(want, abs=1e-12)

    def test_marginalised_probability(self):
        spec = build_spec("EZ1-p", 2, 4, 3)
        theta = default_truth_theta()
        e = expected_outcomes(theta, spec, marginalised=True)
        z = np.linspace(-8, 8, 4001)
        phi = np.exp(-z**2 / 2) / np.sqrt(2 * np.pi)
        want = np.trapezoid(special.expit(theta.alpha[0, 5] + 2.36 * z) * phi, z) if hasattr(np, "trapezoid") else np.trapz(special.expit(theta.alpha[0, 5] + 2.36 * z) * phi, z)
        assert e[0, 5] == pytest.approx(want, abs=1e-6)
        np.testing.assert_array_equal(e[:, :2], theta.alpha[:, :2])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_bounded(self, seed):
        spec = build_spec("AZ2-p", 2, 4, 3)
        th = random_theta(spec, np.random.default_rng(seed))
        th.alpha[:] = np.random.default_rng(seed).normal(0, 10, th.alpha.shape)
        s = score_posterior(stack_thetas([th]), default_config(), spec)
        assert np.all((s.scores >= 0) & (s.scores <= 1))

    def test_monotone(self):
        cfg = default_config()
        x = np.array([-2.0, -3.0, 0.2, 0.15, 0.15, 0.15])
        for j, c in enumerate(cfg.criteria):
            grid = np.linspace(c.low - 1, c.high + 1, 50)
            xs = np.tile(x, (50, 1))
            xs[:, j] = grid
            assert np.all(np.diff(scores_from_expected(xs, cfg)) <= 1e-15)

    def test_renormalisation_invariance(self):
        cfg = default_config()
        x = np.array([-2.0, -3.0, 0.2, 0.15, 0.15, 0.15])
        assert scores_from_expected(x, renormalised(cfg, 7.3 * cfg.weights)) == pytest.approx(scores_from_expected(x, cfg), abs=1e-15)


class TestScorePosterior:
    def test_point_mass(self):
        s = ScorePosterior(np.array([[0.3, 0.6, 0.1]]))
        np.testing.assert_array_equal(s.mean, [0.3, 0.6, 0.1])
        np.testing.assert_array_equal(s.quantiles()[:, 0], [0.3, 0.6, 0.1])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ScorePosterior(np.array([[1.2]]))

    def test_matches_particle_summary(self):
        spec = build_spec("EZ1-p", 2, 4, 3)
        rng = np.random.default_rng(1)
        thetas = [random_theta(spec, rng) for _ in range(30)]
        logw = rng.normal(size=30)
        cfg = default_config()
        sp = score_posterior(stack_thetas(thetas), cfg, spec, weights=np.exp(logw))
        ps = ParticleSystem(np.arange(30.0)[:, None], logw)
        mean, _ = posterior_summary(ps, lambda Q: np.array([[mcda_score(thetas[int(q)], r, cfg, spec) for r in range(3)] for q in Q[:, 0]]))
        np.testing.assert_allclose(sp.mean, mean, atol=1e-12)


class TestSuperiority:
    def test_ties(self):
        s = np.array([0.2, 0.5, 0.7])
        assert superiority_prob(s, s) == 0.5

    def test_dominance(self):
        s = np.random.default_rng(0).uniform(0, 0.8, 100)
        assert superiority_prob(s + 0.1, s) == 1.0
        assert superiority_prob(s, s + 0.1) == 0.0

    def test_complement(self):
        rng = np.random.default_rng(1)
        a, b, w = rng.uniform(size=200), rng.uniform(size=200), rng.uniform(size=200)
        assert superiority_prob(a, b, w) + superiority_prob(b, a, w) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_transform(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(size=200), rng.uniform(size=200)
        assert superiority_prob(np.log(a) ** 3, np.log(b) ** 3) == superiority_prob(a, b)

    def test_disjoint_exact(self):
        a, b = np.full(10, 0.7), np.linspace(0.1, 0.5, 10)
        sp = ScorePosterior(np.column_stack([a, b]))
        m = sp.superiority_matrix()
        assert m[0, 1] == 1.0 and m[1, 0] == 0.0 and np.isnan(m[0, 0])


class TestSequential:
    def test_first_crossing(self):
        assert first_crossing([0.5, 0.99, 0.995, 0.2], 0.99) == 3
        assert first_crossing([0.5, 0.99], 0.99) is None
        assert first_crossing([0.9, 1.0, 1.0], 1.0) is None
        assert first_crossing([], 0.5) is None

    def _trace(self, S, n):
        logw = np.zeros(len(S))
        rec = score_summary(S, logw)
        return [dict(i=i + 1, subject=i, group=i % 3, ess=len(S), log_L=0.0, log_evidence=0.0, rejuvenated=False, **rec) for i in range(n)]

    def test_flat_trace(self):
        S = np.random.default_rng(0).uniform(0.2, 0.8, (50, 3))
        header, rows, crossings = sequential_trace(self._trace(S, 5), ["AVM", "MET", "RSG"])
        cols = np.array([r[7:] for r in rows], dtype=float)
        assert np.all(cols == cols[0])
        assert len(header) == len(rows[0]) == 7 + 9 + 6
        assert set(crossings) == {(a, b) for a in ("AVM", "MET", "RSG") for b in ("AVM", "MET", "RSG") if a != b}

    def test_crossing_detected(self):
        S = np.column_stack([np.full(10, 0.9), np.full(10, 0.1), np.full(10, 0.5)])
        _, _, crossings = sequential_trace(self._trace(S, 4), ["A", "B", "C"], threshold=0.99)
        assert crossings[("A", "B")] == 1 and crossings[("B", "A")] is None
        _, _, never = sequential_trace(self._trace(S, 4), ["A", "B", "C"], threshold=1.0)
        assert all(v is None for v in never.values())

    def test_empty(self):
        header, rows, crossings = sequential_trace([], ["A", "B"])
        assert rows == [] and crossings == {}
