import numpy as np
import pytest

import bayesbr  # noqa: F401  (enables float64 in jax)
from bayesbr.config import DEFAULT_GROUPS, default_truth_theta
from bayesbr.data import OutcomeSchema, simulate_dataset
from bayesbr.model import VARIANTS, build_spec, unconstrain
from bayesbr.priors import prior_scales, sample_prior_theta
from bayesbr.model import PriorConfig

ITEMS = (
    ("haemoglobin", "continuous"),
    ("glucose", "continuous"),
    ("diarrhoea", "binary"),
    ("nausea", "binary"),
    ("vomiting", "binary"),
    ("dyspepsia", "binary"),
)

ALL_MODELS = [v + s for v in VARIANTS for s in ("", "-p")]


def diabetes_schema(groups=DEFAULT_GROUPS):
    return OutcomeSchema(ITEMS, tuple(groups))


def truth_spec():
    return build_spec("EZ1-p", 2, 4, 3)


def simulate_truth(counts=(50, 50, 50), seed=1, theta=None):
    spec = truth_spec()
    theta = default_truth_theta() if theta is None else theta
    return spec, simulate_dataset(spec, theta, list(counts), seed, schema=diabetes_schema())


def random_theta(spec, rng, S_y=None):
    """A prior draw with moderate scales (loadings sd from the prior config)."""
    S_y = np.eye(spec.p_c) if S_y is None else S_y
    sc = prior_scales(spec, PriorConfig(), S_y)
    return sample_prior_theta(spec, sc, rng)


def random_q(spec, rng, scale=0.5):
    """A random unconstrained point of moderate size."""
    q = unconstrain(random_theta(spec, rng), spec)
    return rng.normal(0.0, scale, size=q.shape)


@pytest.fixture(scope="session")
def small_data():
    return simulate_truth((20, 20, 20), seed=3)
