"""Bayesian benefit-risk analysis for multi-arm trials with mixed outcomes.

The package fits latent factor models to continuous + binary outcomes,
assesses them with posterior predictive p-values and cross-validated log
scores, and turns posterior draws (batch HMC) or weighted particles
(IBIS / IBIS-Laplace sequential Monte Carlo) into MCDA score posteriors.
"""

import jax

jax.config.update("jax_enable_x64", True)

from bayesbr.data import (  # noqa: E402
    DataError,
    Dataset,
    OutcomeSchema,
    SequentialSchedule,
    interleave_groups,
    load_dataset,
    simulate_dataset,
    split_folds,
    write_dataset,
)
from bayesbr.model import (  # noqa: E402
    VARIANTS,
    ModelSpec,
    PriorConfig,
    Theta,
    build_spec,
)

__all__ = [
    "DataError",
    "Dataset",
    "OutcomeSchema",
    "SequentialSchedule",
    "interleave_groups",
    "load_dataset",
    "simulate_dataset",
    "split_folds",
    "write_dataset",
    "VARIANTS",
    "ModelSpec",
    "PriorConfig",
    "Theta",
    "build_spec",
]

__version__ = "0.1.0"
