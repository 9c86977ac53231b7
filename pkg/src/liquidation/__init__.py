"""Optimal liquidation of a block of shares into discrete, random order flow."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DepthFunction,
    RegimeModel,
    SizeDistribution,
    depth_eval,
    load_model,
    model_from_dict,
    table1_model,
    truncated_poisson,
    validate_model,
)
from .base_solver import PolicySurface, solve_base  # noqa: E402
from .markov_solver import RegimePolicySurface, solve_markov  # noqa: E402
from .partial_solver import BeliefMesh, BeliefPolicySurface, solve_partial  # noqa: E402
from .continuous import solve_continuous  # noqa: E402

__all__ = [
    "BeliefMesh",
    "BeliefPolicySurface",
    "DepthFunction",
    "PolicySurface",
    "RegimeModel",
    "RegimePolicySurface",
    "SizeDistribution",
    "depth_eval",
    "load_model",
    "model_from_dict",
    "solve_base",
    "solve_continuous",
    "solve_markov",
    "solve_partial",
    "table1_model",
    "truncated_poisson",
    "validate_model",
]
