"""Block particle filtering for stochastic reaction-diffusion systems on square lattices."""

from .dynamics import (
    LinearSiteModel,
    NoiseModel,
    NumericalInstabilityError,
    ObservationModel,
    ReactionDiffusionModel,
    StateField,
    default_observation,
    simulate,
)
from .filter import FilterConfig, ProposalKind, Resampling, run_filter
from .lattice import BlockPartition, Lattice, laplacian, make_partition
from .reaction import OregonatorParams, ReactionNetwork, steady_state

__all__ = [
    "BlockPartition",
    "FilterConfig",
    "Lattice",
    "LinearSiteModel",
    "NoiseModel",
    "NumericalInstabilityError",
    "ObservationModel",
    "OregonatorParams",
    "ProposalKind",
    "ReactionDiffusionModel",
    "ReactionNetwork",
    "Resampling",
    "StateField",
    "default_observation",
    "laplacian",
    "make_partition",
    "run_filter",
    "simulate",
    "steady_state",
]
