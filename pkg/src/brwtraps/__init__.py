"""Branching random walks among Bernoulli hard traps on Z^d."""

__version__ = "0.1.0"

from .lattice import LatticeConfig, TrapField, generate_environment, load_environment, save_environment
from .percolation import label_vacant_clusters, infinite_cluster_proxy
from .walk import constants, survival_probability_dp
from .brw import SimOptions, simulate, simulate_many

__all__ = [
    "__version__",
    "LatticeConfig",
    "TrapField",
    "generate_environment",
    "load_environment",
    "save_environment",
    "label_vacant_clusters",
    "infinite_cluster_proxy",
    "constants",
    "survival_probability_dp",
    "SimOptions",
    "simulate",
    "simulate_many",
]
