"""Reversible-jump Hamiltonian Monte Carlo for Bayesian decision trees.

Set ``HMCTREE_DISABLE_NUMBA=1`` before import to run the pure-numpy kernels.
"""

__version__ = "0.1.0"

from .data import Dataset, load_csv, split, synth_cgm
from .model import PriorConfig, TreeParams, Posterior, leaf_weights, log_posterior
from .rjsampler import MoveConfig, NutsEngine, TreeState, initial_state, run_chain
from .topology import TreeTopology, grow, prune, prunable_count, path_info

__all__ = [
    "__version__",
    "Dataset",
    "load_csv",
    "split",
    "synth_cgm",
    "PriorConfig",
    "TreeParams",
    "Posterior",
    "leaf_weights",
    "log_posterior",
    "MoveConfig",
    "NutsEngine",
    "TreeState",
    "initial_state",
    "run_chain",
    "TreeTopology",
    "grow",
    "prune",
    "prunable_count",
    "path_info",
]
