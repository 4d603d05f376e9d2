"""Collaborative batch-size search for synchronous federated learning."""

from .bounds import BoundsState, ProbeOutcome, apply_outcome, init_bounds, merge, sample_probe
from .client_model import ClientProfile, epoch_time, max_feasible_batch, try_batch
from .search_protocol import (ConfigError, FederationConfig, Strategy, assign_roles, client_round,
                              run_search, server_round)

__all__ = [
    "BoundsState", "ProbeOutcome", "apply_outcome", "init_bounds", "merge", "sample_probe",
    "ClientProfile", "epoch_time", "max_feasible_batch", "try_batch",
    "ConfigError", "FederationConfig", "Strategy", "assign_roles", "client_round",
    "run_search", "server_round",
]
__version__ = "0.1.0"
