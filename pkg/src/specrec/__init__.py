"""Spectrum diagnostics and spectrum-balancing training for implicit-feedback recommenders."""

__version__ = "0.1.0"

from .balancer import BalancerConfig, apply_balancer, directspec_plus_update, directspec_update
from .data import (
    InteractionDataset,
    build_normalized_adjacency,
    fingerprint,
    from_pairs,
    load_interactions,
    split,
)
from .dynamics import simulate_filter_dynamics, toy_trajectory
from .encoders import EncoderParams, forward
from .evaluation import EvalReport, evaluate
from .spectrum import effective_rank, erank, singular_values, spectrum_report, verify_ssl_equivalence
from .trainer import TrainConfig, TrainHistory, collapse_report, train

__all__ = [
    "BalancerConfig",
    "EncoderParams",
    "EvalReport",
    "InteractionDataset",
    "TrainConfig",
    "TrainHistory",
    "apply_balancer",
    "build_normalized_adjacency",
    "collapse_report",
    "directspec_plus_update",
    "directspec_update",
    "effective_rank",
    "erank",
    "evaluate",
    "fingerprint",
    "forward",
    "from_pairs",
    "load_interactions",
    "simulate_filter_dynamics",
    "singular_values",
    "spectrum_report",
    "split",
    "toy_trajectory",
    "train",
    "verify_ssl_equivalence",
]
