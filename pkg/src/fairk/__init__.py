"""FAIR-k: fresh-and-important entry selection for over-the-air federated learning.

Modules
-------
selection   entry-selection policies and the age-of-update recursion
aou_markov  Markov model of entry staleness and its Monte-Carlo check
channel     fading multiple-access uplink and gradient reconstruction
training    federated rounds with local SGD on desk-scale tasks
analysis    Lipschitz-type constant estimators and convergence bounds
cli         command-line harness
"""
from .aou_markov import ExchangeModel, StalenessDistribution, analytic_staleness, expected_staleness
from .channel import ChannelMode, ChannelParams, FadingKind
from .config import ExperimentConfig, load_config
from .errors import FairKError
from .selection import PolicyConfig, PolicyKind, aou_update, fair_k, round_robin, select, top_mask, top_rand
from .training import RoundMetrics, Trainer, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ChannelMode", "ChannelParams", "ExchangeModel", "ExperimentConfig", "FadingKind", "FairKError",
    "PolicyConfig", "PolicyKind", "RoundMetrics", "StalenessDistribution", "Trainer", "analytic_staleness",
    "aou_update", "expected_staleness", "fair_k", "load_config", "round_robin", "run_experiment", "select",
    "top_mask", "top_rand",
]
