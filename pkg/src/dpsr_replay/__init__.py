"""Experience-replay toolkit: double-prioritized state-recycled (DPSR) replay.

Prioritized sampling, prioritized replacing, and state recycling for deep
Q-learning, alongside uniform-replay and prioritized-replay baselines,
snapshot-restorable environments, and a seeded experiment harness.
"""

from .priority_index import ExtremaTree, PrefixSumTree
from .replay_buffer import DpsrBuffer, Experience
from .q_model import (
    DenseQNet,
    TabularQ,
    apply_weighted_update,
    greedy_action,
    sync_target,
    td_error,
)
from .environments import CartPole, ChainWorld, ForkedCorridor, chain_q_star, make_env
from .trainer import Hooks, RunMetrics, Schedules, TrainConfig, run

__all__ = [
    "PrefixSumTree",
    "ExtremaTree",
    "Experience",
    "DpsrBuffer",
    "DenseQNet",
    "TabularQ",
    "greedy_action",
    "td_error",
    "apply_weighted_update",
    "sync_target",
    "ForkedCorridor",
    "CartPole",
    "ChainWorld",
    "chain_q_star",
    "make_env",
    "Schedules",
    "TrainConfig",
    "RunMetrics",
    "Hooks",
    "run",
]

__version__ = "0.1.0"
