"""Adversarial-policy laboratory for two-player tabular Markov games.

Train an adversary against a fixed victim (optionally through an imitator
of the victim), retrain victims against mixtures, and machine-check every
estimator and bound against an exact dynamic-programming oracle.
"""

from .game import EnvSpec, MarkovGame, Trajectory, Transition, make_env
from .oracle import (
    BoundReport,
    ValueTable,
    competitive_advantage,
    drift_bound_check,
    exact_objective,
    exact_policy_gradient,
    imitation_gap_constant,
    occupancy,
    retrain_radius_probe,
    value_function,
    victim_return,
)
from .adversary import AdversaryState, adv_update, augment_observation
from .evalreport import (
    WinTieReport,
    emit_plots,
    evaluate,
    paired_difference,
    policy_fingerprint,
    verify_bounds,
    write_report,
)
from .imitator import (
    Discriminator,
    ImitatorState,
    disc_update,
    imit_policy_update,
    imitation_gap,
)
from .policy import (
    LinearSoftmaxPolicy,
    MixedPolicy,
    MlpPolicy,
    load_policy,
    mix_policies,
    save_policy,
    state_blind_mask,
)
from .rollout import EpisodeBatch, backend_name, batch_from_trajectories, rollout, rollout_batch
from .trainer import (
    BufferSet,
    TrainConfig,
    TrainerState,
    checkpoint,
    make_victim,
    restore,
    retrain_victim,
    train_apil,
)

__version__ = "0.1.0"

__all__ = [
    "AdversaryState",
    "BoundReport",
    "BufferSet",
    "Discriminator",
    "EnvSpec",
    "EpisodeBatch",
    "ImitatorState",
    "LinearSoftmaxPolicy",
    "MarkovGame",
    "MixedPolicy",
    "MlpPolicy",
    "TrainConfig",
    "TrainerState",
    "Trajectory",
    "Transition",
    "ValueTable",
    "WinTieReport",
    "adv_update",
    "augment_observation",
    "backend_name",
    "batch_from_trajectories",
    "checkpoint",
    "competitive_advantage",
    "disc_update",
    "drift_bound_check",
    "emit_plots",
    "evaluate",
    "exact_objective",
    "exact_policy_gradient",
    "imit_policy_update",
    "imitation_gap",
    "imitation_gap_constant",
    "load_policy",
    "make_env",
    "make_victim",
    "mix_policies",
    "occupancy",
    "paired_difference",
    "policy_fingerprint",
    "restore",
    "retrain_radius_probe",
    "retrain_victim",
    "rollout",
    "rollout_batch",
    "save_policy",
    "state_blind_mask",
    "train_apil",
    "value_function",
    "verify_bounds",
    "victim_return",
    "write_report",
    "__version__",
]
