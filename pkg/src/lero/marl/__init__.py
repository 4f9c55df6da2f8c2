"""Numpy multi-agent learners (VDN, QMIX, MAPPO) and the training harness."""

from lero.marl.mappo import DegenerateBatch, MappoLearner, PPOConfig, clipped_surrogate, gae, ppo_update
from lero.marl.mlp import Adam, Mlp, ShapeMismatch, clip_by_global_norm, load_snapshot, mlp_forward, mlp_gradients, save_snapshot
from lero.marl.train import (
    Algorithm,
    ConstantPolicy,
    EvalReport,
    GreedyPolicy,
    RandomPolicy,
    TrainerSpec,
    evaluate_policy,
    random_baseline,
    train,
)
from lero.marl.value import LearnerConfig, QMixer, ReplayBuffer, ValueLearner, qmix_mix, vdn_joint_q

__all__ = [
    "Adam",
    "Algorithm",
    "ConstantPolicy",
    "DegenerateBatch",
    "EvalReport",
    "GreedyPolicy",
    "LearnerConfig",
    "MappoLearner",
    "Mlp",
    "PPOConfig",
    "QMixer",
    "RandomPolicy",
    "ReplayBuffer",
    "ShapeMismatch",
    "TrainerSpec",
    "ValueLearner",
    "clip_by_global_norm",
    "clipped_surrogate",
    "evaluate_policy",
    "gae",
    "load_snapshot",
    "mlp_forward",
    "mlp_gradients",
    "ppo_update",
    "qmix_mix",
    "random_baseline",
    "save_snapshot",
    "train",
    "vdn_joint_q",
]
