"""Local-to-global world models for offline multi-agent RL."""

from ._core import (
    CheckLine,
    ConfigError,
    Dataset,
    EnvMismatchError,
    EnvSpec,
    MissingArtifactError,
    ParticleEnv,
    WorldModel,
    WorldModelConfig,
    ci95,
    collect,
    load_dataset,
    one_step_state_mse,
    run_command,
    save_dataset,
    spearman,
    split,
    train_world_model,
    verify_theorem1,
)

__all__ = [
    "CheckLine",
    "ConfigError",
    "Dataset",
    "EnvMismatchError",
    "EnvSpec",
    "MissingArtifactError",
    "ParticleEnv",
    "WorldModel",
    "WorldModelConfig",
    "ci95",
    "collect",
    "load_dataset",
    "one_step_state_mse",
    "run_command",
    "save_dataset",
    "spearman",
    "split",
    "train_world_model",
    "verify_theorem1",
]
