"""Configuration, orchestration, persistence, and the CLI."""

from icl_lab.harness.config import (
    LR_SWEEP_DEFAULT,
    MAMBA_SIZE_ABLATION,
    MQAR_LR_SWEEP,
    PRESETS,
    ConfigError,
    EvalParams,
    ExperimentConfig,
    TrainParams,
    load_config,
    resolve_config,
    save_config,
)
from icl_lab.harness.runner import (
    RunResult,
    SweepResult,
    evaluate_checkpoint,
    read_manifest,
    run_experiment,
    sweep,
)

__all__ = [
    "ConfigError",
    "EvalParams",
    "ExperimentConfig",
    "LR_SWEEP_DEFAULT",
    "MAMBA_SIZE_ABLATION",
    "MQAR_LR_SWEEP",
    "PRESETS",
    "RunResult",
    "SweepResult",
    "TrainParams",
    "evaluate_checkpoint",
    "load_config",
    "read_manifest",
    "resolve_config",
    "run_experiment",
    "save_config",
    "sweep",
]
