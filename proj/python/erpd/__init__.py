"""Two-stage extreme-region policy distillation toy lab."""

from ._core import (
    AvgAtK,
    Batch,
    Config,
    ConfigError,
    DivergenceError,
    KlEstimate,
    NotFoundError,
    Policy,
    Stage1Result,
    cli,
    collect_batch,
    evaluate,
    load_checkpoint,
    make_base_policy,
    read_metrics_csv,
    reverse_kl,
    run_online,
    run_pipeline,
    save_checkpoint,
    stage1_train,
    stage2_distill,
    whiten,
)

__all__ = [
    "AvgAtK",
    "Batch",
    "Config",
    "ConfigError",
    "DivergenceError",
    "KlEstimate",
    "NotFoundError",
    "Policy",
    "Stage1Result",
    "cli",
    "collect_batch",
    "evaluate",
    "load_checkpoint",
    "make_base_policy",
    "read_metrics_csv",
    "reverse_kl",
    "run_online",
    "run_pipeline",
    "save_checkpoint",
    "stage1_train",
    "stage2_distill",
    "whiten",
]
