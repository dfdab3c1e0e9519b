"""Python bindings for the cfaan library."""

from ._core import (
    ConfigError,
    DimensionError,
    ValidationError,
    ablation_table,
    attention_gflops,
    evaluate,
    gradcheck,
    load_tensor,
    model_gflops,
    run_cli,
    save_tensor,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "ValidationError",
    "ablation_table",
    "attention_gflops",
    "evaluate",
    "gradcheck",
    "load_tensor",
    "model_gflops",
    "run_cli",
    "save_tensor",
]
