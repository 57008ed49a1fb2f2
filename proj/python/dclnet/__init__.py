from ._core import (
    DclError,
    analyze,
    arch_presets,
    arch_string,
    dataset_config,
    dataset_presets,
    dcl_cost,
    dcl_inequality,
    fuse,
    fuse_backward,
    fusion_epsilon,
    gradcheck,
    layer_cost,
    run,
)

__all__ = [
    "DclError",
    "analyze",
    "arch_presets",
    "arch_string",
    "dataset_config",
    "dataset_presets",
    "dcl_cost",
    "dcl_inequality",
    "fuse",
    "fuse_backward",
    "fusion_epsilon",
    "gradcheck",
    "layer_cost",
    "run",
]
