"""Small residual networks under a parameter budget.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports it and adds a couple of pure-Python conveniences.
"""

from ._core import (
    GRAD_CHECK_TOLERANCE,
    PARAM_BUDGET,
    ConfigError,
    DataError,
    FormatError,
    Model,
    NumericError,
    ResNetConfig,
    RngStream,
    Schedule,
    UsageError,
    augment,
    avgpool,
    avgpool_kernel,
    build_model,
    conv2d,
    count_params,
    grad_check,
    grad_check_ops,
    load_cifar10,
    load_cifar_file,
    parse_config,
    relu,
    schedule_lr,
    softmax_cross_entropy,
)

__all__ = [
    "GRAD_CHECK_TOLERANCE",
    "PARAM_BUDGET",
    "ConfigError",
    "DataError",
    "FormatError",
    "Model",
    "NumericError",
    "ResNetConfig",
    "RngStream",
    "Schedule",
    "UsageError",
    "augment",
    "avgpool",
    "avgpool_kernel",
    "build_model",
    "conv2d",
    "count_params",
    "grad_check",
    "grad_check_ops",
    "load_cifar10",
    "load_cifar_file",
    "make_config",
    "parse_config",
    "relu",
    "schedule_lr",
    "softmax_cross_entropy",
]

__version__ = "0.1.0"


def make_config(
    blocks,
    channels,
    conv_kernels=None,
    skip_kernels=None,
    *,
    se_enabled=False,
    se_ratio=16,
    dropout_p=0.0,
    num_classes=10,
):
    """Build and validate a :class:`ResNetConfig` from per-layer lists."""
    cfg = ResNetConfig()
    cfg.n_layers = len(blocks)
    cfg.blocks = list(blocks)
    cfg.channels = list(channels)
    cfg.conv_kernels = list(conv_kernels) if conv_kernels else [3] * len(blocks)
    cfg.skip_kernels = list(skip_kernels) if skip_kernels else [1] * len(blocks)
    cfg.se_enabled = se_enabled
    cfg.se_ratio = se_ratio
    cfg.dropout_p = dropout_p
    cfg.num_classes = num_classes
    cfg.validate()
    return cfg
