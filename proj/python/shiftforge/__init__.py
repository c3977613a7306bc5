"""S3 re-parameterized low-bit shift network toolkit (C++ core bindings)."""

from ._core import (  # noqa: F401
    ShiftforgeError,
    alpha_at,
    deepshift_quantize,
    dense_weight_penalty,
    heaviside_ste,
    lr_at,
    pack,
    s3_project,
    shift_matmul,
    spearman,
    staircase_quantize,
    ternary_auto_delta,
    ternary_quantize,
    train,
    unpack,
    wlvr,
    write_synthetic_cifar,
    write_synthetic_mnist,
    wsvr,
)

__all__ = [
    "ShiftforgeError",
    "alpha_at",
    "deepshift_quantize",
    "dense_weight_penalty",
    "heaviside_ste",
    "lr_at",
    "pack",
    "s3_project",
    "shift_matmul",
    "spearman",
    "staircase_quantize",
    "ternary_auto_delta",
    "ternary_quantize",
    "train",
    "unpack",
    "wlvr",
    "write_synthetic_cifar",
    "write_synthetic_mnist",
    "wsvr",
]
