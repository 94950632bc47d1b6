"""Dense-tensor numeric core: reverse-mode autodiff primitives and AdamW."""

from .autodiff import (
    GradTape,
    Tensor,
    add,
    add_bias,
    abs_t,
    concat,
    const,
    conv2d,
    conv_transpose2x2,
    cross_attention,
    div,
    embedding_rows,
    gelu,
    instance_norm2d,
    layer_norm,
    matmul,
    mean_all,
    mlp2,
    mul,
    neg,
    pow_const,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    sub,
    sum_all,
    sum_axis,
    transpose,
)
from .optim import ParamStore, adamw_step, cosine_lr

__all__ = [
    "GradTape", "Tensor", "add", "add_bias", "abs_t", "concat", "const",
    "conv2d", "conv_transpose2x2", "cross_attention", "div", "embedding_rows",
    "gelu", "instance_norm2d", "layer_norm", "matmul", "mean_all", "mlp2", "mul", "neg",
    "pow_const", "reshape", "scale", "sigmoid", "softmax", "softplus", "sub",
    "sum_all", "sum_axis", "transpose", "ParamStore", "adamw_step", "cosine_lr",
]
