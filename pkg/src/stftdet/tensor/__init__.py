from .core import (
    DEFAULT_DTYPE,
    DimensionError,
    GradTape,
    NonFiniteError,
    Tensor,
    abs_,
    add,
    as_tensor,
    check_finite,
    clamp,
    concat,
    div,
    exp,
    grad_enabled,
    log,
    make_op,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_,
    softmax,
    stack,
    sub,
    sum_,
    transpose,
)
from .conv import BilinearSampler, bilinear_sample, conv2d
from .gradcheck import directional_grad_check, grad_check, max_rel_error, numeric_grad
from .norm import group_norm
from .io import TensorFileError, decode_tensor, encode_tensor, load_tensor, save_tensor

__all__ = [name for name in dir() if not name.startswith("_")]
