"""Tensor kernel: autodiff ops, finite-difference oracle, seeded RNG."""

from .gradcheck import GradCheckReport, grad_check, numeric_grad, relative_error
from .rng import Rng, splitmix64
from .tensor import (
    ContractError,
    LengthError,
    NumericError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    gelu,
    getitem,
    is_grad_enabled,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    mean,
    mean_pool_segments,
    mul,
    no_grad,
    relu,
    reshape,
    segment_pool_matrix,
    segment_sizes,
    softmax,
    softmax_rows,
    sub,
    swap_last,
    take_rows,
    transpose,
    tsum,
)
