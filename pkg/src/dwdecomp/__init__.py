"""Depth-wise decomposition of regular convolutions into separable pairs."""
from .convcore import (
    RegularConvLayer,
    SeparableConvLayer,
    conv2d_reference,
    fold_separable,
    im2col,
    separable_forward,
)
from .decompose import (
    channel_decompose,
    decompose_network,
    dw_decompose,
    dw_decompose_compensated,
    dw_decompose_single,
    relative_error,
    select_rank_for_speedup,
)
from .linalg import leading_right_singular_vector, rank1_constrained_fit, svd
from .netmodel import NetworkModel, deserialize_model, flops_and_speedup, forward, serialize_model
from .sampler import PatchSet, SamplingConfig, channel_slice, sample_patches

__version__ = "0.1.0"
