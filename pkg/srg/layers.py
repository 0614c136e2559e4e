"""
Network building blocks: temporal attention, non-local, pyramid non-local (PN)
and conv/max-pool (CM) blocks

Every block reads its weights from a flat name -> Tensor dict under a prefix,
so one dict holds a whole network and maps directly onto a checkpoint.
Inputs are [C, T] or [B, C, T]; leading axes pass through.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np

from srg.errors import ConfigurationError, DimensionError
from srg.tensor import (
    Tensor,
    concat,
    conv1d,
    linear_upsample,
    matmul,
    parameter,
    reduce_max,
    reduce_mean,
    relu,
    sigmoid,
    softmax,
    swap_last,
    temporal_pool,
)

Params = Dict[str, Tensor]
PyramidLevels = Sequence[Tuple[int, int]]


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / max(1, fan_in))


def init_conv(params: Params, rng: np.random.Generator, name: str, c_out: int, c_in: int, kernel: int):
    params[f"{name}.w"] = parameter(he_normal(rng, (c_out, c_in, kernel), c_in * kernel), name=f"{name}.w")
    params[f"{name}.b"] = parameter(np.zeros(c_out), name=f"{name}.b")


def apply_conv(params: Params, name: str, x: Tensor, padding: int = 0) -> Tensor:
    return conv1d(x, params[f"{name}.w"], params[f"{name}.b"], padding=padding)


def _check_channels(x: Tensor, expected: int, block: str):
    if x.ndim < 2:
        raise DimensionError(f"{block}: input must be [..., C, T], got {x.shape}", axis="rank")
    if x.shape[-2] != expected:
        raise DimensionError(f"{block}: input has {x.shape[-2]} channels, expected {expected}", axis="channel")


# ---------------------------------------------------------------------------
# Attention (channel then temporal gating)
# ---------------------------------------------------------------------------

def attention_hidden(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


def init_attention_block(
    params: Params,
    rng: np.random.Generator,
    prefix: str,
    channels: int,
    reduction: int = 8,
    kernel: int = 7,
):
    hidden = attention_hidden(channels, reduction)
    init_conv(params, rng, f"{prefix}.mlp1", hidden, channels, 1)
    init_conv(params, rng, f"{prefix}.mlp2", channels, hidden, 1)
    init_conv(params, rng, f"{prefix}.temporal", 1, 2, kernel)


def attention_block(x: Tensor, params: Params, prefix: str, return_weights: bool = False):
    """
    Gate x by channel attention from its temporal avg/max descriptors, then
    by temporal attention from its channel avg/max descriptors. Both gates
    lie in (0, 1).
    """
    channels = params[f"{prefix}.mlp2.b"].shape[0]
    _check_channels(x, channels, "attention_block")

    def shared_mlp(descriptor: Tensor) -> Tensor:
        hidden = relu(apply_conv(params, f"{prefix}.mlp1", descriptor))
        return apply_conv(params, f"{prefix}.mlp2", hidden)

    avg = reduce_mean(x, axis=-1, keepdims=True)
    peak = reduce_max(x, axis=-1, keepdims=True)
    channel_weights = sigmoid(shared_mlp(avg) + shared_mlp(peak))  # [..., C, 1]
    gated = x * channel_weights

    kernel = params[f"{prefix}.temporal.w"].shape[-1]
    descriptors = concat(
        [reduce_mean(gated, axis=-2, keepdims=True), reduce_max(gated, axis=-2, keepdims=True)], axis=-2
    )
    temporal_weights = sigmoid(apply_conv(params, f"{prefix}.temporal", descriptors, padding=kernel // 2))
    out = gated * temporal_weights
    if return_weights:
        return out, channel_weights, temporal_weights
    return out


# ---------------------------------------------------------------------------
# Non-local (embedded Gaussian, residual)
# ---------------------------------------------------------------------------

def init_non_local(params: Params, rng: np.random.Generator, prefix: str, channels: int):
    inner = max(1, channels // 2)
    for name in ("theta", "phi", "g"):
        init_conv(params, rng, f"{prefix}.{name}", inner, channels, 1)
    init_conv(params, rng, f"{prefix}.out", channels, inner, 1)


def non_local(x: Tensor, params: Params, prefix: str, return_attention: bool = False):
    """
    x + W_z(softmax(theta(x)^T phi(x)) g(x)^T)^T. Each row of the pairwise
    attention matrix sums to 1.
    """
    _check_channels(x, params[f"{prefix}.out.b"].shape[0], "non_local")
    theta = apply_conv(params, f"{prefix}.theta", x)
    phi = apply_conv(params, f"{prefix}.phi", x)
    g = apply_conv(params, f"{prefix}.g", x)
    attention = softmax(matmul(swap_last(theta), phi), axis=-1)  # [..., T, T]
    y = swap_last(matmul(attention, swap_last(g)))  # [..., inner, T]
    out = x + apply_conv(params, f"{prefix}.out", y)
    if return_attention:
        return out, attention
    return out


# ---------------------------------------------------------------------------
# Pyramid non-local block
# ---------------------------------------------------------------------------

def pooled_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def check_pyramid(levels: PyramidLevels, length: int, block: str = "PN block"):
    for index, (kernel, stride) in enumerate(levels):
        if kernel > length:
            raise ConfigurationError(
                f"{block} level {index} (kernel {kernel}, stride {stride}) exceeds sequence length {length}"
            )


def init_pn_block(
    params: Params,
    rng: np.random.Generator,
    prefix: str,
    in_channels: int,
    hidden: int,
    levels: PyramidLevels,
):
    init_conv(params, rng, f"{prefix}.trunk1", hidden, in_channels, 3)
    init_conv(params, rng, f"{prefix}.trunk2", hidden, hidden, 3)
    init_non_local(params, rng, f"{prefix}.full", hidden)
    for index in range(len(levels)):
        init_non_local(params, rng, f"{prefix}.level{index}", hidden)
    init_conv(params, rng, f"{prefix}.fuse", hidden, hidden * (len(levels) + 1), 1)


def pn_branches(x: Tensor, params: Params, prefix: str, levels: PyramidLevels) -> Tuple[Tensor, List[Tensor]]:
    """
    Run the trunk and every pyramid branch. Returns the trunk output and the
    branches in concatenation order (full-length branch first), each still at
    its pooled length.
    """
    trunk = relu(apply_conv(params, f"{prefix}.trunk1", x, padding=1))
    trunk = relu(apply_conv(params, f"{prefix}.trunk2", trunk, padding=1))
    length = trunk.shape[-1]
    check_pyramid(levels, length)

    branches = [non_local(trunk, params, f"{prefix}.full")]
    for index, (kernel, stride) in enumerate(levels):
        pooled = temporal_pool(trunk, "avg", kernel, stride)
        branches.append(non_local(pooled, params, f"{prefix}.level{index}"))
    return trunk, branches


def pn_block(x: Tensor, params: Params, prefix: str, levels: PyramidLevels) -> Tensor:
    """[..., C, T] -> [..., hidden, T]"""
    trunk, branches = pn_branches(x, params, prefix, levels)
    length = trunk.shape[-1]
    resized = [branches[0]] + [linear_upsample(b, length) for b in branches[1:]]
    return relu(apply_conv(params, f"{prefix}.fuse", concat(resized, axis=-2)))


# ---------------------------------------------------------------------------
# Conv / max-pool block (ablation counterpart of the PN block)
# ---------------------------------------------------------------------------

CM_MIN_LENGTH = 4


def init_cm_block(params: Params, rng: np.random.Generator, prefix: str, in_channels: int, hidden: int):
    init_conv(params, rng, f"{prefix}.conv1", hidden, in_channels, 3)
    init_conv(params, rng, f"{prefix}.conv2", hidden, hidden, 3)


def cm_block(x: Tensor, params: Params, prefix: str) -> Tensor:
    """Two conv(3) + ReLU + max-pool(2, 2) pairs, upsampled back to the input length"""
    length = x.shape[-1]
    if length < CM_MIN_LENGTH:
        raise ConfigurationError(f"CM block needs at least {CM_MIN_LENGTH} time steps, got {length}")
    h = temporal_pool(relu(apply_conv(params, f"{prefix}.conv1", x, padding=1)), "max", 2, 2)
    h = temporal_pool(relu(apply_conv(params, f"{prefix}.conv2", h, padding=1)), "max", 2, 2)
    return linear_upsample(h, length)


# ---------------------------------------------------------------------------
# Parameter dict helpers
# ---------------------------------------------------------------------------

def params_to_arrays(params: Params) -> Dict[str, np.ndarray]:
    return {name: t.data for name, t in params.items()}


def load_arrays_into(params: Params, arrays: Dict[str, np.ndarray], network: str):
    """
    Overwrite `params` in place from checkpoint arrays. Names and shapes must
    match the freshly built network exactly.
    """
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise ConfigurationError(
            f"{network} checkpoint does not match the configured architecture "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, tensor in params.items():
        if arrays[name].shape != tensor.shape:
            raise DimensionError(
                f"{network} checkpoint tensor {name} has shape {arrays[name].shape}, expected {tensor.shape}",
                axis=name,
            )
        tensor.data = np.array(arrays[name], dtype=tensor.data.dtype)
