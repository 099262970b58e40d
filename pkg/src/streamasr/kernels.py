"""Numeric kernels: grouped 1-D convolution with asymmetric padding and
streaming state, scalar-affine layer normalization, linear layers, log-softmax.

Convolution is cross-correlation (no kernel flip), single precision. The
grouped convolution is evaluated with a non-BLAS einsum so every output frame
is reduced in a fixed order independent of batch size; streaming calls over
any chunk partition therefore reproduce the full-sequence output bit for bit.
Weights are immutable and shareable across streams; ConvState is per stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SpecError


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_width: int
    stride: int = 1
    groups: int = 1
    left_pad: int = 0
    right_pad: int = 0

    def __post_init__(self):
        if self.kernel_width < 1 or self.stride < 1 or self.groups < 1:
            raise SpecError(f"invalid conv geometry: {self}")
        if self.left_pad < 0 or self.right_pad < 0:
            raise SpecError(f"negative padding: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise SpecError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible "
                f"by groups ({self.groups})"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_width)

    @property
    def param_count(self) -> int:
        o, i, k = self.weight_shape
        return o * i * k + self.out_channels


class ConvState:
    """Buffered trailing input frames for one stream of one conv layer.

    The buffer holds exactly the (already left-padded) frames a full-sequence
    convolution would still need: left zero-padding is materialized once at
    stream start, and the buffer front always sits on the next output window,
    which also encodes the stride phase.
    """

    def __init__(self, spec: ConvSpec):
        self.spec = spec
        self.buffer = np.zeros((spec.left_pad, spec.in_channels), dtype=np.float32)
        self.flushed = False

    def pending(self) -> int:
        return self.buffer.shape[0]


def conv1d_forward(
    spec: ConvSpec,
    weights: np.ndarray,
    bias: np.ndarray | None,
    x: np.ndarray,
    state: ConvState | None = None,
) -> np.ndarray | tuple[np.ndarray, ConvState]:
    """Grouped 1-D cross-correlation over time.

    Full-sequence mode (state=None): x is zero-padded with left_pad/right_pad
    frames and convolved in one shot. Streaming mode: frames are appended to
    the state buffer and every complete window is consumed; a chunk smaller
    than one window emits zero output frames and just grows the buffer.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != spec.in_channels:
        raise SpecError(
            f"input has shape {x.shape}, expected (T, {spec.in_channels})"
        )
    if tuple(weights.shape) != spec.weight_shape:
        raise SpecError(f"weight shape {weights.shape} != {spec.weight_shape}")

    if state is None:
        padded = _pad(x, spec.left_pad, spec.right_pad, spec.in_channels)
        return _windows_conv(spec, weights, bias, padded)[0]

    if state.spec != spec:
        raise SpecError("conv state belongs to a different spec")
    state.buffer = np.concatenate([state.buffer, x]) if x.size else state.buffer
    out, consumed = _windows_conv(spec, weights, bias, state.buffer)
    if consumed:
        state.buffer = state.buffer[consumed:]
    return out, state


def conv1d_flush(
    spec: ConvSpec, weights: np.ndarray, bias: np.ndarray | None, state: ConvState
) -> np.ndarray:
    """Append the right zero padding and drain remaining windows at stream end."""
    if state.flushed:
        return np.zeros((0, spec.out_channels), dtype=np.float32)
    state.flushed = True
    tail = np.zeros((spec.right_pad, spec.in_channels), dtype=np.float32)
    state.buffer = np.concatenate([state.buffer, tail])
    out, consumed = _windows_conv(spec, weights, bias, state.buffer)
    state.buffer = state.buffer[consumed:]
    return out


def _pad(x: np.ndarray, left: int, right: int, channels: int) -> np.ndarray:
    if not left and not right:
        return x
    return np.concatenate(
        [
            np.zeros((left, channels), dtype=np.float32),
            x,
            np.zeros((right, channels), dtype=np.float32),
        ]
    )


def _windows_conv(
    spec: ConvSpec, weights: np.ndarray, bias: np.ndarray | None, buf: np.ndarray
) -> tuple[np.ndarray, int]:
    """Convolve every complete window in buf. Returns (output, frames consumed)."""
    kw, dw, g = spec.kernel_width, spec.stride, spec.groups
    t_avail = buf.shape[0]
    if t_avail < kw:
        return np.zeros((0, spec.out_channels), dtype=np.float32), 0
    n_out = (t_avail - kw) // dw + 1

    win = sliding_window_view(buf, kw, axis=0)[:: dw][:n_out]  # (n_out, C_in, kw)
    win = win.reshape(n_out, g, spec.in_channels // g, kw)
    w = weights.reshape(g, spec.out_channels // g, spec.in_channels // g, kw)
    # optimize=False keeps the reduction order fixed per output element
    out = np.einsum("tgik,goik->tgo", win, w, optimize=False)
    out = out.reshape(n_out, spec.out_channels)
    if bias is not None:
        out = out + bias.astype(np.float32)
    return out.astype(np.float32), n_out * dw


@dataclass(frozen=True)
class LayerNormParams:
    """Scalar gain/bias layer normalization over the feature axis of each row."""

    g: float = 1.0
    b: float = 0.0
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise SpecError("layernorm eps must be > 0")


def layernorm(params: LayerNormParams, x: np.ndarray) -> np.ndarray:
    """Normalize each time row by its own mean/variance over the feature axis,
    then apply the scalar affine transform. No dependence across rows."""
    x = np.asarray(x, dtype=np.float32)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    normed = centered / np.sqrt(var + np.float32(params.eps))
    return np.float32(params.g) * normed + np.float32(params.b)


def linear(weights: np.ndarray, bias: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Row-wise affine map. weights is (out, in)."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != weights.shape[1]:
        raise SpecError(f"linear input dim {x.shape[-1]} != weight in dim {weights.shape[1]}")
    out = x @ weights.T.astype(np.float32)
    if bias is not None:
        out = out + bias.astype(np.float32)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Per-row log softmax with max subtraction."""
    x = np.asarray(x, dtype=np.float32)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
