"""Acoustic model assembly: time-depth separable blocks over grouped convs.

A model is an ordered stack of conv stages and TDS blocks acting on feature
matrices of shape (T, width * mult), closed by a linear projection to the
token set and a log-softmax. Conv stages may subsample; TDS blocks preserve
the frame rate. The block wiring is

    grouped conv -> ReLU -> residual add -> layernorm
    -> linear -> ReLU -> linear -> residual add -> layernorm

with asymmetric conv padding so each layer looks at most ``right_pad`` frames
ahead of its current position. A model (spec + weights) is immutable and can
be shared read-only across streams; StreamState is per stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import SpecError
from .kernels import ConvSpec, ConvState, LayerNormParams


@dataclass(frozen=True)
class ConvStageSpec:
    """A grouped conv between block groups; channels counted per width group.

    Total channels are ``width * mult`` with ``groups = width``. Padding is
    ``{kw - stride - right_pad, right_pad}`` so frame accounting stays exactly
    stride-preserving (T -> T // stride).
    """

    in_mult: int
    out_mult: int
    kernel_width: int
    stride: int = 1
    right_pad: int = 0


@dataclass(frozen=True)
class TdsBlockSpec:
    """One time-depth separable block: channel multiplier, conv width, lookahead."""

    channel_mult: int
    kernel_width: int
    right_pad: int = 0


LayerSpec = ConvStageSpec | TdsBlockSpec


@dataclass(frozen=True)
class ModelSpec:
    width: int
    n_tokens: int
    layers: tuple[LayerSpec, ...]
    feature_stride_ms: int = 10

    def __post_init__(self):
        if self.width < 1 or self.n_tokens < 1:
            raise SpecError("width and n_tokens must be positive")
        mult = 1
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvStageSpec):
                if layer.in_mult != mult:
                    raise SpecError(
                        f"layer {i}: expects in_mult {layer.in_mult}, stream carries {mult}"
                    )
                if layer.right_pad < 0 or layer.right_pad > layer.kernel_width - layer.stride:
                    raise SpecError(
                        f"layer {i}: right_pad {layer.right_pad} outside "
                        f"[0, kw - stride] for kw={layer.kernel_width} stride={layer.stride}"
                    )
                mult = layer.out_mult
            elif isinstance(layer, TdsBlockSpec):
                if layer.channel_mult != mult:
                    raise SpecError(
                        f"layer {i}: block carries mult {layer.channel_mult}, stream {mult}"
                    )
                if not 0 <= layer.right_pad <= layer.kernel_width - 1:
                    raise SpecError(
                        f"layer {i}: right_pad {layer.right_pad} outside [0, kw-1]"
                    )
            else:
                raise SpecError(f"layer {i}: unknown layer spec {type(layer)}")
        object.__setattr__(self, "_final_mult", mult)

    @property
    def final_mult(self) -> int:
        return self._final_mult


def _conv_spec_of(spec: ModelSpec, layer: LayerSpec) -> ConvSpec:
    w = spec.width
    if isinstance(layer, ConvStageSpec):
        left = layer.kernel_width - layer.stride - layer.right_pad
        return ConvSpec(
            in_channels=w * layer.in_mult,
            out_channels=w * layer.out_mult,
            kernel_width=layer.kernel_width,
            stride=layer.stride,
            groups=w,
            left_pad=left,
            right_pad=layer.right_pad,
        )
    wc = w * layer.channel_mult
    return ConvSpec(
        in_channels=wc,
        out_channels=wc,
        kernel_width=layer.kernel_width,
        stride=1,
        groups=w,
        left_pad=layer.kernel_width - 1 - layer.right_pad,
        right_pad=layer.right_pad,
    )


def subsampling_factor(spec: ModelSpec) -> int:
    factor = 1
    for layer in spec.layers:
        if isinstance(layer, ConvStageSpec):
            factor *= layer.stride
    return factor


def output_stride_ms(spec: ModelSpec) -> int:
    return spec.feature_stride_ms * subsampling_factor(spec)


def future_context(spec: ModelSpec) -> float:
    """Milliseconds of lookahead: sum of right_pad * input stride before the layer.

    This is the largest lookahead any emission has beyond the end of its own
    input span; the frame-covering term from subsampling is not lookahead.
    """
    ms = 0
    cum = 1
    for layer in spec.layers:
        if isinstance(layer, ConvStageSpec):
            ms += layer.right_pad * cum
            cum *= layer.stride
        else:
            ms += layer.right_pad * cum
    return float(ms * spec.feature_stride_ms)


def receptive_field(spec: ModelSpec) -> float:
    """Milliseconds of total input span per emission (standard kw/stride recurrence)."""
    frames = 1
    cum = 1
    for layer in spec.layers:
        if isinstance(layer, ConvStageSpec):
            frames += (layer.kernel_width - 1) * cum
            cum *= layer.stride
        else:
            frames += (layer.kernel_width - 1) * cum
    return float(frames * spec.feature_stride_ms)


def parameter_count(spec: ModelSpec) -> int:
    total = 0
    w = spec.width
    for layer in spec.layers:
        total += _conv_spec_of(spec, layer).param_count
        if isinstance(layer, TdsBlockSpec):
            wc = w * layer.channel_mult
            total += 2 * (wc * wc + wc)  # two pointwise linears with bias
            total += 4  # two layernorms, scalar gain + bias each
    wc = w * spec.final_mult
    total += wc * spec.n_tokens + spec.n_tokens
    return total


def tensor_schema(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list defining weight layout and file order."""
    schema: list[tuple[str, tuple[int, ...]]] = []
    for i, layer in enumerate(spec.layers):
        conv = _conv_spec_of(spec, layer)
        prefix = f"layers.{i}"
        schema.append((f"{prefix}.conv.weight", conv.weight_shape))
        schema.append((f"{prefix}.conv.bias", (conv.out_channels,)))
        if isinstance(layer, TdsBlockSpec):
            wc = spec.width * layer.channel_mult
            schema.append((f"{prefix}.ln1.g", ()))
            schema.append((f"{prefix}.ln1.b", ()))
            schema.append((f"{prefix}.lin1.weight", (wc, wc)))
            schema.append((f"{prefix}.lin1.bias", (wc,)))
            schema.append((f"{prefix}.lin2.weight", (wc, wc)))
            schema.append((f"{prefix}.lin2.bias", (wc,)))
            schema.append((f"{prefix}.ln2.g", ()))
            schema.append((f"{prefix}.ln2.b", ()))
    wc = spec.width * spec.final_mult
    schema.append(("final.weight", (spec.n_tokens, wc)))
    schema.append(("final.bias", (spec.n_tokens,)))
    return schema


def initialize_weights(spec: ModelSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded pseudo-random weights for testing and demos (no trained model ships)."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name, shape in tensor_schema(spec):
        if name.endswith(".g"):
            weights[name] = np.float32(1.0)
        elif name.endswith((".b", ".bias")):
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
            std = np.sqrt(2.0 / max(fan_in, 1))
            weights[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return weights


class StreamState:
    """Per-stream buffered left context for every stateful layer."""

    def __init__(self, model: "Model"):
        self.model_id = id(model)
        self.layer_states: list[object] = []
        for i, layer in enumerate(model.spec.layers):
            conv = ConvState(model.conv_specs[i])
            if isinstance(layer, TdsBlockSpec):
                self.layer_states.append(_TdsState(conv))
            else:
                self.layer_states.append(conv)


class _TdsState:
    """Conv state plus the input rows still waiting for their residual partner."""

    def __init__(self, conv: ConvState):
        self.conv = conv
        self.pending: np.ndarray | None = None

    def queue(self, x: np.ndarray) -> None:
        if self.pending is None or not self.pending.size:
            self.pending = x.copy() if x.size else x
        elif x.size:
            self.pending = np.concatenate([self.pending, x])

    def take(self, n: int) -> np.ndarray:
        rows = self.pending[:n]
        self.pending = self.pending[n:]
        return rows


class Model:
    """Executable acoustic model: validated spec bound to concrete tensors."""

    def __init__(self, spec: ModelSpec, weights: dict[str, np.ndarray]):
        self.spec = spec
        self.conv_specs = [_conv_spec_of(spec, layer) for layer in spec.layers]
        self.weights = {}
        for name, shape in tensor_schema(spec):
            if name not in weights:
                raise SpecError(f"missing tensor {name}")
            arr = np.asarray(weights[name], dtype=np.float32)
            if tuple(arr.shape) != tuple(shape):
                raise SpecError(f"tensor {name} has shape {arr.shape}, expected {shape}")
            self.weights[name] = arr
        self.output_stride_ms = output_stride_ms(spec)
        self.future_context_ms = future_context(spec)

    # -- full-sequence path ------------------------------------------------

    def forward_full(self, features: np.ndarray) -> np.ndarray:
        """Features (T, width) -> emission matrix (T_out, n_tokens) of log-posteriors."""
        x = np.asarray(features, dtype=np.float32)
        if x.ndim != 2 or x.shape[1] != self.spec.width:
            raise SpecError(f"features have shape {x.shape}, expected (T, {self.spec.width})")
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, ConvStageSpec):
                x = self._conv_stage(i, x, state=None)
            else:
                x = self._tds_block(i, x, state=None)
        return self._emit(x)

    # -- streaming path ----------------------------------------------------

    def new_state(self) -> StreamState:
        return StreamState(self)

    def forward_chunk(self, state: StreamState, features: np.ndarray) -> np.ndarray:
        """Push a chunk of feature frames, get newly available emission rows.

        Concatenating outputs over any chunk partition matches forward_full
        within float tolerance; frame indices stay globally consistent.
        """
        self._check_state(state)
        x = np.asarray(features, dtype=np.float32)
        if x.size and x.shape[1] != self.spec.width:
            raise SpecError(f"features have shape {x.shape}, expected (T, {self.spec.width})")
        if x.ndim != 2:
            x = x.reshape(0, self.spec.width)
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, ConvStageSpec):
                x = self._conv_stage(i, x, state.layer_states[i])
            else:
                x = self._tds_block(i, x, state.layer_states[i])
        return self._emit(x)

    def flush(self, state: StreamState) -> np.ndarray:
        """Drain every layer's right padding at end of stream.

        Each layer receives its own right zero-padding after its full real
        input, exactly as in the offline pass, so close-after-stream equals
        the offline pipeline.
        """
        self._check_state(state)
        emitted: list[np.ndarray] = []
        n_layers = len(self.spec.layers)
        for i in range(n_layers):
            x = self._flush_layer(i, state.layer_states[i])
            for j in range(i + 1, n_layers):
                layer = self.spec.layers[j]
                if isinstance(layer, ConvStageSpec):
                    x = self._conv_stage(j, x, state.layer_states[j])
                else:
                    x = self._tds_block(j, x, state.layer_states[j])
            if x.size:
                emitted.append(self._emit(x))
        if not emitted:
            return np.zeros((0, self.spec.n_tokens), dtype=np.float32)
        return np.concatenate(emitted)

    # -- layer pieces --------------------------------------------------------

    def _check_state(self, state: StreamState) -> None:
        if state.model_id != id(self):
            raise SpecError("stream state was created by a different model")

    def _conv_stage(self, i: int, x: np.ndarray, state) -> np.ndarray:
        w = self.weights
        if state is None:
            y = kernels.conv1d_forward(
                self.conv_specs[i], w[f"layers.{i}.conv.weight"], w[f"layers.{i}.conv.bias"], x
            )
        else:
            y, _ = kernels.conv1d_forward(
                self.conv_specs[i],
                w[f"layers.{i}.conv.weight"],
                w[f"layers.{i}.conv.bias"],
                x,
                state,
            )
        return kernels.relu(y)

    def _tds_block(self, i: int, x: np.ndarray, state: _TdsState | None) -> np.ndarray:
        w = self.weights
        if state is None:
            conv_out = kernels.conv1d_forward(
                self.conv_specs[i], w[f"layers.{i}.conv.weight"], w[f"layers.{i}.conv.bias"], x
            )
            resid = x
        else:
            state.queue(x)
            conv_out, _ = kernels.conv1d_forward(
                self.conv_specs[i],
                w[f"layers.{i}.conv.weight"],
                w[f"layers.{i}.conv.bias"],
                x,
                state.conv,
            )
            resid = state.take(conv_out.shape[0])
        return self._tds_tail(i, resid, conv_out)

    def _tds_tail(self, i: int, resid: np.ndarray, conv_out: np.ndarray) -> np.ndarray:
        if not conv_out.size:
            return conv_out
        w = self.weights
        ln1 = LayerNormParams(float(w[f"layers.{i}.ln1.g"]), float(w[f"layers.{i}.ln1.b"]))
        ln2 = LayerNormParams(float(w[f"layers.{i}.ln2.g"]), float(w[f"layers.{i}.ln2.b"]))
        x = kernels.layernorm(ln1, resid + kernels.relu(conv_out))
        z = kernels.relu(kernels.linear(w[f"layers.{i}.lin1.weight"], w[f"layers.{i}.lin1.bias"], x))
        z = kernels.linear(w[f"layers.{i}.lin2.weight"], w[f"layers.{i}.lin2.bias"], z)
        return kernels.layernorm(ln2, x + z)

    def _flush_layer(self, i: int, state) -> np.ndarray:
        w = self.weights
        layer = self.spec.layers[i]
        if isinstance(layer, ConvStageSpec):
            out = kernels.conv1d_flush(
                self.conv_specs[i], w[f"layers.{i}.conv.weight"], w[f"layers.{i}.conv.bias"], state
            )
            return kernels.relu(out)
        conv_out = kernels.conv1d_flush(
            self.conv_specs[i],
            w[f"layers.{i}.conv.weight"],
            w[f"layers.{i}.conv.bias"],
            state.conv,
        )
        resid = state.take(conv_out.shape[0]) if conv_out.size else conv_out
        return self._tds_tail(i, resid, conv_out)

    def _emit(self, x: np.ndarray) -> np.ndarray:
        if not x.size:
            return np.zeros((0, self.spec.n_tokens), dtype=np.float32)
        logits = kernels.linear(self.weights["final.weight"], self.weights["final.bias"], x)
        return kernels.log_softmax(logits)


def build_model(spec: ModelSpec, weights: dict[str, np.ndarray]) -> Model:
    """Validate weight shapes against the spec and return an executable model."""
    return Model(spec, weights)


def reference_model_spec(n_tokens: int = 5000) -> ModelSpec:
    """The shipped full-scale configuration.

    Aggregates: total subsampling 8 (all in the frontend conv), future context
    250 ms, receptive field ~9.7 s, ~109.0 M parameters. Per-layer kernel and
    lookahead choices are this repo's; only the aggregates are externally
    constrained.
    """
    layers: list[LayerSpec] = [ConvStageSpec(1, 15, kernel_width=61, stride=8, right_pad=1)]
    plan = [(15, 13, 2), (19, 11, 3), (23, 7, 4), (27, 5, 5)]
    bridges = {15: (19, 9), 19: (23, 7), 23: (27, 3)}
    for gi, (mult, kw, blocks) in enumerate(plan):
        for b in range(blocks):
            # one frame of lookahead on the first block of groups 1-3
            r_pad = 1 if (b == 0 and gi < 3) else 0
            layers.append(TdsBlockSpec(mult, kw, right_pad=r_pad))
        if mult in bridges:
            nxt, kw_bridge = bridges[mult]
            layers.append(ConvStageSpec(mult, nxt, kernel_width=kw_bridge, stride=1, right_pad=0))
    return ModelSpec(width=80, n_tokens=n_tokens, layers=tuple(layers))
