"""Binary model file: magic "TDSM", u32 version, JSON header, raw f32 tensors.

The header is a length-prefixed UTF-8 JSON document carrying the layer spec
and the ordered tensor table (name + shape); tensor data follows as
little-endian float32, row-major, in table order. Round-tripping a model
reproduces forward outputs bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import InputError
from .model import (
    ConvStageSpec,
    Model,
    ModelSpec,
    TdsBlockSpec,
    tensor_schema,
)

MAGIC = b"TDSM"
VERSION = 1


def spec_to_dict(spec: ModelSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, ConvStageSpec):
            layers.append(
                {
                    "type": "conv",
                    "in_mult": layer.in_mult,
                    "out_mult": layer.out_mult,
                    "kernel_width": layer.kernel_width,
                    "stride": layer.stride,
                    "right_pad": layer.right_pad,
                }
            )
        else:
            layers.append(
                {
                    "type": "tds",
                    "channel_mult": layer.channel_mult,
                    "kernel_width": layer.kernel_width,
                    "right_pad": layer.right_pad,
                }
            )
    return {
        "width": spec.width,
        "n_tokens": spec.n_tokens,
        "feature_stride_ms": spec.feature_stride_ms,
        "layers": layers,
    }


def spec_from_dict(d: dict) -> ModelSpec:
    layers: list = []
    for rec in d["layers"]:
        if rec["type"] == "conv":
            layers.append(
                ConvStageSpec(
                    rec["in_mult"],
                    rec["out_mult"],
                    rec["kernel_width"],
                    rec["stride"],
                    rec["right_pad"],
                )
            )
        elif rec["type"] == "tds":
            layers.append(
                TdsBlockSpec(rec["channel_mult"], rec["kernel_width"], rec["right_pad"])
            )
        else:
            raise InputError(f"unknown layer record type {rec['type']!r}")
    return ModelSpec(
        width=d["width"],
        n_tokens=d["n_tokens"],
        layers=tuple(layers),
        feature_stride_ms=d.get("feature_stride_ms", 10),
    )


def save_model(path, model: Model) -> None:
    schema = tensor_schema(model.spec)
    header = {
        "spec": spec_to_dict(model.spec),
        "tensors": [{"name": n, "shape": list(s)} for n, s in schema],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, _ in schema:
            fh.write(np.ascontiguousarray(model.weights[name], dtype="<f4").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise InputError(f"{path}: not a model file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise InputError(f"{path}: unsupported model file version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        spec = spec_from_dict(header["spec"])
        weights: dict[str, np.ndarray] = {}
        for rec in header["tensors"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(count * 4)
            if len(data) != count * 4:
                raise InputError(f"{path}: truncated tensor {rec['name']}")
            arr = np.frombuffer(data, dtype="<f4").reshape(shape)
            weights[rec["name"]] = arr if shape else np.float32(arr)
    return Model(spec, weights)
