"""Sequential conv networks: forward pass, FLOPs accounting and (de)serialization."""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .container import read_container, write_container
from .convcore import (
    RegularConvLayer,
    SeparableConvLayer,
    apply_layer,
    as_activation,
    output_hw,
)
from .errors import FormatError, ShapeError

ACTIVATIONS = ("identity", "relu")
MODEL_FORMAT = "dwd-model"


@dataclass(frozen=True, eq=False)
class NetworkModel:
    layers: Tuple
    activations: Tuple[str, ...]
    input_shape: Tuple[int, int, int]
    name: str = "model"

    def __post_init__(self):
        layers = tuple(self.layers)
        acts = tuple(self.activations)
        if not layers:
            raise ShapeError("a model needs at least one layer")
        if len(acts) != len(layers):
            raise ShapeError(f"{len(layers)} layers but {len(acts)} activation tags")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {a!r}; expected one of {ACTIVATIONS}")
        for layer in layers:
            if not isinstance(layer, (RegularConvLayer, SeparableConvLayer)):
                raise ShapeError(f"unsupported layer type {type(layer).__name__}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.layer_shapes()  # validates channel and spatial compatibility

    def __len__(self):
        return len(self.layers)

    def layer_shapes(self, input_shape=None):
        """``[(in_shape, out_shape), ...]`` per layer, each a ``(c, H, W)`` triple."""
        c, H, W = input_shape or self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            if layer.in_channels != c:
                raise ShapeError(f"layer {i} expects {layer.in_channels} channels, receives {c}")
            Ho, Wo = output_hw((H, W), layer.kernel, layer.stride, layer.padding)
            shapes.append(((c, H, W), (layer.out_channels, Ho, Wo)))
            c, H, W = layer.out_channels, Ho, Wo
        return shapes

    @property
    def output_shape(self):
        return self.layer_shapes()[-1][1]

    def replace(self, layers, activations, name=None):
        return NetworkModel(layers, activations, self.input_shape, name or self.name)


def _activate(y, tag):
    if tag == "relu":
        return np.maximum(y, 0, dtype=np.float32)
    return y


def _check_signature(model, x):
    x = as_activation(x)
    if tuple(x.shape[1:]) != model.input_shape:
        raise ShapeError(f"input signature {tuple(x.shape[1:])} does not match model {model.input_shape}")
    return x


def forward(model: NetworkModel, x):
    x = _check_signature(model, x)
    for layer, tag in zip(model.layers, model.activations):
        x = _activate(apply_layer(x, layer), tag)
    return x


def layer_input(model: NetworkModel, x, layer_id):
    """Activations entering ``layer_id``, after the preceding nonlinearity."""
    if not 0 <= layer_id < len(model.layers):
        raise ShapeError(f"layer {layer_id} out of range for a {len(model.layers)}-layer model")
    x = _check_signature(model, x)
    for layer, tag in zip(model.layers[:layer_id], model.activations[:layer_id]):
        x = _activate(apply_layer(x, layer), tag)
    return x


# -- FLOPs -------------------------------------------------------------------


@dataclass
class LayerFlops:
    index: int
    kind: str
    per_position: int
    positions: int

    @property
    def total(self):
        return self.per_position * self.positions


@dataclass
class FlopsReport:
    """Multiply counts. ``speedup`` is ``total / other_total`` when a second model is given."""

    layers: List[LayerFlops]
    total: int
    other_layers: Optional[List[LayerFlops]] = None
    other_total: Optional[int] = None

    @property
    def speedup(self):
        if self.other_total is None:
            return None
        return self.total / self.other_total


def _layer_flops(model, input_shape):
    rows = []
    for i, (layer, (_, out)) in enumerate(zip(model.layers, model.layer_shapes(input_shape))):
        kind = "separable" if isinstance(layer, SeparableConvLayer) else "regular"
        rows.append(LayerFlops(i, kind, layer.flops_per_position(), out[1] * out[2]))
    return rows


def flops_and_speedup(ref: NetworkModel, other: Optional[NetworkModel] = None, input_shape=None) -> FlopsReport:
    sig = tuple(input_shape) if input_shape is not None else ref.input_shape
    rows = _layer_flops(ref, sig)
    report = FlopsReport(layers=rows, total=sum(r.total for r in rows))
    if other is not None:
        orows = _layer_flops(other, sig)
        report.other_layers = orows
        report.other_total = sum(r.total for r in orows)
    return report


# -- serialization -----------------------------------------------------------


def serialize_model(model: NetworkModel, path):
    arrays, entries = {}, []
    for i, (layer, tag) in enumerate(zip(model.layers, model.activations)):
        entry = {"activation": tag, "stride": list(layer.stride), "padding": list(layer.padding)}
        if isinstance(layer, SeparableConvLayer):
            entry["kind"] = "separable"
            arrays[f"{i}.depthwise"] = layer.depthwise
            arrays[f"{i}.pointwise"] = layer.pointwise
        else:
            entry["kind"] = "regular"
            arrays[f"{i}.weights"] = layer.weights
        entry["bias"] = layer.bias is not None
        if layer.bias is not None:
            arrays[f"{i}.bias"] = layer.bias
        entries.append(entry)
    body = {"name": model.name, "input_shape": list(model.input_shape), "layers": entries}
    write_container(path, MODEL_FORMAT, body, arrays)


def deserialize_model(path) -> NetworkModel:
    manifest, arrays = read_container(path, MODEL_FORMAT)
    try:
        layers, acts = [], []
        for i, entry in enumerate(manifest["layers"]):
            bias = arrays[f"{i}.bias"] if entry["bias"] else None
            common = dict(stride=tuple(entry["stride"]), padding=tuple(entry["padding"]), bias=bias)
            if entry["kind"] == "separable":
                layer = SeparableConvLayer(arrays[f"{i}.depthwise"], arrays[f"{i}.pointwise"], **common)
            elif entry["kind"] == "regular":
                layer = RegularConvLayer(arrays[f"{i}.weights"], **common)
            else:
                raise FormatError(f"{path}: unknown layer kind {entry['kind']!r}")
            layers.append(layer)
            acts.append(entry["activation"])
        return NetworkModel(tuple(layers), tuple(acts), tuple(manifest["input_shape"]), manifest.get("name", "model"))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed model manifest: {exc}") from exc
    except ShapeError as exc:
        raise FormatError(f"{path}: inconsistent model: {exc}") from exc
