"""Minimal differentiable feedforward networks producing per-label energies.

Layers are described declaratively by :class:`NetworkSpec`; parameters live in
a single flat float64 vector with a deterministic layout.  ``forward`` maps a
batch of inputs to an m-by-K energy table and ``backward`` computes the exact
reverse-mode gradient of any linear functional of that table with respect to
the parameter vector.  All arithmetic is 64-bit.
"""

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"MPTF"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Dense:
    """Affine layer: flat features in, flat features out."""

    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(
                f"dense dimensions must be positive, got ({self.in_dim}, {self.out_dim})"
            )


@dataclass(frozen=True)
class Conv2d:
    """Valid (unpadded) 2-D convolution over channels-first feature maps."""

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_size", "stride"):
            if getattr(self, field) < 1:
                raise ValueError(f"conv2d {field} must be positive, got {getattr(self, field)}")


@dataclass(frozen=True)
class CRelu:
    """Concatenated ReLU: emits [max(x, 0), max(-x, 0)], doubling the feature axis."""


@dataclass(frozen=True)
class Flatten:
    """Collapse all feature axes into one."""


Layer = Dense | Conv2d | CRelu | Flatten


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: ordered layers, input shape, and label count K.

    Construction validates the full shape chain, so an instance that exists is
    always internally consistent and ends in exactly ``num_labels`` outputs.
    """

    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    num_labels: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "num_labels", int(self.num_labels))
        if self.num_labels < 2:
            raise ValueError(f"num_labels must be at least 2, got {self.num_labels}")
        if not self.input_shape or any(d < 1 for d in self.input_shape):
            raise ValueError(f"input_shape must be positive integers, got {self.input_shape}")
        shapes = layer_output_shapes(self)
        if shapes[-1] != (self.num_labels,):
            raise ValueError(
                f"final layer produces shape {shapes[-1]}, expected ({self.num_labels},)"
            )


def layer_output_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Propagate the per-example shape through every layer; index 0 is the input."""
    shapes = [spec.input_shape]
    for i, layer in enumerate(spec.layers):
        shape = shapes[-1]
        if isinstance(layer, Dense):
            if len(shape) != 1 or shape[0] != layer.in_dim:
                raise ValueError(
                    f"layer {i}: dense({layer.in_dim}, {layer.out_dim}) cannot consume shape {shape}"
                )
            shapes.append((layer.out_dim,))
        elif isinstance(layer, Conv2d):
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise ValueError(
                    f"layer {i}: conv2d expects ({layer.in_channels}, H, W), got {shape}"
                )
            _, h, w = shape
            k, s = layer.kernel_size, layer.stride
            if h < k or w < k:
                raise ValueError(f"layer {i}: kernel {k} exceeds feature map {h}x{w}")
            shapes.append((layer.out_channels, (h - k) // s + 1, (w - k) // s + 1))
        elif isinstance(layer, CRelu):
            shapes.append((2 * shape[0],) + shape[1:])
        elif isinstance(layer, Flatten):
            shapes.append((int(np.prod(shape)),))
        else:
            raise ValueError(f"layer {i}: unknown layer {layer!r}")
    return shapes


def _layer_param_shapes(layer: Layer) -> list[tuple[int, ...]]:
    if isinstance(layer, Dense):
        return [(layer.in_dim, layer.out_dim), (layer.out_dim,)]
    if isinstance(layer, Conv2d):
        k = layer.kernel_size
        return [(layer.out_channels, layer.in_channels, k, k), (layer.out_channels,)]
    return []


def param_count(spec: NetworkSpec) -> int:
    return sum(
        int(np.prod(s)) for layer in spec.layers for s in _layer_param_shapes(layer)
    )


def _param_views(spec: NetworkSpec, vec: np.ndarray) -> list[list[np.ndarray]]:
    """Zero-copy reshaped views into ``vec``, one list of arrays per layer."""
    views = []
    offset = 0
    for layer in spec.layers:
        layer_views = []
        for shape in _layer_param_shapes(layer):
            n = int(np.prod(shape))
            layer_views.append(vec[offset : offset + n].reshape(shape))
            offset += n
        views.append(layer_views)
    return views


def init_parameters(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Deterministic init: weights uniform on +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(int(seed) % (1 << 64))
    vec = np.zeros(param_count(spec), dtype=np.float64)
    for layer, views in zip(spec.layers, _param_views(spec, vec)):
        if isinstance(layer, Dense):
            bound = 1.0 / np.sqrt(layer.in_dim)
            views[0][...] = rng.uniform(-bound, bound, size=views[0].shape)
        elif isinstance(layer, Conv2d):
            bound = 1.0 / np.sqrt(layer.in_channels * layer.kernel_size**2)
            views[0][...] = rng.uniform(-bound, bound, size=views[0].shape)
    return vec


def crelu(v) -> np.ndarray:
    """Concatenated ReLU of a flat sequence: [max(v, 0), max(-v, 0)]."""
    v = np.asarray(v, dtype=np.float64)
    return np.concatenate([np.maximum(v, 0.0), np.maximum(-v, 0.0)])


def _check_params(spec: NetworkSpec, params) -> np.ndarray:
    p = np.asarray(params, dtype=np.float64)
    expected = param_count(spec)
    if p.shape != (expected,):
        raise ValueError(f"parameter vector has shape {p.shape}, expected ({expected},)")
    return p


def _check_inputs(spec: NetworkSpec, batch_inputs) -> np.ndarray:
    x = np.asarray(batch_inputs, dtype=np.float64)
    if x.ndim != 1 + len(spec.input_shape) or x.shape[1:] != spec.input_shape:
        raise ValueError(
            f"batch inputs have shape {x.shape}, expected (m, {', '.join(map(str, spec.input_shape))})"
        )
    if x.size and float(np.abs(x).max()) > 1.0:
        warnings.warn("inputs fall outside the prior support [-1, 1]", stacklevel=3)
    return x


def _crelu_backward(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Gradient at exactly 0 routes through the positive half.
    half = x.shape[1]
    g_pos, g_neg = g[:, :half], g[:, half:]
    return np.where(x >= 0.0, g_pos, -g_neg)


def _conv_windows(x: np.ndarray, layer: Conv2d) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(
        x, (layer.kernel_size, layer.kernel_size), axis=(2, 3)
    )
    return win[:, :, :: layer.stride, :: layer.stride]


def _forward_trace(spec, params, x):
    """Return (per-layer inputs, final energy table)."""
    views = _param_views(spec, params)
    acts = []
    a = x
    for layer, layer_views in zip(spec.layers, views):
        acts.append(a)
        if isinstance(layer, Dense):
            a = a @ layer_views[0] + layer_views[1]
        elif isinstance(layer, Conv2d):
            win = _conv_windows(a, layer)
            a = np.einsum("ocuv,mchwuv->mohw", layer_views[0], win, optimize=True)
            a = a + layer_views[1][None, :, None, None]
        elif isinstance(layer, CRelu):
            a = np.concatenate([np.maximum(a, 0.0), np.maximum(-a, 0.0)], axis=1)
        elif isinstance(layer, Flatten):
            a = a.reshape(a.shape[0], -1)
    return acts, a


def forward(spec: NetworkSpec, params, batch_inputs) -> np.ndarray:
    """Evaluate the network on a batch, returning the m-by-K energy table."""
    p = _check_params(spec, params)
    x = _check_inputs(spec, batch_inputs)
    return _forward_trace(spec, p, x)[1]


def backward(spec: NetworkSpec, params, batch_inputs, upstream) -> np.ndarray:
    """Exact gradient of sum_{i,y} upstream[i,y] * E[i,y] w.r.t. the parameters."""
    p = _check_params(spec, params)
    x = _check_inputs(spec, batch_inputs)
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != (x.shape[0], spec.num_labels):
        raise ValueError(
            f"upstream has shape {u.shape}, expected ({x.shape[0]}, {spec.num_labels})"
        )
    acts, _ = _forward_trace(spec, p, x)
    grad = np.zeros_like(p)
    gviews = _param_views(spec, grad)
    g = u
    for layer, a_in, layer_gviews, layer_views in zip(
        reversed(spec.layers), reversed(acts), reversed(gviews), reversed(_param_views(spec, p))
    ):
        if isinstance(layer, Dense):
            layer_gviews[0][...] = a_in.T @ g
            layer_gviews[1][...] = g.sum(axis=0)
            g = g @ layer_views[0].T
        elif isinstance(layer, Conv2d):
            win = _conv_windows(a_in, layer)
            layer_gviews[0][...] = np.einsum("mohw,mchwuv->ocuv", g, win, optimize=True)
            layer_gviews[1][...] = g.sum(axis=(0, 2, 3))
            k, s = layer.kernel_size, layer.stride
            h_out, w_out = g.shape[2], g.shape[3]
            dx = np.zeros_like(a_in)
            for u_off in range(k):
                for v_off in range(k):
                    dx[:, :, u_off : u_off + s * h_out : s, v_off : v_off + s * w_out : s] += (
                        np.einsum("mohw,oc->mchw", g, layer_views[0][:, :, u_off, v_off])
                    )
            g = dx
        elif isinstance(layer, CRelu):
            g = _crelu_backward(a_in, g)
        elif isinstance(layer, Flatten):
            g = g.reshape(a_in.shape)
    return grad


_LAYER_TAGS = {Dense: 1, Conv2d: 2, CRelu: 3, Flatten: 4}


def save_checkpoint(path, spec: NetworkSpec, params) -> None:
    """Write spec + parameters in the binary checkpoint format (bit-exact round trip)."""
    p = _check_params(spec, params)
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(spec.input_shape))
    for d in spec.input_shape:
        blob += struct.pack("<I", d)
    blob += struct.pack("<I", spec.num_labels)
    blob += struct.pack("<I", len(spec.layers))
    for layer in spec.layers:
        blob += struct.pack("<I", _LAYER_TAGS[type(layer)])
        if isinstance(layer, Dense):
            blob += struct.pack("<II", layer.in_dim, layer.out_dim)
        elif isinstance(layer, Conv2d):
            blob += struct.pack(
                "<IIII", layer.in_channels, layer.out_channels, layer.kernel_size, layer.stride
            )
    blob += struct.pack("<Q", p.size)
    blob += p.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ValueError("checkpoint truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out


def load_checkpoint(path) -> tuple[NetworkSpec, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic {data[:4]!r})")
    r = _Reader(data)
    r.pos = 4
    (version,) = r.take("<I")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (ndim,) = r.take("<I")
    input_shape = tuple(r.take("<" + "I" * ndim)) if ndim else ()
    (num_labels,) = r.take("<I")
    (n_layers,) = r.take("<I")
    layers: list[Layer] = []
    for _ in range(n_layers):
        (tag,) = r.take("<I")
        if tag == 1:
            layers.append(Dense(*r.take("<II")))
        elif tag == 2:
            layers.append(Conv2d(*r.take("<IIII")))
        elif tag == 3:
            layers.append(CRelu())
        elif tag == 4:
            layers.append(Flatten())
        else:
            raise ValueError(f"unknown layer tag {tag}")
    spec = NetworkSpec(tuple(layers), input_shape, num_labels)
    (count,) = r.take("<Q")
    if count != param_count(spec):
        raise ValueError(
            f"checkpoint declares {count} parameters, spec implies {param_count(spec)}"
        )
    if r.pos + 8 * count > len(data):
        raise ValueError("checkpoint truncated")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=r.pos).astype(np.float64)
    return spec, params


_LAYER_KINDS = {"dense": Dense, "conv2d": Conv2d, "crelu": CRelu, "flatten": Flatten}


def spec_from_config(cfg: dict) -> NetworkSpec:
    """Build a NetworkSpec from its JSON dict form (see README for the schema)."""
    layers = []
    for entry in cfg["layers"]:
        kind = entry.get("kind")
        if kind not in _LAYER_KINDS:
            raise ValueError(f"unknown layer kind {kind!r}")
        fields = {k: v for k, v in entry.items() if k != "kind"}
        layers.append(_LAYER_KINDS[kind](**fields))
    return NetworkSpec(tuple(layers), tuple(cfg["input_shape"]), cfg["num_labels"])


def spec_to_config(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            layers.append({"kind": "dense", "in_dim": layer.in_dim, "out_dim": layer.out_dim})
        elif isinstance(layer, Conv2d):
            layers.append(
                {
                    "kind": "conv2d",
                    "in_channels": layer.in_channels,
                    "out_channels": layer.out_channels,
                    "kernel_size": layer.kernel_size,
                    "stride": layer.stride,
                }
            )
        elif isinstance(layer, CRelu):
            layers.append({"kind": "crelu"})
        elif isinstance(layer, Flatten):
            layers.append({"kind": "flatten"})
    return {
        "input_shape": list(spec.input_shape),
        "num_labels": spec.num_labels,
        "layers": layers,
    }
