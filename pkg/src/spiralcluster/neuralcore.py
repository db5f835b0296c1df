"""Minimal differentiable layers with exact reverse-mode gradients.

Strided 2-D convolution, transposed convolution, dense layers,
leaky-ReLU / sigmoid activations, softmax, mean-squared error, and a
bias-corrected Adam optimizer - everything needed to train small
convolutional autoencoders on the CPU, in float64, deterministically.

Tensors are numpy arrays; images are laid out (batch, height, width,
channels).  Convolutions use "same" padding, so a stride-2 layer maps
spatial extent s to ceil(s/2) and its transposed twin maps it back to
s * 2 (exact round trip for powers of two).

``forward`` returns the activations cache needed by ``backward``;
layers are stateless between calls apart from their parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import fileio
from .errors import ContractError


@dataclass
class LayerSpec:
    """Declarative layer description used to build networks."""

    kind: str                      # conv | deconv | dense | lrelu | sigmoid | flatten | reshape
    kernel: int = 3
    stride: int = 1
    filters: int = 1               # conv/deconv filters; dense output units
    lrelu_slope: float = 0.01
    shape: tuple[int, ...] | None = None   # reshape target (excluding batch)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "kernel": self.kernel,
            "stride": self.stride,
            "filters": self.filters,
            "lrelu_slope": self.lrelu_slope,
            "shape": list(self.shape) if self.shape else None,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LayerSpec":
        return LayerSpec(
            kind=doc["kind"],
            kernel=int(doc.get("kernel", 3)),
            stride=int(doc.get("stride", 1)),
            filters=int(doc.get("filters", 1)),
            lrelu_slope=float(doc.get("lrelu_slope", 0.01)),
            shape=tuple(doc["shape"]) if doc.get("shape") else None,
        )


@dataclass
class AdamConfig:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.eta <= 0:
            raise ContractError("eta must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractError("beta1, beta2 must lie in (0, 1)")


def _same_pads(extent: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(out_extent, pad_before, pad_after) for "same" padding."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    before = total // 2
    return out, before, total - before


def _im2col(x: np.ndarray, kernel: int, stride: int) -> tuple[np.ndarray, tuple]:
    """(B,H,W,C) -> columns (B,OH,OW,kernel*kernel*C) plus geometry."""
    b, h, w, c = x.shape
    oh, pt, pb = _same_pads(h, kernel, stride)
    ow, pl, pr = _same_pads(w, kernel, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    win = win[:, ::stride, ::stride]                      # (B,OH,OW,C,kh,kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    geometry = (xp.shape, (pt, pb, pl, pr), oh, ow)
    return cols.reshape(b, oh, ow, kernel * kernel * c), geometry


def _col2im(cols: np.ndarray, geometry: tuple, kernel: int, stride: int, channels: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto the padded image."""
    padded_shape, (pt, pb, pl, pr), oh, ow = geometry
    b = cols.shape[0]
    cols = cols.reshape(b, oh, ow, kernel, kernel, channels)
    out = np.zeros(padded_shape)
    for i in range(kernel):
        for j in range(kernel):
            out[:, i : i + (oh - 1) * stride + 1 : stride,
                j : j + (ow - 1) * stride + 1 : stride, :] += cols[:, :, :, i, j, :]
    h_end = out.shape[1] - pb
    w_end = out.shape[2] - pr
    return out[:, pt:h_end, pl:w_end, :]


class Conv2D:
    """Strided "same" convolution; weights (kernel*kernel*c_in, filters)."""

    def __init__(self, w: np.ndarray, b: np.ndarray, stride: int, kernel: int):
        self.w, self.b, self.stride, self.kernel = w, b, stride, kernel

    @property
    def params(self) -> dict:
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] * self.kernel**2 != self.w.shape[0]:
            raise ContractError(
                f"conv expects (B,H,W,{self.w.shape[0] // self.kernel**2}), got {x.shape}"
            )
        cols, geometry = _im2col(x, self.kernel, self.stride)
        y = cols @ self.w + self.b
        return y, (cols, geometry, x.shape)

    def backward(self, cache, gy):
        cols, geometry, x_shape = cache
        k = self.w.shape[0]
        gw = cols.reshape(-1, k).T @ gy.reshape(-1, gy.shape[-1])
        gb = gy.sum(axis=(0, 1, 2))
        gcols = gy @ self.w.T
        gx = _col2im(gcols, geometry, self.kernel, self.stride, x_shape[3])
        return gx, {"w": gw, "b": gb}


class Deconv2D:
    """Transposed "same" convolution; maps extent s to s*stride.

    Weights (kernel*kernel*c_out, c_in): the layer is the exact adjoint
    of a Conv2D from the larger grid back to the smaller one.
    """

    def __init__(self, w: np.ndarray, b: np.ndarray, stride: int, kernel: int):
        self.w, self.b, self.stride, self.kernel = w, b, stride, kernel

    @property
    def params(self) -> dict:
        return {"w": self.w, "b": self.b}

    @property
    def c_out(self) -> int:
        return self.w.shape[0] // self.kernel**2

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.w.shape[1]:
            raise ContractError(f"deconv expects (B,H,W,{self.w.shape[1]}), got {x.shape}")
        b, h, w_in, _ = x.shape
        # Geometry of the equivalent forward conv on the s-times-larger grid.
        oh, pt, pb = _same_pads(h * self.stride, self.kernel, self.stride)
        ow, pl, pr = _same_pads(w_in * self.stride, self.kernel, self.stride)
        padded = (b, h * self.stride + pt + pb, w_in * self.stride + pl + pr, self.c_out)
        geometry = (padded, (pt, pb, pl, pr), oh, ow)
        gcols = x @ self.w.T
        y = _col2im(gcols, geometry, self.kernel, self.stride, self.c_out) + self.b
        return y, (x, geometry)

    def backward(self, cache, gy):
        x, _ = cache
        cols, _ = _im2col(gy, self.kernel, self.stride)
        k = self.w.shape[0]
        gx = cols @ self.w
        gw = cols.reshape(-1, k).T @ x.reshape(-1, x.shape[-1])
        gb = gy.sum(axis=(0, 1, 2))
        return gx, {"w": gw, "b": gb}


class Dense:
    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w, self.b = w, b

    @property
    def params(self) -> dict:
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ContractError(f"dense expects (B,{self.w.shape[0]}), got {x.shape}")
        return x @ self.w + self.b, x

    def backward(self, cache, gy):
        x = cache
        return gy @ self.w.T, {"w": x.T @ gy, "b": gy.sum(axis=0)}


class LeakyReLU:
    def __init__(self, slope: float = 0.01):
        self.slope = slope

    params: dict = {}

    def forward(self, x):
        return np.where(x > 0, x, self.slope * x), x > 0

    def backward(self, cache, gy):
        return np.where(cache, gy, self.slope * gy), {}


class Sigmoid:
    params: dict = {}

    def forward(self, x):
        y = expit(x)
        return y, y

    def backward(self, cache, gy):
        y = cache
        return gy * y * (1.0 - y), {}


class Flatten:
    params: dict = {}

    def forward(self, x):
        return x.reshape(len(x), -1), x.shape

    def backward(self, cache, gy):
        return gy.reshape(cache), {}


class Reshape:
    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape

    params: dict = {}

    def forward(self, x):
        return x.reshape((len(x),) + self.shape), x.shape

    def backward(self, cache, gy):
        return gy.reshape(cache), {}


class Network:
    """An ordered chain of layers with explicit activation caches."""

    def __init__(self, layers: list, specs: list[LayerSpec] | None = None):
        self.layers = layers
        self.specs = specs or []

    def forward(self, x: np.ndarray):
        caches = []
        out = x
        for i, layer in enumerate(self.layers):
            try:
                out, cache = layer.forward(out)
            except ContractError as err:
                raise ContractError(f"layer {i} ({type(layer).__name__}): {err}") from None
            caches.append(cache)
        return out, caches

    def backward(self, caches: list, gy: np.ndarray):
        if len(caches) != len(self.layers):
            raise ContractError(
                f"stale cache: {len(caches)} entries for {len(self.layers)} layers"
            )
        grads: list[dict] = [None] * len(self.layers)
        g = gy
        for i in range(len(self.layers) - 1, -1, -1):
            g, grads[i] = self.layers[i].backward(caches[i], g)
        return g, grads

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in declaration order (per layer: w, b)."""
        out = []
        for layer in self.layers:
            out.extend(layer.params.values())
        return out

    def grad_arrays(self, grads: list[dict]) -> list[np.ndarray]:
        out = []
        for layer_grads in grads:
            out.extend(layer_grads.values())
        return out

    def set_parameters(self, arrays: list[np.ndarray]) -> None:
        i = 0
        for layer in self.layers:
            for key in layer.params:
                layer.params[key][...] = arrays[i]
                i += 1
        if i != len(arrays):
            raise ContractError(f"parameter count mismatch: {i} slots, {len(arrays)} arrays")


def output_shape(specs: list[LayerSpec], input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape (excluding batch) after running the spec chain."""
    shape = tuple(input_shape)
    for spec in specs:
        if spec.kind == "conv":
            h, w = shape[0], shape[1]
            shape = (-(-h // spec.stride), -(-w // spec.stride), spec.filters)
        elif spec.kind == "deconv":
            shape = (shape[0] * spec.stride, shape[1] * spec.stride, spec.filters)
        elif spec.kind == "dense":
            shape = (spec.filters,)
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "reshape":
            shape = tuple(spec.shape)
        elif spec.kind in ("lrelu", "sigmoid"):
            pass
        else:
            raise ContractError(f"unknown layer kind {spec.kind!r}")
    return shape


def build_network(
    specs: list[LayerSpec], input_shape: tuple[int, ...], rng: np.random.Generator
) -> Network:
    """Instantiate layers with seeded He-style uniform fan-in init."""

    def he_uniform(shape, fan_in):
        limit = np.sqrt(6.0 / max(1, fan_in))
        return rng.uniform(-limit, limit, size=shape)

    layers = []
    shape = tuple(input_shape)
    for spec in specs:
        if spec.kind == "conv":
            c_in = shape[2]
            w = he_uniform((spec.kernel**2 * c_in, spec.filters), spec.kernel**2 * c_in)
            layers.append(Conv2D(w, np.zeros(spec.filters), spec.stride, spec.kernel))
        elif spec.kind == "deconv":
            c_in = shape[2]
            fan_in = max(1, spec.kernel**2 * c_in // spec.stride**2)
            w = he_uniform((spec.kernel**2 * spec.filters, c_in), fan_in)
            layers.append(Deconv2D(w, np.zeros(spec.filters), spec.stride, spec.kernel))
        elif spec.kind == "dense":
            d_in = shape[0]
            layers.append(Dense(he_uniform((d_in, spec.filters), d_in), np.zeros(spec.filters)))
        elif spec.kind == "lrelu":
            layers.append(LeakyReLU(spec.lrelu_slope))
        elif spec.kind == "sigmoid":
            layers.append(Sigmoid())
        elif spec.kind == "flatten":
            layers.append(Flatten())
        elif spec.kind == "reshape":
            layers.append(Reshape(tuple(spec.shape)))
        else:
            raise ContractError(f"unknown layer kind {spec.kind!r}")
        shape = output_shape([spec], shape)
    return Network(layers, list(specs))


def mse(recon: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared differences over all elements."""
    if recon.shape != target.shape:
        raise ContractError(f"shape mismatch: {recon.shape} vs {target.shape}")
    diff = recon - target
    return float((diff * diff).mean())


def mse_grad(recon: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d mse / d recon."""
    if recon.shape != target.shape:
        raise ContractError(f"shape mismatch: {recon.shape} vs {target.shape}")
    return 2.0 * (recon - target) / recon.size


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_vjp(p: np.ndarray, gp: np.ndarray, axis: int = -1) -> np.ndarray:
    """Backpropagate through softmax given its output p and upstream gp."""
    inner = (gp * p).sum(axis=axis, keepdims=True)
    return p * (gp - inner)


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: list[np.ndarray]) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_update(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    step: int,
    config: AdamConfig,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam step; returns new params and moments."""
    if step < 1:
        raise ContractError("step must be >= 1")
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    b1, b2 = config.beta1, config.beta2
    new_params, new_m, new_v = [], [], []
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} != param shape {p.shape}")
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        m_hat = m2 / bc1
        v_hat = v2 / bc2
        new_params.append(p - config.eta * m_hat / (np.sqrt(v_hat) + config.epsilon))
        new_m.append(m2)
        new_v.append(v2)
    return new_params, AdamState(new_m, new_v)


def save_network(path, net: Network, header_extra: dict | None = None) -> None:
    """ATM1 checkpoint: spec list + shapes in the header, float32 payload."""
    params = net.parameters()
    header = {
        "architecture": [s.to_dict() for s in net.specs],
        "param_shapes": [list(p.shape) for p in params],
    }
    header.update(header_extra or {})
    fileio.write_model_blob(path, header, params)


def load_network(path, input_shape: tuple[int, ...]) -> tuple[Network, dict]:
    header, flat = fileio.read_model_blob(path)
    specs = [LayerSpec.from_dict(d) for d in header["architecture"]]
    net = build_network(specs, input_shape, np.random.default_rng(0))
    arrays = []
    offset = 0
    for shape in header["param_shapes"]:
        size = int(np.prod(shape)) if shape else 1
        arrays.append(flat[offset : offset + size].reshape(shape))
        offset += size
    if offset != flat.size:
        raise ContractError(f"checkpoint payload has {flat.size} values, expected {offset}")
    net.set_parameters(arrays)
    return net, header
