"""Layer catalog and a small DAG executor on top of the tensor engine.

Every layer kind used by the six networks has a forward rule here whose
adjoint comes from the primitive ops in :mod:`inkline.tensor`.  Layers own
their :class:`Parameter` objects (ids are "network/layer/name" paths) and are
plain callables; :class:`LayerGraph` strings specs together for the cases
where a static DAG is the natural description.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

LAYER_KINDS = (
    "conv1d",
    "conv2d",
    "linear",
    "relu",
    "leaky-relu",
    "avg-pool",
    "nearest-upsample",
    "blur",
    "adain",
    "additive-noise",
    "concat",
    "global-avg-pool",
    "softmax",
    "log-softmax",
)


@dataclass
class LayerSpec:
    """Declarative layer description: a kind plus its hyperparameters."""

    kind: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    """Base: a callable with zero or more owned parameters."""

    def __init__(self, name: str):
        self.name = name
        self.params: list[Parameter] = []

    def _param(self, suffix: str, data) -> Parameter:
        p = Parameter(f"{self.name}/{suffix}", data)
        self.params.append(p)
        return p

    def __call__(self, *inputs, rng=None) -> Tensor:
        raise NotImplementedError


class Conv1d(Layer):
    def __init__(self, name, cin, cout, k=3, padding="same", *, rng, dtype=np.float32, bias=True):
        super().__init__(name)
        self.padding = padding
        self.w = self._param("weight", he_normal(rng, (cout, cin, k), cin * k, dtype))
        self.b = self._param("bias", np.zeros(cout, dtype=dtype)) if bias else None

    def __call__(self, x, rng=None):
        return T.conv1d(x, self.w, self.b, padding=self.padding)


class Conv2d(Layer):
    def __init__(self, name, cin, cout, k=3, padding="same", *, rng, dtype=np.float32, bias=True):
        super().__init__(name)
        self.padding = padding
        kh, kw = (k, k) if isinstance(k, int) else k
        self.w = self._param("weight", he_normal(rng, (cout, cin, kh, kw), cin * kh * kw, dtype))
        self.b = self._param("bias", np.zeros(cout, dtype=dtype)) if bias else None

    def __call__(self, x, rng=None):
        return T.conv2d(x, self.w, self.b, padding=self.padding)


class SpectralConv2d(Conv2d):
    """Conv2d whose weight is divided by its estimated spectral norm.

    One power-iteration step per call; the norm is treated as a constant in
    the backward pass.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        cout = self.w.data.shape[0]
        self._u = np.random.default_rng(0).standard_normal(cout).astype(self.w.data.dtype)

    def __call__(self, x, rng=None):
        wmat = self.w.data.reshape(self.w.data.shape[0], -1)
        v = wmat.T @ self._u
        v /= np.linalg.norm(v) + 1e-12
        u = wmat @ v
        sigma = float(np.linalg.norm(u) + 1e-12)
        self._u = u / sigma
        w_sn = self.w * (1.0 / sigma)
        return T.conv2d(x, w_sn, self.b, padding=self.padding)


class Linear(Layer):
    def __init__(self, name, cin, cout, *, rng, dtype=np.float32, bias=True,
                 zero_init=False, bias_init=None):
        super().__init__(name)
        if zero_init:
            w = np.zeros((cout, cin), dtype=dtype)
        else:
            w = he_normal(rng, (cout, cin), cin, dtype)
        self.w = self._param("weight", w)
        if bias:
            b = np.zeros(cout, dtype=dtype) if bias_init is None else np.asarray(bias_init, dtype=dtype)
            self.b = self._param("bias", b)
        else:
            self.b = None

    def __call__(self, x, rng=None):
        y = T.matmul(self.w, x)
        return y + self.b if self.b is not None else y


class ReLU(Layer):
    def __call__(self, x, rng=None):
        return T.relu(x)


class LeakyReLU(Layer):
    def __init__(self, name, alpha=0.2):
        super().__init__(name)
        self.alpha = alpha

    def __call__(self, x, rng=None):
        return T.leaky_relu(x, self.alpha)


class AvgPool(Layer):
    def __init__(self, name, v_factor, h_factor=1):
        super().__init__(name)
        self.v, self.h = v_factor, h_factor

    def __call__(self, x, rng=None):
        return T.avg_pool(x, self.v, self.h)


class NearestUpsample(Layer):
    def __init__(self, name, v_factor, h_factor):
        super().__init__(name)
        self.v, self.h = v_factor, h_factor

    def __call__(self, x, rng=None):
        return T.upsample_nearest(x, self.v, self.h)


class Blur(Layer):
    def __call__(self, x, rng=None):
        return T.blur(x)


class AdaIN(Layer):
    def __init__(self, name, eps=1e-5):
        super().__init__(name)
        self.eps = eps

    def __call__(self, x, scale, shift, rng=None):
        return T.adain(x, scale, shift, eps=self.eps)


class AdditiveNoise(Layer):
    """Per-element Gaussian noise scaled by a learned per-channel scalar.

    Scalars start at zero so an untrained forward pass is noise-free; the rng
    passed at call time fully determines the draw.
    """

    def __init__(self, name, channels, *, dtype=np.float32):
        super().__init__(name)
        self.scale = self._param("noise_scale", np.zeros(channels, dtype=dtype))

    def __call__(self, x, rng=None):
        if rng is None:
            raise ValueError("additive-noise layer needs an rng")
        noise = rng.standard_normal(x.data.shape).astype(x.data.dtype)
        ext = self.scale.data.shape + (1,) * (x.data.ndim - 1)
        return x + T.reshape(self.scale, ext) * Tensor(noise)


class Concat(Layer):
    def __init__(self, name, axis=0):
        super().__init__(name)
        self.axis = axis

    def __call__(self, *inputs, rng=None):
        return T.concat(list(inputs), axis=self.axis)


class GlobalAvgPool(Layer):
    def __call__(self, x, rng=None):
        return T.global_avg_pool(x)


class Softmax(Layer):
    def __init__(self, name, axis=-1):
        super().__init__(name)
        self.axis = axis

    def __call__(self, x, rng=None):
        return T.softmax(x, axis=self.axis)


class LogSoftmax(Layer):
    def __init__(self, name, axis=-1):
        super().__init__(name)
        self.axis = axis

    def __call__(self, x, rng=None):
        return T.log_softmax(x, axis=self.axis)


def build_layer(spec: LayerSpec, name: str, *, rng=None, dtype=np.float32) -> Layer:
    """Instantiate a layer from its spec (parameters drawn from ``rng``)."""
    kind, o = spec.kind, spec.options
    if kind == "conv1d":
        return Conv1d(name, o["cin"], o["cout"], o.get("k", 3), o.get("padding", "same"), rng=rng, dtype=dtype)
    if kind == "conv2d":
        return Conv2d(name, o["cin"], o["cout"], o.get("k", 3), o.get("padding", "same"), rng=rng, dtype=dtype)
    if kind == "linear":
        return Linear(name, o["cin"], o["cout"], rng=rng, dtype=dtype)
    if kind == "relu":
        return ReLU(name)
    if kind == "leaky-relu":
        return LeakyReLU(name, o.get("alpha", 0.2))
    if kind == "avg-pool":
        return AvgPool(name, o["v_factor"], o.get("h_factor", 1))
    if kind == "nearest-upsample":
        return NearestUpsample(name, o["v_factor"], o["h_factor"])
    if kind == "blur":
        return Blur(name)
    if kind == "adain":
        return AdaIN(name, o.get("eps", 1e-5))
    if kind == "additive-noise":
        return AdditiveNoise(name, o["channels"], dtype=dtype)
    if kind == "concat":
        return Concat(name, o.get("axis", 0))
    if kind == "global-avg-pool":
        return GlobalAvgPool(name)
    if kind == "softmax":
        return Softmax(name, o.get("axis", -1))
    if kind == "log-softmax":
        return LogSoftmax(name, o.get("axis", -1))
    raise ValueError(f"unknown layer kind {kind!r}")


@dataclass
class GraphNode:
    name: str
    spec: LayerSpec
    inputs: tuple


class LayerGraph:
    """Static DAG of layers.

    Nodes run in declaration order; each names the nodes (or graph inputs)
    feeding it.  ``forward`` is deterministic given (inputs, parameters,
    noise_seed): every additive-noise node draws from a child stream of the
    seed keyed by its position.
    """

    def __init__(self, nodes: list[GraphNode], *, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.nodes = list(nodes)
        self.layers = {n.name: build_layer(n.spec, n.name, rng=rng, dtype=dtype) for n in self.nodes}

    def parameters(self) -> list[Parameter]:
        return [p for n in self.nodes for p in self.layers[n.name].params]

    def forward(self, inputs: dict, noise_seed: int = 0) -> dict:
        values = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in inputs.items()}
        for idx, node in enumerate(self.nodes):
            if node.name in values:
                raise ValueError(f"node name {node.name!r} collides with an input")
            args = []
            for ref in node.inputs:
                if ref not in values:
                    raise ValueError(f"node {node.name!r} references unknown input {ref!r}")
                args.append(values[ref])
            layer = self.layers[node.name]
            rng = T.rng_for(noise_seed, idx) if isinstance(layer, AdditiveNoise) else None
            out = layer(*args, rng=rng)
            T.check_finite(out, f"output of node {node.name!r}")
            values[node.name] = out
        return values

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        loss.backward()
