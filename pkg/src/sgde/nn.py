"""Dense feed-forward networks on flat float64 parameter vectors.

Parameters of a network live in a single 1-D array. For every layer the
weight matrix of shape ``(n_in, n_out)`` is stored row-major, followed by
its ``n_out`` biases; layers follow each other in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError

ACTIVATIONS = ("leaky_relu", "swish", "sigmoid", "linear", "softmax")


@dataclass(frozen=True)
class Layer:
    n_in: int
    n_out: int
    activation: str = "linear"
    slope: float = 0.2

    def to_dict(self) -> dict:
        d = {"n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}
        if self.activation == "leaky_relu":
            d["slope"] = self.slope
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Layer":
        return cls(int(d["n_in"]), int(d["n_out"]), d["activation"], float(d.get("slope", 0.2)))


@dataclass(frozen=True)
class NetworkArch:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ConfigurationError("network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.n_in < 1 or layer.n_out < 1:
                raise ConfigurationError(f"layer {i}: widths must be >= 1")
            if layer.activation not in ACTIVATIONS:
                raise ConfigurationError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.activation == "leaky_relu" and not 0.0 < layer.slope < 1.0:
                raise ConfigurationError(f"layer {i}: leaky_relu slope must lie in (0, 1)")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise ConfigurationError(
                    f"layers {i} and {i + 1} do not chain: {a.n_out} != {b.n_in}"
                )

    @classmethod
    def dense(cls, widths: Sequence[int], hidden: str = "leaky_relu",
              output: str = "linear", slope: float = 0.2) -> "NetworkArch":
        """Chain of dense layers through ``widths`` (input width first)."""
        n = len(widths) - 1
        layers = [
            Layer(widths[i], widths[i + 1], hidden if i < n - 1 else output, slope)
            for i in range(n)
        ]
        return cls(tuple(layers))

    @property
    def input_width(self) -> int:
        return self.layers[0].n_in

    @property
    def output_width(self) -> int:
        return self.layers[-1].n_out

    @property
    def param_count(self) -> int:
        return sum(l.n_in * l.n_out + l.n_out for l in self.layers)

    def offsets(self) -> list[tuple[int, int, int]]:
        """(weight_start, bias_start, end) for every layer."""
        out, pos = [], 0
        for l in self.layers:
            w_end = pos + l.n_in * l.n_out
            out.append((pos, w_end, w_end + l.n_out))
            pos = w_end + l.n_out
        return out

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        params = np.asarray(params)
        if params.shape != (self.param_count,):
            raise ShapeError(
                f"expected {self.param_count} parameters, got shape {params.shape}"
            )
        return [
            (params[w0:b0].reshape(l.n_in, l.n_out), params[b0:end])
            for l, (w0, b0, end) in zip(self.layers, self.offsets())
        ]

    def to_list(self) -> list[dict]:
        return [l.to_dict() for l in self.layers]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "NetworkArch":
        return cls(tuple(Layer.from_dict(d) for d in items))


@dataclass
class ForwardPass:
    """Pre-activations and activations of every layer.

    ``activations[0]`` is the input batch, ``activations[-1]`` the output.
    """

    pre: list[np.ndarray]
    activations: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    return _sigmoid(np.asarray(x, dtype=np.float64))


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _activate(layer: Layer, z: np.ndarray) -> np.ndarray:
    act = layer.activation
    if act == "linear":
        return z
    if act == "leaky_relu":
        return np.where(z > 0, z, layer.slope * z)
    if act == "sigmoid":
        return _sigmoid(z)
    if act == "swish":
        return z * _sigmoid(z)
    return softmax(z)


def _activation_backward(layer: Layer, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. activations to one w.r.t. pre-activations."""
    act = layer.activation
    if act == "linear":
        return g
    if act == "leaky_relu":
        return np.where(z > 0, g, layer.slope * g)
    if act == "sigmoid":
        return g * a * (1.0 - a)
    if act == "swish":
        s = _sigmoid(z)
        return g * (s + z * s * (1.0 - s))
    return a * (g - np.sum(a * g, axis=1, keepdims=True))


def glorot_uniform(arch: NetworkArch, rng: np.random.Generator) -> np.ndarray:
    params = np.zeros(arch.param_count)
    for l, (w0, b0, _) in zip(arch.layers, arch.offsets()):
        limit = np.sqrt(6.0 / (l.n_in + l.n_out))
        params[w0:b0] = rng.uniform(-limit, limit, size=l.n_in * l.n_out)
    return params


def init_params(arch: NetworkArch, seed: int) -> np.ndarray:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    arch.validate()
    return glorot_uniform(arch, np.random.default_rng(seed))


def _check_batch(arch: NetworkArch, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_width:
        raise ShapeError(f"batch shape {x.shape} does not match input width {arch.input_width}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in input batch")
    return x


def forward(arch: NetworkArch, params: np.ndarray, batch) -> ForwardPass:
    x = _check_batch(arch, batch)
    pre, acts = [], [x]
    a = x
    for layer, (w, b) in zip(arch.layers, arch.unpack(params)):
        z = a @ w + b
        a = _activate(layer, z)
        pre.append(z)
        acts.append(a)
    return ForwardPass(pre, acts)


def backprop(arch: NetworkArch, params: np.ndarray, fp: ForwardPass,
             upstream: np.ndarray, wrt: str = "output") -> tuple[np.ndarray, np.ndarray]:
    """Per-example parameter gradients and input gradients for a stored forward pass.

    ``upstream`` is dL_i/d(output) when ``wrt="output"`` or dL_i/d(final
    pre-activation) when ``wrt="logits"``; the latter avoids dividing by
    saturated sigmoid/softmax derivatives.
    """
    out = fp.output
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != out.shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {out.shape}")
    n = out.shape[0]
    grads = np.empty((n, arch.param_count))
    weights = arch.unpack(params)
    offsets = arch.offsets()
    for i in range(len(arch.layers) - 1, -1, -1):
        layer = arch.layers[i]
        if i == len(arch.layers) - 1 and wrt == "logits":
            delta = g
        else:
            delta = _activation_backward(layer, fp.pre[i], fp.activations[i + 1], g)
        w0, b0, end = offsets[i]
        a_in = fp.activations[i]
        grads[:, w0:b0] = (a_in[:, :, None] * delta[:, None, :]).reshape(n, -1)
        grads[:, b0:end] = delta
        g = delta @ weights[i][0].T
    return grads, g


def backward_per_example(arch: NetworkArch, params: np.ndarray, batch,
                         upstream_loss_gradients, wrt: str = "output") -> np.ndarray:
    """Row ``i`` holds the gradient of example ``i``'s loss w.r.t. all parameters."""
    fp = forward(arch, params, batch)
    grads, _ = backprop(arch, params, fp, upstream_loss_gradients, wrt=wrt)
    return grads


def ordered_mean(rows: np.ndarray) -> np.ndarray:
    """Column means that do not depend on the order of the rows."""
    return np.sort(rows, axis=0).sum(axis=0) / rows.shape[0]


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stability: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    hyper: AdamHyper = field(default_factory=AdamHyper)

    @classmethod
    def fresh(cls, n_params: int, hyper: AdamHyper | None = None) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, hyper or AdamHyper())


def adam_step(state: AdamState, params: np.ndarray, gradient) -> tuple[np.ndarray, AdamState]:
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != params.shape:
        raise ShapeError(f"gradient shape {g.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to adam_step")
    h = state.hyper
    t = state.step_count + 1
    m = h.beta1 * state.first_moment + (1.0 - h.beta1) * g
    v = h.beta2 * state.second_moment + (1.0 - h.beta2) * g * g
    m_hat = m / (1.0 - h.beta1 ** t)
    v_hat = v / (1.0 - h.beta2 ** t)
    new_params = params - h.learning_rate * m_hat / (np.sqrt(v_hat) + h.eps_stability)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)
