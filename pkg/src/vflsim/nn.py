"""Exact-gradient kernel for small dense networks.

Tensors are plain ``float64`` numpy arrays. A :class:`Network` is an ordered
list of layer specs plus one ``(W, b)`` pair per dense layer, with ``W`` shaped
``(in_dim, out_dim)`` so a batch ``X`` of shape ``(B, in_dim)`` maps to
``X @ W + b``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, InputError, NumericError, ParseError, StateError

FORMAT_VERSION = 1

DENSE = "dense"
RELU = "relu"
SOFTMAX = "softmax-output"
LAYERNORM = "layernorm"
LAYER_KINDS = (DENSE, RELU, SOFTMAX, LAYERNORM)
LN_EPS = 1e-5


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite value in {what}")
    return x


def as_batch(x, what: str = "batch") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{what} must be 2-D, got shape {arr.shape}")
    return check_finite(arr, what)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int | None = None
    out_dim: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InputError(f"unknown layer kind {self.kind!r}")
        if self.kind == DENSE:
            if not (isinstance(self.in_dim, int) and isinstance(self.out_dim, int)):
                raise InputError("dense layer needs integer in_dim and out_dim")
            if self.in_dim < 1 or self.out_dim < 1:
                raise InputError("dense dims must be positive")

    def to_text(self) -> str:
        if self.kind == DENSE:
            return f"{DENSE} {self.in_dim} {self.out_dim}"
        return self.kind

    @classmethod
    def from_text(cls, text: str) -> "LayerSpec":
        parts = text.split()
        if not parts:
            raise ParseError("empty layer spec")
        if parts[0] == DENSE:
            if len(parts) != 3:
                raise ParseError(f"bad dense spec {text!r}")
            return cls(DENSE, int(parts[1]), int(parts[2]))
        return cls(parts[0])


def _check_chain(layers: Sequence[LayerSpec]) -> None:
    width = None
    for i, spec in enumerate(layers):
        if spec.kind == DENSE:
            if width is not None and spec.in_dim != width:
                raise DimensionError(
                    f"layer {i}: in_dim {spec.in_dim} does not match previous width {width}"
                )
            width = spec.out_dim
    if not any(s.kind == DENSE for s in layers):
        raise InputError("network needs at least one dense layer")


class Network:
    """Ordered dense/activation layers with their parameters.

    Instances are treated as values: :func:`sgd_step` returns a new network and
    never mutates its argument.
    """

    __slots__ = ("layers", "params")

    def __init__(self, layers: Sequence[LayerSpec], params: Sequence[tuple[np.ndarray, np.ndarray]]):
        self.layers = tuple(layers)
        _check_chain(self.layers)
        dense = [s for s in self.layers if s.kind == DENSE]
        if len(dense) != len(params):
            raise DimensionError(f"{len(dense)} dense layers but {len(params)} parameter pairs")
        checked = []
        for spec, (w, b) in zip(dense, params):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (spec.in_dim, spec.out_dim) or b.shape != (spec.out_dim,):
                raise DimensionError(
                    f"parameter shapes {w.shape}/{b.shape} do not match {spec.to_text()}"
                )
            checked.append((w, b))
        self.params = tuple(checked)

    @property
    def in_dim(self) -> int:
        return next(s.in_dim for s in self.layers if s.kind == DENSE)

    @property
    def out_dim(self) -> int:
        return [s.out_dim for s in self.layers if s.kind == DENSE][-1]

    def n_params(self) -> int:
        return param_count(self.layers)

    def copy(self) -> "Network":
        return Network(self.layers, [(w.copy(), b.copy()) for w, b in self.params])

    def flat(self) -> np.ndarray:
        """All parameters concatenated (weights then bias, layer by layer)."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.params])

    def with_flat(self, vec: np.ndarray) -> "Network":
        out, pos = [], 0
        for w, b in self.params:
            nw = vec[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            nb = vec[pos:pos + b.size].copy()
            pos += b.size
            out.append((nw.copy(), nb))
        return Network(self.layers, out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network) or self.layers != other.layers:
            return False
        return all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.params, other.params)
        )

    def __repr__(self) -> str:
        body = ", ".join(s.to_text() for s in self.layers)
        return f"Network([{body}])"


def param_count(layers: Sequence[LayerSpec]) -> int:
    return sum(s.in_dim * s.out_dim + s.out_dim for s in layers if s.kind == DENSE)


def mlp_layers(widths: Sequence[int], final_relu: bool = False,
               final: str | Sequence[str] | None = None) -> list[LayerSpec]:
    """Dense layers through ``widths`` with relu between them.

    ``mlp_layers([4, 8, 3])`` is ``dense 4 8, relu, dense 8 3``. ``final``
    names one activation, or a sequence of them, appended after the last
    dense layer.
    """
    if final_relu:
        final = RELU
    if len(widths) < 2:
        raise InputError("need at least input and output width")
    layers: list[LayerSpec] = []
    for i in range(len(widths) - 1):
        layers.append(LayerSpec(DENSE, int(widths[i]), int(widths[i + 1])))
        if i < len(widths) - 2:
            layers.append(LayerSpec(RELU))
    if isinstance(final, str):
        final = (final,)
    for kind in final or ():
        layers.append(LayerSpec(kind))
    return layers


def init_network(layers: Sequence[LayerSpec], rng: np.random.Generator) -> Network:
    """Glorot-uniform weights, zero biases."""
    params = []
    for spec in layers:
        if spec.kind == DENSE:
            a = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            params.append((rng.uniform(-a, a, size=(spec.in_dim, spec.out_dim)), np.zeros(spec.out_dim)))
    return Network(layers, params)


def mlp(widths: Sequence[int], rng: np.random.Generator, final_relu: bool = False,
        final: str | Sequence[str] | None = None) -> Network:
    return init_network(mlp_layers(widths, final_relu, final), rng)


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class ActivationTrace:
    """Inputs to every layer, plus the final output."""

    net: Network
    inputs: list[np.ndarray]
    output: np.ndarray


@dataclass
class GradientSet:
    params: list[tuple[np.ndarray, np.ndarray]]
    input_grad: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.params])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            [(w1 + w2, b1 + b2) for (w1, b1), (w2, b2) in zip(self.params, other.params)],
            self.input_grad + other.input_grad,
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def layer_norm(x: np.ndarray) -> np.ndarray:
    """Per-row standardization (no learned scale or shift)."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def forward(net: Network, batch) -> ActivationTrace:
    x = as_batch(batch)
    if x.shape[1] != net.in_dim:
        raise DimensionError(f"batch has {x.shape[1]} columns, network expects {net.in_dim}")
    inputs = []
    p = 0
    for spec in net.layers:
        inputs.append(x)
        if spec.kind == DENSE:
            w, b = net.params[p]
            p += 1
            x = x @ w + b
        elif spec.kind == RELU:
            x = np.maximum(x, 0.0)
        elif spec.kind == LAYERNORM:
            x = layer_norm(x)
        else:
            x = softmax(x)
    check_finite(x, "network output")
    return ActivationTrace(net, inputs, x)


def predict(net: Network, batch) -> np.ndarray:
    return forward(net, batch).output


def backward(net: Network, trace: ActivationTrace, grad_out) -> GradientSet:
    if trace.net is not net and trace.net.layers != net.layers:
        raise StateError("activation trace was produced by a different network")
    if len(trace.inputs) != len(net.layers):
        raise StateError("activation trace does not match network depth")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise DimensionError(f"grad_out shape {g.shape} != output shape {trace.output.shape}")
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    p = len(net.params)
    for spec, x in zip(reversed(net.layers), reversed(trace.inputs)):
        if spec.kind == DENSE:
            p -= 1
            w, _ = net.params[p]
            grads.append((x.T @ g, g.sum(axis=0)))
            g = g @ w.T
        elif spec.kind == RELU:
            g = g * (x > 0.0)
        elif spec.kind == LAYERNORM:
            inv = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + LN_EPS)
            xhat = (x - x.mean(axis=1, keepdims=True)) * inv
            g = inv * (g - g.mean(axis=1, keepdims=True) - xhat * (g * xhat).mean(axis=1, keepdims=True))
        else:
            s = softmax(x)
            g = s * (g - (g * s).sum(axis=1, keepdims=True))
    grads.reverse()
    return GradientSet(grads, g)


def cross_entropy_logits(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its exact gradient w.r.t. the logits."""
    logits = as_batch(logits, "logits")
    y = np.asarray(labels)
    n, c = logits.shape
    if y.shape != (n,):
        raise DimensionError(f"labels shape {y.shape} does not match batch size {n}")
    if n and (y.min() < 0 or y.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad /= n
    return float(loss), grad


def sgd_step(net: Network, grads: GradientSet, lr: float) -> Network:
    if len(grads.params) != len(net.params):
        raise DimensionError("gradient set does not match network")
    new = []
    for (w, b), (gw, gb) in zip(net.params, grads.params):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise DimensionError("gradient shapes do not match parameters")
        new.append((w - lr * gw, b - lr * gb))
    return Network(net.layers, new)


def zero_grads(net: Network, batch_rows: int = 0) -> GradientSet:
    return GradientSet(
        [(np.zeros_like(w), np.zeros_like(b)) for w, b in net.params],
        np.zeros((batch_rows, net.in_dim)),
    )


# --------------------------------------------------------------------------
# finite differences


def finite_diff_check(
    net: Network,
    loss_fn: Callable[[Network], tuple[float, GradientSet]],
    eps: float = 1e-5,
) -> float:
    """Compare analytic parameter gradients against central differences.

    Args:
        net: Network at which to evaluate.
        loss_fn: Maps a network to ``(loss, gradients)``; only the loss value
            is used for the perturbed evaluations.
        eps: Perturbation size, in ``[1e-7, 1e-3]``.

    Returns:
        ``max |analytic - numeric| / max(1, |analytic|)`` over all parameters.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise InputError("eps must lie in [1e-7, 1e-3]")
    _, grads = loss_fn(net)
    analytic = grads.flat()
    base = net.flat()
    worst = 0.0
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += eps
        minus[i] -= eps
        numeric = (loss_fn(net.with_flat(plus))[0] - loss_fn(net.with_flat(minus))[0]) / (2 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


def input_finite_diff(fn: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray,
                      eps: float = 1e-5) -> float:
    """Same relative-error measure as :func:`finite_diff_check`, w.r.t. an input tensor."""
    worst = 0.0
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        numeric = (fn(plus) - fn(minus)) / (2 * eps)
        worst = max(worst, abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx])))
    return worst


# --------------------------------------------------------------------------
# checkpoints


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in values.ravel())


def dumps(net: Network) -> str:
    """Serialize to the versioned text checkpoint format."""
    out = io.StringIO()
    out.write(f"vflsim-network {FORMAT_VERSION}\n")
    out.write(f"layers {len(net.layers)}\n")
    for spec in net.layers:
        out.write(spec.to_text() + "\n")
    for i, (w, b) in enumerate(net.params):
        out.write(f"weight {i} {w.shape[0]} {w.shape[1]}\n{_fmt(w)}\n")
        out.write(f"bias {i} {b.shape[0]}\n{_fmt(b)}\n")
    return out.getvalue()


def loads(text: str) -> Network:
    lines = text.splitlines()
    try:
        head = lines[0].split()
        if head[0] != "vflsim-network":
            raise ParseError("not a vflsim network checkpoint", row=1)
        if int(head[1]) != FORMAT_VERSION:
            raise ParseError(f"unsupported checkpoint version {head[1]}", row=1)
        n_layers = int(lines[1].split()[1])
        layers = [LayerSpec.from_text(lines[2 + i]) for i in range(n_layers)]
        pos = 2 + n_layers
        params = []
        for spec in layers:
            if spec.kind != DENSE:
                continue
            w = np.array([float(v) for v in lines[pos + 1].split()]).reshape(spec.in_dim, spec.out_dim)
            b = np.array([float(v) for v in lines[pos + 3].split()]).reshape(spec.out_dim)
            params.append((w, b))
            pos += 4
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from exc
    return Network(layers, params)


def save(net: Network, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps(net))


def load(path) -> Network:
    with open(path, encoding="ascii") as fh:
        return loads(fh.read())
