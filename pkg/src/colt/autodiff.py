"""Minimal reverse-mode autodiff over numpy arrays, dense networks and Adam.

Only the handful of array operations needed by the localization test are
supported.  Every differentiable computation is recorded on a :class:`Tape`;
:func:`backprop` replays it in reverse and returns adjoints for the leaves
that were registered with :meth:`Tape.watch`.

>>> tape = Tape()
>>> w = tape.watch(np.array([2.0]))
>>> loss = sum_(mul(w, np.array([3.0])))
>>> backprop(tape, loss)[0]
array([3.])
"""

from __future__ import annotations

import json
import weakref
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from colt.errors import (
    ConfigurationError,
    ContractError,
    ShapeError,
    TrainingDivergedError,
)

ACTIVATIONS = ("relu", "sine", "identity")


# ---------------------------------------------------------------------------
# Tape and variables
# ---------------------------------------------------------------------------


class Var:
    """A value recorded on a tape."""

    __slots__ = ("_tape", "index", "parents", "value")

    def __init__(self, value, tape, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        # weak, so a finished tape and its cached activations are freed
        # without waiting for the cycle collector
        self._tape = weakref.ref(tape)
        # parents: sequence of (Var, vjp) where vjp maps this node's adjoint
        # to the contribution for that parent.
        self.parents = parents
        self.index = tape._record(self)

    @property
    def tape(self):
        return self._tape()

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records primal values and replays adjoints for one loss evaluation."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.watched: list[Var] = []

    def _record(self, var):
        self.nodes.append(var)
        return len(self.nodes) - 1

    def watch(self, value) -> Var:
        """Register a leaf whose adjoint :func:`backprop` should return."""
        var = Var(np.array(value, dtype=np.float64, copy=True), self)
        self.watched.append(var)
        return var


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands recorded on different tapes")
    return tape


def custom_op(value, parents: Sequence[tuple[object, Callable]]):
    """Record a primitive whose vector-Jacobian products are supplied.

    ``parents`` pairs each input with a function mapping the output adjoint
    to that input's adjoint.  Non-:class:`Var` inputs are ignored, and if no
    input is recorded the plain array is returned.
    """
    live = tuple((p, f) for p, f in parents if isinstance(p, Var))
    if not live:
        return np.asarray(value, dtype=np.float64)
    return Var(value, _tape_of(*(p for p, _ in live)), live)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = av.shape, bv.shape
    return custom_op(av + bv, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = av.shape, bv.shape
    return custom_op(av - bv, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(-g, sb))])


def neg(a):
    return custom_op(-value_of(a), [(a, lambda g: -g)])


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return custom_op(
        av * bv,
        [(a, lambda g: _unbroadcast(g * bv, av.shape)), (b, lambda g: _unbroadcast(g * av, bv.shape))],
    )


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return custom_op(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def relu(a):
    av = value_of(a)
    mask = av > 0
    return custom_op(np.where(mask, av, 0.0), [(a, lambda g: g * mask)])


def sin(a):
    av = value_of(a)
    return custom_op(np.sin(av), [(a, lambda g: g * np.cos(av))])


def square(a):
    av = value_of(a)
    return custom_op(av * av, [(a, lambda g: 2.0 * g * av)])


def sqrt(a):
    """Square root with a zero subgradient at the origin."""
    av = value_of(a)
    out = np.sqrt(av)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
    return custom_op(out, [(a, lambda g: g * scale)])


def sum_(a, axis=None):
    av = value_of(a)
    shape = av.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return custom_op(av.sum(axis=axis), [(a, vjp)])


def mean(a, axis=None):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    shape = av.shape

    def vjp(g):
        g = g / n
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    # divide rather than scale by 1/n so values match numpy's mean bit for bit
    return custom_op(av.sum(axis=axis) / n, [(a, vjp)])


def reshape(a, shape):
    av = value_of(a)
    old = av.shape
    return custom_op(av.reshape(shape), [(a, lambda g: g.reshape(old))])


def take_slice(flat, start, stop, shape):
    """View ``flat[start:stop]`` reshaped to ``shape``; scatters adjoints back."""
    fv = value_of(flat)
    n = fv.shape[0]

    def vjp(g):
        out = np.zeros(n)
        out[start:stop] = g.ravel()
        return out

    return custom_op(fv[start:stop].reshape(shape), [(flat, vjp)])


def concat(parts, axis=-1):
    vals = [value_of(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def make(i):
        return lambda g: np.split(g, sizes, axis=axis)[i]

    return custom_op(np.concatenate(vals, axis=axis), [(p, make(i)) for i, p in enumerate(parts)])


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _sigmoid_prime(z):
    e = np.exp(-np.abs(z))
    return e / (1.0 + e) ** 2


def sigmoid(a):
    av = value_of(a)
    return custom_op(_sigmoid(av), [(a, lambda g: g * _sigmoid_prime(av))])


def softplus(a):
    av = value_of(a)
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    return custom_op(out, [(a, lambda g: g * _sigmoid(av))])


def ste_indicator(a, b, temperature=0.1):
    """Hard indicator ``1[a < b]`` with a sigmoid straight-through gradient.

    The forward value is exactly 0 or 1 (ties give 0).  The backward pass
    uses the derivative of ``sigmoid((b - a) / temperature)``.
    """
    if not temperature > 0:
        raise ConfigurationError(f"STE temperature must be positive, got {temperature}")
    av, bv = value_of(a), value_of(b)
    z = (bv - av) / temperature
    slope = _sigmoid_prime(z) / temperature
    out = (av < bv).astype(np.float64)
    return custom_op(
        out,
        [(a, lambda g: _unbroadcast(-g * slope, av.shape)), (b, lambda g: _unbroadcast(g * slope, bv.shape))],
    )


def backprop(tape: Tape, loss, loss_adjoint=1.0):
    """Return adjoints of ``loss`` for every leaf watched on ``tape``.

    Leaves that do not influence ``loss`` receive exact zeros.
    """
    if not isinstance(loss, Var):
        return [np.zeros_like(w.value) for w in tape.watched]
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise ContractError(f"backprop needs a scalar loss, got shape {loss.value.shape}")
    adjoints: dict[int, np.ndarray] = {loss.index: np.full(loss.value.shape, float(loss_adjoint))}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = adjoints.pop(node.index, None)
        if g is None or not node.parents:
            if g is not None:
                adjoints[node.index] = g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = adjoints.get(parent.index)
            adjoints[parent.index] = contrib if prev is None else prev + contrib
    return [adjoints.get(w.index, np.zeros_like(w.value)) for w in tape.watched]


# ---------------------------------------------------------------------------
# Dense networks
# ---------------------------------------------------------------------------


def _all_finite(a) -> bool:
    # a dot product is much cheaper than isfinite over the full vector;
    # fall back to the exact check only when it overflows
    s = float(np.dot(a, a)) if a.ndim == 1 else float(np.sum(a))
    return bool(np.isfinite(s)) or bool(np.all(np.isfinite(a)))


def n_params(layer_dims) -> int:
    return int(sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:])))


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """A feed-forward network: flat weights plus the shape metadata.

    The flat vector holds, for each layer, the ``(fan_in, fan_out)`` weight
    matrix in row-major order followed by its bias.
    """

    layer_dims: tuple
    weights: np.ndarray = field(repr=False)
    activation: tuple = ("relu",)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ConfigurationError(f"invalid layer dims {self.layer_dims!r}")
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * (len(dims) - 2)
        acts = tuple(acts)
        if len(acts) == 1 and len(dims) - 2 != 1:
            acts = acts * (len(dims) - 2)
        if len(acts) != len(dims) - 2 or any(a not in ACTIVATIONS for a in acts):
            raise ConfigurationError(f"invalid activation spec {self.activation!r} for dims {dims}")
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != n_params(dims):
            raise ShapeError(f"expected {n_params(dims)} weights, got {w.shape[0]}")
        if not _all_finite(w):
            raise ContractError("network weights must be finite")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activation", acts)
        object.__setattr__(self, "weights", w)

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return (
            self.layer_dims == other.layer_dims
            and self.activation == other.activation
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def with_weights(self, weights):
        return replace(self, weights=np.asarray(weights, dtype=np.float64))

    def layers(self):
        """Yield ``(start, stop, shape)`` slices for each weight and bias."""
        offset = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            yield (offset, offset + fan_in * fan_out, (fan_in, fan_out))
            offset += fan_in * fan_out
            yield (offset, offset + fan_out, (fan_out,))
            offset += fan_out

    def to_json(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": list(self.activation),
            "weights": [float(w) for w in self.weights],
        }

    @classmethod
    def from_json(cls, doc: dict) -> NetworkParams:
        return cls(tuple(doc["layer_dims"]), np.array(doc["weights"], dtype=np.float64), tuple(doc["activation"]))


def net_init(layer_dims, activation="relu", seed=0) -> NetworkParams:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``) and zero biases."""
    dims = tuple(layer_dims) if layer_dims is not None else ()
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise ConfigurationError(f"need at least two positive layer dims, got {layer_dims!r}")
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return NetworkParams(dims, np.concatenate(chunks), activation)


def _dense_forward(params, x, w, keep=True):
    """Forward pass; with ``keep`` also returns the per-layer inputs for backprop."""
    slices = list(params.layers())
    n_layers = len(params.layer_dims) - 1
    inputs, pre = [], []
    h = x
    for layer in range(n_layers):
        (ws, we, wshape), (bs, be, _) = slices[2 * layer], slices[2 * layer + 1]
        if keep:
            inputs.append(h)
        z = h @ w[ws:we].reshape(wshape)
        z += w[bs:be]
        if layer == n_layers - 1:
            h = z
            continue
        act = params.activation[layer]
        if act == "relu":
            h = np.maximum(z, 0.0, out=z)
        elif act == "sine":
            if keep:
                pre.append(np.cos(z))
            h = np.sin(z, out=z)
        else:
            h = z
    return h, (inputs, pre)


def _dense_backward(params, w, cache, g):
    """Adjoints ``(d_weights, d_input)`` given the output adjoint ``g``."""
    inputs, cosines = cache
    slices = list(params.layers())
    n_layers = len(params.layer_dims) - 1
    dw = np.empty_like(w)
    cos_iter = iter(reversed(cosines))
    for layer in reversed(range(n_layers)):
        (ws, we, wshape), (bs, be, _) = slices[2 * layer], slices[2 * layer + 1]
        dw[ws:we] = (inputs[layer].T @ g).ravel()
        dw[bs:be] = g.sum(axis=0)
        g = g @ w[ws:we].reshape(wshape).T
        if layer > 0:
            act = params.activation[layer - 1]
            if act == "relu":
                # the layer input is the relu output, positive exactly where z > 0
                g *= inputs[layer] > 0
            elif act == "sine":
                g *= next(cos_iter)
    return dw, g


def net_forward(params: NetworkParams, inputs, weights=None):
    """Evaluate the network on one input vector or a batch of row vectors.

    ``weights`` may be a :class:`Var` watched on a tape (usually
    ``tape.watch(params.weights)``) to record the computation; ``inputs`` may
    also be a recorded :class:`Var`.  The whole network is recorded as one
    primitive.  Without any recorded operand the result is a plain array.
    """
    xv = value_of(inputs)
    squeeze = xv.ndim == 1
    x2 = xv.reshape(1, -1) if squeeze else xv
    if x2.ndim != 2 or x2.shape[1] != params.in_dim:
        raise ShapeError(f"network expects input dim {params.in_dim}, got shape {xv.shape}")
    w = params.weights if weights is None else value_of(weights)
    if w.shape != params.weights.shape:
        raise ShapeError("weight vector does not match network layout")
    record = isinstance(weights, Var) or isinstance(inputs, Var)
    out, cache = _dense_forward(params, x2, w, keep=record)
    if squeeze:
        out = out.reshape(params.out_dim)
    if not record:
        return out

    memo = {}

    def grads(g):
        if memo.get("g") is not g:
            g2 = g.reshape(1, -1) if squeeze else g
            dw, dx = _dense_backward(params, w, cache, g2)
            memo.update(g=g, dw=dw, dx=dx.reshape(xv.shape))
        return memo

    return custom_op(out, [(weights, lambda g: grads(g)["dw"]), (inputs, lambda g: grads(g)["dx"])])


def save_network(params: NetworkParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_json()))


def load_network(path) -> NetworkParams:
    return NetworkParams.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=1e-3, **kw):
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``.

    ``params`` may be a :class:`NetworkParams` or a plain weight vector; the
    result has the same type.  Neither input is mutated.
    """
    w = params.weights if isinstance(params, NetworkParams) else np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != w.shape or state.m.shape != w.shape:
        raise ShapeError(f"Adam shapes disagree: params {w.shape}, grads {g.shape}, moments {state.m.shape}")
    if not _all_finite(g):
        bad = int(np.sum(~np.isfinite(g)))
        raise TrainingDivergedError(
            f"non-finite gradient ({bad} entries) at Adam step {state.step + 1}",
            diagnostics={"step": state.step + 1, "n_nonfinite": bad, "grad_norm": float(np.linalg.norm(g[np.isfinite(g)]))},
        )
    t = state.step + 1
    m = state.m * state.beta1
    m += (1 - state.beta1) * g
    v = state.v * state.beta2
    v += (1 - state.beta2) * np.square(g)
    # w - lr * m_hat / (sqrt(v_hat) + eps), with fewer temporaries
    denom = np.sqrt(v / (1 - state.beta2**t))
    denom += state.eps
    step = m * (state.lr / (1 - state.beta1**t))
    step /= denom
    new_w = w - step
    new_state = replace(state, m=m, v=v, step=t)
    if isinstance(params, NetworkParams):
        return params.with_weights(new_w), new_state
    return new_w, new_state
