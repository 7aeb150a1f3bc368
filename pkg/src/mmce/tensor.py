"""Small reverse-mode differentiation substrate over float64 numpy arrays.

Only what the fixed response-model architectures need is provided: a
``Var`` node type with elementwise/matrix ops, a named ``ParameterStore``
with per-group trainable flags, a tape that records one forward pass, a
central finite-difference checker and an Adam-style optimizer step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, UsageError

_counter = itertools.count()


class Var:
    """A node in the computation graph. Holds a float64 value."""

    __slots__ = ("value", "_parents", "_backward", "_order")

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = parents
        self._backward = backward
        self._order = next(_counter)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.value!r})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_op(self, index)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def square(a) -> Var:
    a = as_var(a)
    return Var(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = expit(a.value)
    return Var(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Var:
    a = as_var(a)
    return Var(np.logaddexp(0.0, a.value), (a,), lambda g: (g * expit(a.value),))


def log1p(a) -> Var:
    a = as_var(a)
    return Var(np.log1p(a.value), (a,), lambda g: (g / (1.0 + a.value),))


def sum_(a, axis=None) -> Var:
    a = as_var(a)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Var(a.value.sum(axis=axis), (a,), back)


def mean(a) -> Var:
    a = as_var(a)
    n = a.value.size
    return Var(a.value.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def index_op(a, index) -> Var:
    a = as_var(a)

    def back(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return Var(a.value[index], (a,), back)


def take(a, start: int, stop: int, shape: tuple) -> Var:
    """Contiguous slice of a flat vector, reshaped."""
    a = as_var(a)

    def back(g):
        full = np.zeros(a.shape)
        full[start:stop] = g.reshape(-1)
        return (full,)

    return Var(a.value[start:stop].reshape(shape), (a,), back)


def gradients(output: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Reverse-mode gradients of a scalar ``output`` w.r.t. ``wrt``."""
    if output.value.size != 1:
        raise UsageError("backward needs a scalar output")
    nodes: dict[int, Var] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(node._parents)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in sorted(nodes.values(), key=lambda n: n._order, reverse=True):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return [grads.get(id(v), np.zeros_like(v.value)) for v in wrt]


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ParamGroup:
    values: np.ndarray
    trainable: bool = True


class ParameterStore:
    """Ordered named groups of flat float64 parameter vectors."""

    def __init__(self, groups: Mapping[str, Sequence[float]] | None = None):
        self._groups: dict[str, ParamGroup] = {}
        for name, values in (groups or {}).items():
            self.add(name, values)

    def add(self, name: str, values, trainable: bool = True) -> None:
        if name in self._groups:
            raise ConfigError(f"duplicate parameter group {name!r}")
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in group {name!r}")
        self._groups[name] = ParamGroup(arr, trainable)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._groups[name].values
        except KeyError:
            raise ConfigError(f"no parameter group {name!r}") from None

    def __setitem__(self, name: str, values) -> None:
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if arr.shape != self[name].shape:
            raise ConfigError(f"group {name!r} expects {self[name].size} values")
        self._groups[name].values = arr

    def __contains__(self, name: str) -> bool:
        return name in self._groups

    def __iter__(self) -> Iterator[str]:
        return iter(self._groups)

    def __len__(self) -> int:
        return len(self._groups)

    def names(self) -> list[str]:
        return list(self._groups)

    def is_trainable(self, name: str) -> bool:
        return self._groups[name].trainable

    def set_trainable(self, name: str, flag: bool) -> None:
        self._groups[name].trainable = bool(flag)

    def n_params(self) -> int:
        return sum(g.values.size for g in self._groups.values())

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, grp in self._groups.items():
            out._groups[name] = ParamGroup(grp.values.copy(), grp.trainable)
        return out


class GradientMap(dict):
    """Group name -> gradient vector, congruent with a ParameterStore."""


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# tape


class Tape:
    """One recorded forward pass: leaf variables per group and the loss."""

    def __init__(self, store: ParameterStore | None = None):
        self.store = store
        self.leaves: dict[str, Var] = {}
        self.loss: Var | None = None


def record(store: ParameterStore, fn: Callable[[dict[str, Var]], Var]) -> Tape:
    """Run ``fn`` on leaf variables for every group and keep the result."""
    tape = Tape(store)
    tape.leaves = {name: Var(store[name]) for name in store}
    tape.loss = fn(tape.leaves)
    return tape


def backward(store: ParameterStore, tape: Tape) -> GradientMap:
    if tape.loss is None:
        raise UsageError("backward called before a forward pass was recorded")
    names = [n for n in store if store.is_trainable(n)]
    grads = gradients(tape.loss, [tape.leaves[n] for n in names])
    out = GradientMap()
    for name in store:
        out[name] = np.zeros_like(store[name])
    for name, g in zip(names, grads):
        out[name] = np.asarray(g, dtype=np.float64).reshape(-1)
    return out


def grad_check(
    store: ParameterStore,
    loss_fn: Callable[[dict[str, Var]], Var],
    eps: float = 1e-5,
) -> float:
    """Max relative gap between reverse-mode and central differences.

    The relative error for each coordinate is ``|g - fd| / max(|g|, |fd|, s)``
    where the floor ``s = 1e-5 * max(1, |loss|)`` keeps rounding noise of the
    difference quotient from dominating on near-zero gradient entries.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    tape = record(store, loss_fn)
    base = float(tape.loss.value)
    if not np.isfinite(base):
        raise NumericError("loss is not finite")
    analytic = backward(store, tape)
    floor = 1e-5 * max(1.0, abs(base))

    def evaluate(name, values) -> float:
        leaves = {n: Var(values if n == name else store[n]) for n in store}
        val = float(loss_fn(leaves).value)
        if not np.isfinite(val):
            raise NumericError(f"loss is not finite when perturbing {name!r}")
        return val

    worst = 0.0
    for name in store:
        if not store.is_trainable(name):
            continue
        values = store[name].copy()
        for i in range(values.size):
            orig = values[i]
            values[i] = orig + eps
            up = evaluate(name, values)
            values[i] = orig - eps
            down = evaluate(name, values)
            values[i] = orig
            fd = (up - down) / (2.0 * eps)
            g = analytic[name][i]
            worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), floor))
    return worst


def optimizer_step(
    store: ParameterStore, grads: GradientMap, state: OptimState
) -> tuple[ParameterStore, OptimState]:
    """One bias-corrected adaptive-moment update, in place on ``store``."""
    for name in store:
        if name not in grads or grads[name].shape != store[name].shape:
            raise ConfigError(f"gradient for group {name!r} does not match the store")
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient in group {name!r}")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name in store:
        if not store.is_trainable(name):
            continue
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        store[name] = store[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return store, state


# ---------------------------------------------------------------------------
# MLP


def mlp_size(layer_spec: Sequence[int]) -> int:
    return sum(i * o + o for i, o in zip(layer_spec[:-1], layer_spec[1:]))


def mlp_apply(flat, layer_spec: Sequence[int], x, activate_last: bool = False) -> Var:
    """Affine chain over a flat parameter vector; tanh between layers."""
    flat = as_var(flat)
    if flat.value.size != mlp_size(layer_spec):
        raise ConfigError(
            f"layer spec {list(layer_spec)} needs {mlp_size(layer_spec)} parameters, "
            f"group has {flat.value.size}"
        )
    h = as_var(x)
    if h.value.shape[-1] != layer_spec[0]:
        raise ConfigError(f"input width {h.value.shape[-1]} != {layer_spec[0]}")
    pos = 0
    n_layers = len(layer_spec) - 1
    for k, (i, o) in enumerate(zip(layer_spec[:-1], layer_spec[1:])):
        w = take(flat, pos, pos + i * o, (i, o))
        pos += i * o
        b = take(flat, pos, pos + o, (o,))
        pos += o
        h = h @ w + b
        if k < n_layers - 1 or activate_last:
            h = tanh(h)
    return h


def mlp_forward(store: ParameterStore, layer_spec: Sequence[int], x, group: str = "mlp") -> np.ndarray:
    """Evaluate an MLP stored in one group; the output layer is affine."""
    return mlp_apply(store[group], layer_spec, np.asarray(x, dtype=np.float64)).value


def init_mlp(rng: np.random.Generator, layer_spec: Sequence[int]) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    parts = []
    for i, o in zip(layer_spec[:-1], layer_spec[1:]):
        bound = 1.0 / np.sqrt(i)
        parts.append(rng.uniform(-bound, bound, size=i * o))
        parts.append(np.zeros(o))
    return np.concatenate(parts) if parts else np.zeros(0)
