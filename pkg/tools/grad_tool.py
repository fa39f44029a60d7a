# Minimal reverse-mode differentiation over numpy arrays
"""
tools.grad_tool

A small tape-based reverse-mode AD used by the variational objectives.

A Tape records Var nodes in creation order; each node keeps its parents
together with a backward rule mapping the node's cotangent to the parent's
cotangent. Since a node can only reference nodes that already exist on the
same tape, the recording order is a valid topological order and backward is
a single reverse sweep.

Elementwise helpers (exp, log, sigmoid, ...) accept either Var or plain
arrays, so numerical code written against them runs unchanged with or
without a tape. Opaque nodes (denoiser calls, measurement operators) plug in
through Tape.custom with their own vector-Jacobian product.

Usage:
    tape = Tape()
    x = tape.leaf(np.array([3.0]), "x")
    y = sum_(x * x)
    grads = tape.backward(y)     # {"x": array([6.])}
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from core.errors import GraphError

ArrayLike = Union[np.ndarray, float, int]
BackwardRule = Callable[[np.ndarray], np.ndarray]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    grad = np.asarray(grad, dtype=float)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A value recorded on a Tape."""

    # Make numpy defer to our reflected operators (ndarray * Var -> Var).
    __array_ufunc__ = None

    def __init__(
        self,
        tape: "Tape",
        value: np.ndarray,
        parents: Sequence[Tuple["Var", BackwardRule]] = (),
        name: Optional[str] = None,
    ) -> None:
        self.tape = tape
        self.value = np.asarray(value, dtype=float)
        self.parents = list(parents)
        self.name = name
        self.index = -1

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = self.name or f"node{self.index}"
        return f"Var({label}, shape={self.shape})"

    # --- arithmetic ---

    def __add__(self, other: Union["Var", ArrayLike]) -> "Var":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Union["Var", ArrayLike]) -> "Var":
        return add(self, neg(other))

    def __rsub__(self, other: ArrayLike) -> "Var":
        return add(neg(self), other)

    def __neg__(self) -> "Var":
        return neg(self)

    def __mul__(self, other: Union["Var", ArrayLike]) -> "Var":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Var", ArrayLike]) -> "Var":
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other: ArrayLike) -> "Var":
        return mul(reciprocal(self), other)

    def __pow__(self, exponent: float) -> "Var":
        p = float(exponent)
        x = self.value
        return self.tape._record(x ** p, [(self, lambda g: g * p * x ** (p - 1.0))])

    def __getitem__(self, key) -> "Var":
        x = self.value
        out = x[key]

        def rule(g: np.ndarray) -> np.ndarray:
            full = np.zeros_like(x)
            np.add.at(full, key, g)
            return full

        return self.tape._record(out, [(self, rule)])


class Tape:
    """Records Var nodes for one evaluation; discarded afterwards."""

    def __init__(self) -> None:
        self._nodes: List[Var] = []
        self._leaves: Dict[str, Var] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def _append(self, var: Var) -> Var:
        var.index = len(self._nodes)
        self._nodes.append(var)
        return var

    def leaf(self, value: ArrayLike, name: str) -> Var:
        """Create a tagged leaf; gradients are reported under `name`."""
        if name in self._leaves:
            raise GraphError(f"duplicate leaf name '{name}'")
        var = self._append(Var(self, np.array(value, dtype=float), name=name))
        self._leaves[name] = var
        return var

    def _record(self, value: np.ndarray, parents: Sequence[Tuple[Var, BackwardRule]]) -> Var:
        for parent, _ in parents:
            if parent.tape is not self:
                raise GraphError("node from a different tape used in this graph")
        return self._append(Var(self, value, parents))

    def custom(
        self,
        inputs: Sequence[Var],
        value: np.ndarray,
        vjp: Callable[[np.ndarray], Sequence[np.ndarray]],
    ) -> Var:
        """
        Record an opaque node. `vjp(cotangent)` must return one cotangent per
        input, in order.
        """
        cache: Dict[int, Sequence[np.ndarray]] = {}

        def make_rule(position: int) -> BackwardRule:
            def rule(g: np.ndarray) -> np.ndarray:
                key = id(g)
                if key not in cache:
                    cache.clear()
                    cache[key] = vjp(g)
                return cache[key][position]

            return rule

        return self._record(np.asarray(value, dtype=float), [(v, make_rule(i)) for i, v in enumerate(inputs)])

    def backward(self, output: Var) -> Dict[str, np.ndarray]:
        """Gradients of a scalar output with respect to every tagged leaf."""
        if output.tape is not self:
            raise GraphError("output belongs to a different tape")
        if output.value.size != 1:
            raise GraphError(f"backward needs a scalar output, got shape {output.shape}")

        grads: Dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
        for node in reversed(self._nodes[: output.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                if node.name is not None:
                    grads[node.index] = np.zeros_like(node.value)
                continue
            if node.name is not None:
                # keep leaf gradients for the report
                grads[node.index] = g
            for parent, rule in node.parents:
                if parent.index >= node.index:
                    raise GraphError("cycle detected in gradient tape")
                contribution = _unbroadcast(rule(g), parent.shape)
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + contribution
                else:
                    grads[parent.index] = contribution

        return {
            name: grads.get(var.index, np.zeros_like(var.value))
            for name, var in self._leaves.items()
        }


# --- helpers accepting Var or arrays ---


def is_var(x: object) -> bool:
    return isinstance(x, Var)


def value_of(x: Union[Var, ArrayLike]) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs: object) -> Optional[Tape]:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise GraphError("operands come from different tapes")
            tape = x.tape
    return tape


def add(a: Union[Var, ArrayLike], b: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if tape is None:
        return av + bv
    parents = []
    if isinstance(a, Var):
        parents.append((a, lambda g: g))
    if isinstance(b, Var):
        parents.append((b, lambda g: g))
    return tape._record(av + bv, parents)


def neg(a: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    if not isinstance(a, Var):
        return -value_of(a)
    return a.tape._record(-a.value, [(a, lambda g: -g)])


def mul(a: Union[Var, ArrayLike], b: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if tape is None:
        return av * bv
    parents = []
    if isinstance(a, Var):
        parents.append((a, lambda g: g * bv))
    if isinstance(b, Var):
        parents.append((b, lambda g: g * av))
    return tape._record(av * bv, parents)


def reciprocal(a: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    if not isinstance(a, Var):
        return 1.0 / value_of(a)
    inv = 1.0 / a.value
    return a.tape._record(inv, [(a, lambda g: -g * inv * inv)])


def exp(a: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    if not isinstance(a, Var):
        return np.exp(value_of(a))
    out = np.exp(a.value)
    return a.tape._record(out, [(a, lambda g: g * out)])


def log(a: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    if not isinstance(a, Var):
        return np.log(value_of(a))
    x = a.value
    return a.tape._record(np.log(x), [(a, lambda g: g / x)])


def sigmoid(a: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    if not isinstance(a, Var):
        return expit(value_of(a))
    out = expit(a.value)
    return a.tape._record(out, [(a, lambda g: g * out * (1.0 - out))])


def square(a: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    if not isinstance(a, Var):
        return value_of(a) ** 2
    x = a.value
    return a.tape._record(x * x, [(a, lambda g: 2.0 * g * x)])


def abs_(a: Union[Var, ArrayLike]) -> Union[Var, np.ndarray]:
    """Absolute value; the backward rule uses sign(x) (0 at the kink)."""
    if not isinstance(a, Var):
        return np.abs(value_of(a))
    x = a.value
    return a.tape._record(np.abs(x), [(a, lambda g: g * np.sign(x))])


def sum_(a: Union[Var, ArrayLike], axis: Optional[int] = None) -> Union[Var, np.ndarray]:
    if not isinstance(a, Var):
        return np.sum(value_of(a), axis=axis)
    x = a.value

    def rule(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, x.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()

    return a.tape._record(np.sum(x, axis=axis), [(a, rule)])


def mean(a: Union[Var, ArrayLike], axis: Optional[int] = None) -> Union[Var, np.ndarray]:
    x = value_of(a)
    count = x.size if axis is None else x.shape[axis]
    return sum_(a, axis=axis) * (1.0 / count)


def linear(
    a: Union[Var, ArrayLike],
    forward: Callable[[np.ndarray], np.ndarray],
    adjoint: Callable[[np.ndarray], np.ndarray],
) -> Union[Var, np.ndarray]:
    """Apply a linear map given by its forward action and adjoint."""
    if not isinstance(a, Var):
        return forward(value_of(a))
    return a.tape._record(forward(a.value), [(a, adjoint)])
