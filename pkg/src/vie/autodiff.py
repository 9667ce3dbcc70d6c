"""Tape-based reverse-mode differentiation over dense float64 arrays.

Every forward op appends a node to the tape it was called on; ``backward``
walks the nodes in reverse and returns gradients for the registered
parameters. Broadcasting rules, per op:

* ``add``, ``sub``: shapes equal; or one operand is a scalar (shape ``()``);
  or the second operand's shape is a trailing suffix of the first's
  (bias rows, e.g. ``(B, T, C) + (C,)``).
* ``mul``: shapes equal, or one operand is a scalar.
* ``matmul``: ``(..., n, k) @ (k, m)``; the right operand is always 2-D.
* everything else: no broadcasting.

Constants (plain arrays, Python numbers) may appear anywhere an input is
expected; they never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when an op receives operands whose shapes do not conform."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        shown = " and ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.shapes = shapes


class Tensor:
    """A float64 array, optionally tied to a node on a tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    forward: Callable[..., np.ndarray]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    value: np.ndarray


@dataclass
class Tape:
    """Ordered record of executed ops plus the trainable-parameter registry."""

    nodes: list[Node] = field(default_factory=list)
    parameters: dict[str, Tensor] = field(default_factory=dict)

    def parameter(self, name: str, value) -> Tensor:
        if name in self.parameters:
            raise KeyError(f"parameter {name!r} already registered on this tape")
        value = np.array(value, dtype=np.float64)
        t = self._record("parameter", (), lambda v=value: v, None, value)
        self.parameters[name] = t
        return t

    def constant(self, value) -> Tensor:
        return Tensor(value)

    def _record(self, kind, inputs, forward, vjp, value) -> Tensor:
        node = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), forward, vjp, value))
        return Tensor(value, self, node)

    def replay(self, parameters: dict[str, np.ndarray] | None = None) -> list[np.ndarray]:
        """Re-execute every recorded node; returns the fresh node values.

        Parameter values may be overridden by name. Constants captured at
        record time are reused as-is.
        """
        overrides = parameters or {}
        names = {t.node: n for n, t in self.parameters.items()}
        values: list[np.ndarray] = []
        for idx, node in enumerate(self.nodes):
            if node.kind == "parameter":
                name = names[idx]
                v = np.array(overrides[name], dtype=np.float64) if name in overrides else node.forward()
            else:
                args = [values[t.node] if t.node is not None and t.tape is self else t.data
                        for t in node.inputs]
                v = node.forward(*args)
            values.append(v)
        return values


def _as_tensor(x, tape: "Tape | None") -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not None and tape is not None and x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return Tensor(x)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
    return None


def _apply(kind: str, inputs, forward, vjp) -> Tensor:
    tape = _tape_of(*inputs)
    inputs = tuple(_as_tensor(x, tape) for x in inputs)
    value = forward(*(t.data for t in inputs))
    if tape is None:
        return Tensor(value)
    return tape._record(kind, inputs, forward, vjp(*(t.data for t in inputs)), value)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def _check_add(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise ShapeError(op, a.shape, b.shape, detail="need equal shapes, a scalar, or a trailing-suffix bias")


def add(a, b) -> Tensor:
    def fwd(x, y):
        _check_add("add", x, y)
        return x + y

    def vjp(x, y):
        return lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape))

    return _apply("add", (a, b), fwd, vjp)


def sub(a, b) -> Tensor:
    def fwd(x, y):
        _check_add("sub", x, y)
        return x - y

    def vjp(x, y):
        return lambda g: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape))

    return _apply("sub", (a, b), fwd, vjp)


def scalar_mul(a, c: float) -> Tensor:
    c = float(c)
    return _apply("scalar-mul", (a,), lambda x: x * c, lambda x: lambda g: (g * c,))


def mul(a, b) -> Tensor:
    def fwd(x, y):
        if not (x.shape == y.shape or x.ndim == 0 or y.ndim == 0):
            raise ShapeError("mul", x.shape, y.shape)
        return x * y

    def vjp(x, y):
        return lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape))

    return _apply("mul", (a, b), fwd, vjp)


def matmul(a, b) -> Tensor:
    def fwd(x, y):
        if x.ndim < 1 or y.ndim != 2 or x.shape[-1] != y.shape[0]:
            raise ShapeError("matmul", x.shape, y.shape)
        return x @ y

    def vjp(x, y):
        def back(g):
            gx = g @ y.T
            x2 = x.reshape(-1, x.shape[-1])
            gy = x2.T @ g.reshape(-1, y.shape[1])
            return gx, gy
        return back

    return _apply("matmul", (a, b), fwd, vjp)


def relu(a) -> Tensor:
    return _apply("relu", (a,), lambda x: np.maximum(x, 0.0),
                  lambda x: lambda g: (g * (x > 0),))


def exp(a) -> Tensor:
    def vjp(x):
        ex = np.exp(x)
        return lambda g: (g * ex,)
    return _apply("exp", (a,), np.exp, vjp)


def log(a) -> Tensor:
    def fwd(x):
        if np.any(x <= 0):
            raise ValueError("log: non-positive input")
        return np.log(x)
    return _apply("log", (a,), fwd, lambda x: lambda g: (g / x,))


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    def fwd(x):
        if axis is not None and not -x.ndim <= axis < x.ndim:
            raise ShapeError("sum", x.shape, detail=f"axis {axis} out of range")
        return np.sum(x, axis=axis)

    def vjp(x):
        def back(g):
            if axis is None:
                return (np.broadcast_to(g, x.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
        return back

    return _apply("sum", (a,), fwd, vjp)


def mean(a, axis: int) -> Tensor:
    def fwd(x):
        if not -x.ndim <= axis < x.ndim:
            raise ShapeError("mean-over-axis", x.shape, detail=f"axis {axis} out of range")
        return np.mean(x, axis=axis)

    def vjp(x):
        n = x.shape[axis]
        return lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)

    return _apply("mean-over-axis", (a,), fwd, vjp)


def concat(tensors: Sequence, axis: int) -> Tensor:
    tensors = tuple(tensors)

    def fwd(*xs):
        first = xs[0]
        ax = axis % first.ndim
        for x in xs[1:]:
            if x.ndim != first.ndim or any(
                    x.shape[d] != first.shape[d] for d in range(first.ndim) if d != ax):
                raise ShapeError("concat-along-axis", first.shape, x.shape)
        return np.concatenate(xs, axis=axis)

    def vjp(*xs):
        ax = axis % xs[0].ndim
        cuts = np.cumsum([x.shape[ax] for x in xs])[:-1]
        return lambda g: tuple(np.split(g, cuts, axis=ax))

    return _apply("concat-along-axis", tensors, fwd, vjp)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    def fwd(x):
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return _apply("reshape", (a,), fwd, lambda x: lambda g: (g.reshape(x.shape),))


def temporal_conv1d(x, w) -> Tensor:
    """Valid, stride-1 convolution along axis 1.

    ``x`` is ``(B, T, C)``, ``w`` is ``(K, C, O)``; result ``(B, T-K+1, O)``.
    """

    def fwd(xv, wv):
        if xv.ndim != 3 or wv.ndim != 3 or xv.shape[2] != wv.shape[1] or wv.shape[0] > xv.shape[1]:
            raise ShapeError("temporal-conv1d", xv.shape, wv.shape)
        k = wv.shape[0]
        t_out = xv.shape[1] - k + 1
        out = xv[:, 0:t_out] @ wv[0]
        for j in range(1, k):
            out = out + xv[:, j:j + t_out] @ wv[j]
        return out

    def vjp(xv, wv):
        k = wv.shape[0]
        t_out = xv.shape[1] - k + 1

        def back(g):
            gx = np.zeros_like(xv)
            gw = np.empty_like(wv)
            g2 = g.reshape(-1, g.shape[2])
            for j in range(k):
                gx[:, j:j + t_out] += g @ wv[j].T
                gw[j] = xv[:, j:j + t_out].reshape(-1, xv.shape[2]).T @ g2
            return gx, gw
        return back

    return _apply("temporal-conv1d", (x, w), fwd, vjp)


def l2_normalize(a) -> Tensor:
    """Normalize along the last axis: ``x / sqrt(sum(x**2) + eps)``.

    The epsilon guard is treated as a constant by the gradient.
    """

    def fwd(x):
        if x.ndim == 0:
            raise ShapeError("l2-normalize", x.shape, detail="needs at least one axis")
        return x / np.sqrt(np.sum(x * x, axis=-1, keepdims=True) + NORM_EPS)

    def vjp(x):
        norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True) + NORM_EPS)
        y = x / norm

        def back(g):
            return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)
        return back

    return _apply("l2-normalize", (a,), fwd, vjp)


def gather_rows(a, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def fwd(x):
        if x.ndim < 1 or index.ndim != 1 or (index.size and (index.min() < -x.shape[0] or index.max() >= x.shape[0])):
            raise ShapeError("gather-rows", x.shape, index.shape, detail="index out of range")
        return x[index]

    def vjp(x):
        def back(g):
            gx = np.zeros_like(x)
            np.add.at(gx, index, g)
            return (gx,)
        return back

    return _apply("gather-rows", (a,), fwd, vjp)


def dot(a, b) -> Tensor:
    """Inner product along the last axis (rowwise for batches)."""

    def fwd(x, y):
        if x.shape != y.shape or x.ndim == 0:
            raise ShapeError("dot", x.shape, y.shape)
        return np.sum(x * y, axis=-1)

    def vjp(x, y):
        def back(g):
            g = np.expand_dims(g, -1)
            return g * y, g * x
        return back

    return _apply("dot", (a, b), fwd, vjp)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every parameter on ``tape``."""
    if loss.tape is not tape or loss.node is None:
        raise ValueError("loss was not produced on this tape")
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for idx in range(loss.node, -1, -1):
        g = grads.pop(idx, None)
        node = tape.nodes[idx]
        if g is None or node.vjp is None:
            if g is not None:
                grads[idx] = g  # parameter leaf: keep
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp.node is None or gi is None:
                continue
            if inp.node in grads:
                grads[inp.node] = grads[inp.node] + gi
            else:
                grads[inp.node] = np.asarray(gi, dtype=np.float64)
    out = {}
    for name, t in tape.parameters.items():
        g = grads.get(t.node)
        out[name] = np.zeros_like(t.data) if g is None else g.reshape(t.shape)
    return out


def finite_diff_check(f: Callable[[Tape, dict[str, Tensor]], Tensor],
                      point: dict[str, np.ndarray], step: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central| / max(1, |analytic|)``.

    ``f`` builds a scalar on the tape it is given from the registered
    parameter tensors.
    """
    if step <= 0:
        raise ValueError("step must be positive")

    def value_at(values) -> float:
        # untaped inputs: ops compute values only, no nodes or vjps are built
        return f(Tape(), {n: Tensor(v) for n, v in values.items()}).item()

    tape = Tape()
    loss = f(tape, {n: tape.parameter(n, v) for n, v in point.items()})
    analytic = backward(tape, loss)
    worst = 0.0
    for name, base in point.items():
        base = np.asarray(base, dtype=np.float64)
        flat = base.reshape(-1)
        for j in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[j] += step
            minus[j] -= step
            vals_p = dict(point, **{name: plus.reshape(base.shape)})
            vals_m = dict(point, **{name: minus.reshape(base.shape)})
            numeric = (value_at(vals_p) - value_at(vals_m)) / (2 * step)
            a = analytic[name].reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
