"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays. Differentiable operations are recorded on an
explicit :class:`GradTape`; replaying the tape in reverse computes gradients
for every leaf tensor that requires them. The engine supports exactly the
primitives the fixed network architectures in this package need -- no
broadcasting beyond scalar-with-tensor, no dynamic graphs, no higher-order
derivatives.

Training runs in float32; gradient checking uses float64 (see
:func:`grad_check`).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Dense n-dimensional array participating in a differentiation graph.

    ``data`` is row-major float32 or float64. ``grad``, when populated, has
    the same shape and dtype as ``data`` and accumulates across backward
    passes until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy-free view of the same data, cut off from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        return out

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar through the active tape."""
        tape = active_tape()
        if tape is None:
            raise RuntimeError("backward() requires an active GradTape")
        tape.backward(self)

    # arithmetic sugar; scalars only on the right for sub/mul symmetry
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class OpRecord:
    """One recorded primitive: inputs, output, and its local gradient rule.

    ``backward_fn`` maps the output gradient to a tuple of input gradients
    aligned with ``inputs`` (entries may be None for non-differentiable
    inputs).
    """

    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    name: str = ""


_STATE = threading.local()


def active_tape() -> Optional["GradTape"]:
    stack = getattr(_STATE, "tapes", None)
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of primitive operations for one forward pass.

    A tape is confined to a single thread. Entering the context makes it the
    active tape; operations whose inputs require gradients append records in
    execution order, which is by construction a valid topological order.
    """

    def __init__(self):
        self.records: list[OpRecord] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "GradTape":
        if not hasattr(_STATE, "tapes"):
            _STATE.tapes = []
        _STATE.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _STATE.tapes.pop()
        return False

    def record(self, rec: OpRecord) -> None:
        self.records.append(rec)
        self._produced.add(id(rec.output))

    def is_leaf(self, t: Tensor) -> bool:
        return id(t) not in self._produced

    def check_topological(self) -> None:
        """Assert record order is a valid topological order of the graph."""
        seen_outputs: set[int] = set()
        for rec in self.records:
            if id(rec.output) in seen_outputs:
                raise AssertionError("tensor produced by more than one op")
            seen_outputs.add(id(rec.output))
        # an op's output must never feed an *earlier* op
        consumed_before: dict[int, int] = {}
        for idx, rec in enumerate(self.records):
            for inp in rec.inputs:
                if isinstance(inp, Tensor) and id(inp) not in consumed_before:
                    consumed_before[id(inp)] = idx
        for idx, rec in enumerate(self.records):
            first_use = consumed_before.get(id(rec.output))
            if first_use is not None and first_use < idx:
                raise AssertionError("tape order is not topological")

    def backward(self, loss: Tensor) -> None:
        """Populate grads of requiring leaves by reverse replay.

        Repeated calls accumulate into ``.grad``. Raises on non-scalar loss.
        """
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        for rec in reversed(self.records):
            gout = grads.pop(id(rec.output), None)
            if gout is None:
                continue
            gins = rec.backward_fn(gout)
            for inp, gin in zip(rec.inputs, gins):
                if gin is None or not isinstance(inp, Tensor):
                    continue
                if self.is_leaf(inp):
                    if inp.requires_grad:
                        inp.accumulate_grad(gin)
                else:
                    if id(inp) in grads:
                        grads[id(inp)] += gin
                    else:
                        grads[id(inp)] = gin.copy()


def apply_op(
    inputs: Sequence,
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    name: str = "",
) -> Tensor:
    """Create the output tensor of a primitive and record it if traced.

    Shared entry point for every differentiable primitive in this package
    (including the conv/pool layers defined in :mod:`mirrornet.nn`).
    """
    needs_grad = any(isinstance(i, Tensor) and i.requires_grad for i in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    tape = active_tape()
    if needs_grad and tape is not None:
        tape.record(OpRecord(tuple(inputs), out, backward_fn, name))
    return out


def _as_scalar(b) -> Optional[float]:
    if isinstance(b, (int, float, np.floating, np.integer)):
        return float(b)
    return None


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return apply_op([a], a.data + s, lambda g: (g,), "add_scalar")
    _check_same_shape(a, b, "add")
    return apply_op([a, b], a.data + b.data, lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return apply_op([a], a.data - s, lambda g: (g,), "sub_scalar")
    _check_same_shape(a, b, "sub")
    return apply_op([a, b], a.data - b.data, lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return scale(a, s)
    _check_same_shape(a, b, "mul")
    return apply_op(
        [a, b],
        a.data * b.data,
        lambda g, ad=a.data, bd=b.data: (g * bd, g * ad),
        "mul",
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return apply_op([a], a.data * s, lambda g: (g * s,), "scale")


def reduce_mean(a: Tensor) -> Tensor:
    """Arithmetic mean over all elements; d(mean)/dx_i = 1/count."""
    if a.size == 0:
        raise ShapeError("reduce_mean of an empty tensor")
    n = a.size
    out = np.asarray(a.data.mean(), dtype=a.dtype)

    def bwd(g, shape=a.shape, n=n, dtype=a.dtype):
        return (np.full(shape, float(g) / n, dtype=dtype),)

    return apply_op([a], out, bwd, "reduce_mean")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return apply_op([a], a.data * mask, lambda g, m=mask: (g * m,), "relu")


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``f`` to central differences.

    Runs in float64 regardless of the input dtype. Relative error per
    element is |a - n| / (|a| + |n| + 1e-8); the report carries the maximum.
    Raises on non-finite values.
    """
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    with GradTape() as tape:
        y = f(x64)
        if y.size != 1:
            raise ShapeError("grad_check requires a scalar-valued function")
        tape.backward(y)
    analytic = x64.grad
    if analytic is None:
        analytic = np.zeros_like(x64.data)
    if not np.all(np.isfinite(analytic)):
        raise FloatingPointError("non-finite analytic gradient")

    flat = x64.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x64.data, dtype=np.float64)).item()
        flat[i] = orig - h
        fm = f(Tensor(x64.data, dtype=np.float64)).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)
    if not np.all(np.isfinite(numeric)):
        raise FloatingPointError("non-finite numeric gradient")

    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / (np.abs(a) + np.abs(numeric) + 1e-8)
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel_err=max_rel, passed=max_rel < tol, tol=tol)
