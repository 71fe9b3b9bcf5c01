"""Gradient tape replaying the fixed kernel set in reverse.

There is no graph object: every kernel application whose output depends on a
trainable parameter appends one record (kernel name, saved operands, adjoint
closure) to the tape. ``backward`` walks the records in exact reverse order.
A tape belongs to one thread; parallel work uses one tape per task.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError


class Variable:
    """A value on the tape, optionally accumulating a gradient."""

    __slots__ = ("grad", "name", "requires_grad", "value")

    def __init__(
        self, value: np.ndarray | float, requires_grad: bool = False, name: str | None = None
    ):
        self.value = np.asarray(value)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=np.result_type(self.value.dtype, np.float32))
        if grad.shape != self.value.shape:
            grad = _unbroadcast(grad, self.value.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        return f"Variable({self.name or '?'}, shape={self.shape})"


@dataclass
class _Record:
    kernel: str
    inputs: tuple[Variable, ...]
    output: Variable
    adjoint: Callable[[np.ndarray], Sequence[np.ndarray | None]]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class GradTape:
    """Ordered record of kernel applications plus the parameters they touch."""

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._params: dict[str, Variable] = {}

    def __len__(self) -> int:
        return len(self._records)

    @property
    def kernels(self) -> list[str]:
        return [r.kernel for r in self._records]

    # --- leaves ------------------------------------------------------------

    def param(self, name: str, value: np.ndarray | float, trainable: bool = True) -> Variable:
        var = Variable(value, requires_grad=trainable, name=name)
        if trainable:
            self._params[name] = var
        return var

    def params(self, values: dict[str, np.ndarray], prefix: str = "", trainable: bool = True) -> dict[str, Variable]:
        return {
            name: self.param(prefix + name, value, trainable)
            for name, value in values.items()
        }

    @staticmethod
    def constant(value: np.ndarray | float) -> Variable:
        return Variable(value)

    def _emit(
        self,
        kernel: str,
        value: np.ndarray,
        inputs: tuple[Variable, ...],
        adjoint: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> Variable:
        out = Variable(value, requires_grad=any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self._records.append(_Record(kernel, inputs, out, adjoint))
        return out

    # --- kernels -----------------------------------------------------------

    def matmul(self, a: Variable, b: Variable) -> Variable:
        return self._emit(
            "matmul",
            kernels.matmul(a.value, b.value),
            (a, b),
            lambda g: kernels.matmul_adjoint(a.value, b.value, g),
        )

    def add(self, a: Variable, b: Variable) -> Variable:
        return self._emit("add", a.value + b.value, (a, b), lambda g: (g, g))

    def sub(self, a: Variable, b: Variable) -> Variable:
        return self._emit("sub", a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a: Variable, b: Variable) -> Variable:
        return self._emit(
            "mul", a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value)
        )

    def sum(self, a: Variable, axis: int | None = None) -> Variable:
        def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return self._emit("sum", a.value.sum(axis=axis), (a,), adjoint)

    def reshape(self, a: Variable, shape: tuple[int, ...]) -> Variable:
        return self._emit(
            "reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
        )

    def transpose(self, a: Variable) -> Variable:
        return self._emit("transpose", a.value.T, (a,), lambda g: (g.T,))

    def concat(self, parts: Sequence[Variable], axis: int = -1) -> Variable:
        sizes = [p.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        return self._emit(
            "concat",
            np.concatenate([p.value for p in parts], axis=axis),
            tuple(parts),
            lambda g: np.split(g, splits, axis=axis),
        )

    def gather(self, table: Variable, index: np.ndarray) -> Variable:
        """Rows of ``table`` selected by an integer ``index`` array."""

        def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
            dtable = np.zeros_like(table.value, dtype=g.dtype)
            np.add.at(dtable, index, g)
            return (dtable,)

        return self._emit("gather", table.value[index], (table,), adjoint)

    def relu(self, a: Variable) -> Variable:
        return self._emit(
            "relu", kernels.relu(a.value), (a,), lambda g: (kernels.relu_adjoint(a.value, g),)
        )

    def sigmoid(self, a: Variable) -> Variable:
        y = kernels.sigmoid(a.value)
        return self._emit("sigmoid", y, (a,), lambda g: (kernels.sigmoid_adjoint(y, g),))

    def softplus(self, a: Variable) -> Variable:
        return self._emit(
            "softplus",
            kernels.softplus(a.value),
            (a,),
            lambda g: (kernels.softplus_adjoint(a.value, g),),
        )

    def softmax(self, a: Variable, axis: int = -1) -> Variable:
        y = kernels.softmax_weights(a.value, axis=axis)
        return self._emit(
            "softmax", y, (a,), lambda g: (kernels.softmax_adjoint(y, g, axis=axis),)
        )

    def fm_pool(self, embeddings: Variable) -> Variable:
        return self._emit(
            "fm_pool",
            kernels.fm_pool(embeddings.value),
            (embeddings,),
            lambda g: (kernels.fm_pool_adjoint(embeddings.value, g),),
        )

    def abs_similarity(
        self, query: Variable, support: Variable, w: Variable, b: Variable
    ) -> Variable:
        def adjoint(g: np.ndarray) -> tuple[np.ndarray, ...]:
            dq, ds, dw, db = kernels.abs_similarity_adjoint(
                query.value, support.value, w.value, g
            )
            return dq, ds, dw, np.asarray(db)

        return self._emit(
            "abs_similarity",
            kernels.abs_similarity(query.value, support.value, w.value, float(b.value)),
            (query, support, w, b),
            adjoint,
        )

    def add_diag(self, m: Variable, lam: Variable) -> Variable:
        """``m + lam * I`` for a scalar ``lam``."""
        n = m.shape[0]
        if m.value.ndim != 2 or m.shape[1] != n:
            raise ShapeError(f"add_diag: expected square matrix, got {m.shape}")
        value = m.value + float(lam.value) * np.eye(n, dtype=m.value.dtype)
        return self._emit(
            "add_diag", value, (m, lam), lambda g: (g, np.asarray(np.trace(g)))
        )

    def solve_spd(self, m: Variable, b: Variable) -> Variable:
        factor = kernels.factor_spd(m.value)
        x = factor.solve(b.value)

        def adjoint(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return kernels.solve_spd_adjoint(m.value, b.value, x, g, factor=factor)

        return self._emit("solve_spd", x, (m, b), adjoint)

    def bce_sum(self, labels: np.ndarray, probs: Variable) -> Variable:
        """Summed binary cross-entropy of ``probs`` against constant labels."""
        return self._emit(
            "bce",
            np.asarray(kernels.bce_loss(labels, probs.value).sum()),
            (probs,),
            lambda g: (kernels.bce_adjoint(labels, probs.value, g),),
        )

    def cast(self, a: Variable, dtype: np.dtype) -> Variable:
        if a.value.dtype == dtype:
            return a
        return self._emit(
            "cast", a.value.astype(dtype), (a,), lambda g: (g.astype(a.value.dtype),)
        )

    def take(self, a: Variable, index: int) -> Variable:
        """Single entry of a 1-D variable."""

        def adjoint(g: np.ndarray) -> tuple[np.ndarray]:
            grad = np.zeros_like(a.value, dtype=np.float64)
            grad[index] = g
            return (grad,)

        return self._emit("take", a.value[index], (a,), adjoint)

    # --- reverse pass ------------------------------------------------------

    def backward(self, loss: Variable, seed: float = 1.0) -> dict[str, np.ndarray]:
        """Propagate from a scalar ``loss`` and return parameter gradients."""
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.requires_grad:
            loss.accumulate(np.full(loss.shape, seed))
        for record in reversed(self._records):
            if record.output.grad is None:
                continue
            grads = record.adjoint(record.output.grad)
            for var, grad in zip(record.inputs, grads):
                if var.requires_grad and grad is not None:
                    var.accumulate(grad)
        return self.gradients()

    def gradients(self) -> dict[str, np.ndarray]:
        """Accumulated gradients keyed by parameter name; zeros when unused."""
        return {
            name: var.grad.astype(var.value.dtype, copy=False)
            if var.grad is not None
            else np.zeros_like(var.value)
            for name, var in self._params.items()
        }
