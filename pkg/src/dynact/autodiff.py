"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records one node per differentiable operation in execution order;
backward walks the list once in reverse, accumulating gradients with sum
semantics so parameters used several times (the per-layer activation
scalars in particular) collect every contribution.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class DynactError(Exception):
    """Base class for library errors."""


class ShapeError(DynactError):
    """Operand shapes are incompatible."""


class ConfigError(DynactError):
    """A configuration value is invalid."""


class ContractError(DynactError):
    """An operation precondition was violated."""


class DataError(DynactError):
    """Input data violates a dataset invariant."""


class FormatError(DynactError):
    """A binary file does not match its declared format."""


class NumericsError(DynactError):
    """An operation produced NaN or Inf; the run must abort."""


class Tensor:
    """Dense n-dimensional float64 array, the universal value carrier."""

    __slots__ = ("data", "grad", "requires_grad", "retain_grad", "_needs_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.retain_grad = False
        self._needs_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor; gradient buffer always allocated and shape-locked."""

    __slots__ = ("trainable", "weight_decay_exempt", "name")

    def __init__(self, data, name: str = "", weight_decay_exempt: bool = False):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.trainable = True
        self.weight_decay_exempt = weight_decay_exempt
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.data.shape})"


class Node:
    """One recorded operation: output tensor plus a rule mapping the
    output gradient to per-input gradients (None for non-diff inputs)."""

    __slots__ = ("name", "inputs", "out", "rule")

    def __init__(self, name: str, inputs: Sequence[Tensor], out: Tensor,
                 rule: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.name = name
        self.inputs = tuple(inputs)
        self.out = out
        self.rule = rule


class Tape:
    """Ordered operation record; also usable as a context manager that
    installs itself as the active tape."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _push(self)
        return self

    def __exit__(self, *exc):
        _pop(self)
        return False


_STACK: list[Tape] = []


def _push(tape: Tape) -> None:
    _STACK.append(tape)


def _pop(tape: Tape) -> None:
    if not _STACK or _STACK[-1] is not tape:
        raise ContractError("tape stack corrupted")
    _STACK.pop()


def active_tape() -> Optional[Tape]:
    return _STACK[-1] if _STACK else None


def record(name: str, out_data: np.ndarray, inputs: Sequence[Tensor],
           rule: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap op output in a Tensor and register the backward rule.

    Enforces the NaN policy: every op output must be finite. The fast sum
    probe catches any NaN/Inf (they propagate); the exact scan only runs
    when the sum itself is non-finite, which also screens out the rare
    finite-overflowing-sum false positive.
    """
    if not np.isfinite(out_data.sum()) and not np.isfinite(out_data).all():
        raise NumericsError(f"op '{name}' produced non-finite values")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        needs = any(t._needs_grad for t in inputs)
        if needs:
            out._needs_grad = True
            tape.nodes.append(Node(name, inputs, out, rule))
    return out


def backward(loss: Tensor, tape: Tape,
             write_leaf_grads: bool = True) -> dict[int, np.ndarray]:
    """Reverse pass over the tape from a scalar loss.

    Accumulates into `.grad` of every reachable tensor with
    requires_grad or retain_grad set (unless write_leaf_grads is off),
    and returns the raw accumulator keyed by id() for callers that need
    intermediate gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    kept: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad or loss.retain_grad:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g_out = acc.pop(id(node.out), None)
        if g_out is None:
            continue
        if node.out.retain_grad:
            kept[id(node.out)] = g_out
            if node.out.grad is None:
                node.out.grad = g_out.copy()
            else:
                node.out.grad = node.out.grad + g_out
        grads = node.rule(g_out)
        for t, g in zip(node.inputs, grads):
            if g is None or not t._needs_grad:
                continue
            if g.shape != t.data.shape:
                raise ShapeError(
                    f"backward of '{node.name}': grad shape {g.shape} vs input {t.data.shape}")
            key = id(t)
            if key in acc:
                acc[key] = acc[key] + g
            else:
                acc[key] = g
            if t.requires_grad or t.retain_grad:
                leaves[key] = t
    if write_leaf_grads:
        for key, t in leaves.items():
            g = acc.get(key)
            if g is None:
                continue
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad = t.grad + g
    acc.update(kept)
    return acc


def grad_wrt(loss: Tensor, tape: Tape, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of loss for the given tensors; no `.grad` buffer is touched."""
    saved = [(t.requires_grad, t.grad, t.retain_grad) for t in wrt]
    for t in wrt:
        t.retain_grad = True
    try:
        acc = backward(loss, tape, write_leaf_grads=False)
    finally:
        for t, (rq, g, rt) in zip(wrt, saved):
            t.requires_grad, t.grad, t.retain_grad = rq, g, rt
    return [acc.get(id(t), np.zeros_like(t.data)) for t in wrt]
