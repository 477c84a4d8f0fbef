"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

A ``Tensor`` wraps a numpy array together with an optional gradient buffer.
Operations (see :mod:`viewmotion.autodiff.ops`) record themselves onto the
currently active ``Tape``; ``Tape.backward`` replays the recording in reverse
to populate gradients on every reachable leaf tensor.

Gradients accumulate across repeated backward calls; callers are responsible
for zeroing them between optimization steps.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

_id_counter = itertools.count()
_TAPE_STACK: list["Tape"] = []


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GradientError(RuntimeError):
    """Backward pass was asked to do something it cannot."""


def active_tape() -> Optional["Tape"]:
    """The innermost tape currently recording, or None."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense float64 array with an optional gradient of identical shape.

    Values are treated as immutable once produced by an operation; optimizers
    mutate ``data`` in place only on leaf parameters between tape lifetimes.
    """

    __slots__ = ("data", "grad", "requires_grad", "tid")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tid = next(_id_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A new leaf tensor sharing this tensor's data, outside the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.tid = next(_id_counter)
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic operators are attached by viewmotion.autodiff.ops at import
    # time so that this module stays free of circular imports.


class TapeNode:
    """One recorded operation: input tensors, output id, backward rule."""

    __slots__ = ("op", "inputs", "output_tid", "backward_fn")

    def __init__(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output_tid: int,
        backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    ):
        self.op = op
        self.inputs = tuple(inputs)
        self.output_tid = output_tid
        self.backward_fn = backward_fn


class Tape:
    """Ordered recording of operations for one backward traversal.

    Topological by construction: a node's inputs are either leaves or outputs
    of nodes recorded earlier. ``last_visit_count`` instruments the single
    reverse sweep (it equals ``len(nodes)`` after every backward call).
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._output_tids: set[int] = set()
        self.last_visit_count = 0

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    ) -> None:
        self.nodes.append(TapeNode(op, inputs, output.tid, backward_fn))
        self._output_tids.add(output.tid)

    def is_interior(self, tensor: Tensor) -> bool:
        """True if ``tensor`` was produced by an op recorded on this tape."""
        return tensor.tid in self._output_tids

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every leaf tensor reachable from ``loss``.

        Leaves not on the path from ``loss`` are left untouched. Interior
        gradients are held in a scratch table and released as they are
        consumed, so only leaf tensors retain gradients afterwards.
        """
        if loss.size != 1:
            raise GradientError(
                f"backward requires a scalar loss, got shape {loss.shape}"
            )
        pending: dict[int, np.ndarray] = {loss.tid: np.ones_like(loss.data)}
        if not self.is_interior(loss) and loss.requires_grad:
            # degenerate case: loss is itself a leaf
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
        visits = 0
        for node in reversed(self.nodes):
            visits += 1
            upstream = pending.pop(node.output_tid, None)
            if upstream is None:
                continue
            input_grads = node.backward_fn(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.tid in self._output_tids:
                    held = pending.get(tensor.tid)
                    pending[tensor.tid] = grad if held is None else held + grad
                else:
                    tensor.grad = grad if tensor.grad is None else tensor.grad + grad
        self.last_visit_count = visits


def backward(loss: Tensor, tape: Tape) -> None:
    """Run the reverse sweep of ``tape`` seeded at the scalar ``loss``."""
    tape.backward(loss)
