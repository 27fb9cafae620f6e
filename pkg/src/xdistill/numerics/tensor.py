"""Dense float64 tensors with reverse-mode automatic differentiation.

Gradients are recorded on an explicit :class:`Tape`.  Operations executed
inside a ``with Tape():`` block append one node each; ``Tape.backward``
replays the nodes once, in reverse append order.  Outside a tape block
operations run in inference mode and record nothing.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


_TAPE_STACK: list["Tape"] = []


def current_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class _TapeNode:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs, output, backward: Callable[[], None]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def record(self, op: str, inputs, output, backward: Callable[[], None]):
        self.nodes.append(_TapeNode(op, inputs, output, backward))

    def backward(self, loss: "Tensor"):
        """Seed d(loss)=1 and propagate through every node in reverse order."""
        if loss.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.output.grad is not None:
                node.backward()


class no_grad:
    """Run a block in inference mode even inside an active tape."""

    def __enter__(self):
        _TAPE_STACK.append(None)  # type: ignore[arg-type]
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


class Tensor:
    """n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad}{tag})"

    # Arithmetic sugar delegates to ops to keep all tape logic in one place.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _wrap(other))

    def __rsub__(self, other):
        from . import ops

        return ops.sub(_wrap(other), self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, _wrap(other))

    def __neg__(self):
        from . import ops

        return ops.mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def wants_grad(*tensors: Tensor) -> bool:
    """True when recording is active and some input participates in the graph."""
    tape = current_tape()
    if tape is None:
        return False
    return any(t.requires_grad or t.grad is not None or _on_tape(t, tape) for t in tensors)


def _on_tape(t: Tensor, tape: Tape) -> bool:
    # Intermediate results are marked requires_grad when created by a
    # recorded op, so this only needs the cheap flag check.
    return t.requires_grad


def parameters_of(named: dict[str, Tensor]) -> Sequence[Tensor]:
    return list(named.values())
