"""Dense float32 tensor plus a reverse-mode tape.

Tensors are immutable value holders around C-contiguous float32 arrays
(feature maps are NCHW). A `Tape` records primitive executions while
active; replaying the records in reverse yields exact vector-Jacobian
products for any watched input. Weights never require gradients here --
only activation paths are taped (no training).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand extents do not satisfy an operation's contract."""


class TapeError(RuntimeError):
    """Gradient request that the tape cannot serve."""


class Tensor:
    """Immutable dense array of 32-bit floats, rank >= 1, extents >= 1."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.ndim == 0:
            raise ShapeError("tensors must have rank >= 1")
        if arr.size == 0:
            raise ShapeError("tensors must have all extents >= 1")
        self.data = np.ascontiguousarray(arr, dtype=np.float32)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array (callers must not mutate tensors)."""
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("out", "inputs", "vjp_fns", "name")

    def __init__(self, out, inputs, vjp_fns, name):
        self.out = out
        self.inputs = inputs
        self.vjp_fns = vjp_fns
        self.name = name


_ACTIVE_TAPE: "Tape | None" = None


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPE


class Tape:
    """Ordered record of primitive executions with their VJP closures."""

    def __init__(self):
        self._records: list[_Record] = []
        self._known: set[int] = set()

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def watch(self, t: Tensor) -> Tensor:
        """Mark `t` as a differentiation root."""
        t.requires_grad = True
        self._known.add(id(t))
        return t

    def _append(self, out: Tensor, inputs, vjp_fns, name: str):
        self._records.append(_Record(out, inputs, vjp_fns, name))
        self._known.add(id(out))

    def __len__(self) -> int:
        return len(self._records)

    def vjp(self, output: Tensor, seed: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Pull `seed` back from `output` to every tensor in `wrt`.

        Returns one float32 gradient array per requested tensor; tensors the
        output does not depend on get zeros. Raises if the tape is empty or
        a requested tensor was never seen by it.
        """
        if not self._records:
            raise TapeError("empty tape: nothing was recorded")
        if id(output) not in self._known:
            raise TapeError("output tensor is not on this tape")
        if seed.shape != output.shape:
            raise ShapeError(
                f"seed shape {seed.shape} does not match output shape {output.shape}"
            )
        for t in wrt:
            if id(t) not in self._known:
                raise TapeError("gradient requested for a tensor not on the tape")

        grads: dict[int, np.ndarray] = {id(output): seed.data}
        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, fn in zip(rec.inputs, rec.vjp_fns):
                if fn is None:
                    continue
                contrib = fn(g)
                key = id(inp)
                held = grads.get(key)
                if held is None:
                    grads[key] = contrib
                else:
                    # closures may hand back views; never accumulate in place
                    grads[key] = held + contrib
            # keep the output's grad available if it is also a wrt target
            if any(rec.out is t for t in wrt):
                grads[id(rec.out)] = g
        return [
            np.ascontiguousarray(
                grads.get(id(t), np.zeros(t.shape, dtype=np.float32)), dtype=np.float32
            )
            for t in wrt
        ]


def record(out: Tensor, inputs: tuple, vjp_fns: tuple, name: str) -> Tensor:
    """Attach `out` to the active tape if any differentiable input demands it.

    `vjp_fns[i]` maps the output cotangent to input i's contribution; pass
    None for non-differentiable slots.
    """
    tape = _ACTIVE_TAPE
    if tape is None:
        return out
    live_fns = []
    needs = False
    for inp, fn in zip(inputs, vjp_fns):
        keep = fn is not None and isinstance(inp, Tensor) and inp.requires_grad
        live_fns.append(fn if keep else None)
        needs = needs or keep
    if needs:
        out.requires_grad = True
        tape._append(out, inputs, tuple(live_fns), name)
    return out


VjpFn = Callable[[np.ndarray], np.ndarray]
