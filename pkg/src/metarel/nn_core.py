"""Flat parameter vectors and finite-difference checking.

Every trainable array of a model lives in one contiguous float64 buffer.  A
:class:`Layout` records where each named array sits, so the meta-reweighting
arithmetic can run on whole vectors while the model code works on views.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, StructuralError


@dataclass(frozen=True)
class Slot:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return prod(self.shape)


class Layout:
    """Ordered, contiguous (name, offset, shape) descriptors."""

    def __init__(self, spec: Iterable[tuple[str, Sequence[int]]]):
        slots = []
        offset = 0
        for name, shape in spec:
            shape = tuple(int(s) for s in shape)
            if any(s < 0 for s in shape):
                raise StructuralError(f"negative dimension in {name}: {shape}")
            slot = Slot(name, offset, shape)
            slots.append(slot)
            offset += slot.size
        names = [s.name for s in slots]
        if len(set(names)) != len(names):
            raise StructuralError(f"duplicate slot names in {names}")
        self.slots: tuple[Slot, ...] = tuple(slots)
        self.size = offset
        self._by_name = {s.name: s for s in slots}

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> Slot:
        return self._by_name[name]

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.slots == other.slots

    def __hash__(self):
        return hash(self.slots)

    def __repr__(self):
        inner = ", ".join(f"{s.name}{list(s.shape)}" for s in self.slots)
        return f"Layout({inner})"

    def to_json(self) -> list[dict]:
        return [{"name": s.name, "offset": s.offset, "shape": list(s.shape)} for s in self.slots]

    @classmethod
    def from_json(cls, items: list[dict]) -> "Layout":
        layout = cls((it["name"], it["shape"]) for it in items)
        for slot, it in zip(layout.slots, items):
            if slot.offset != it["offset"]:
                raise StructuralError(f"slot {slot.name} offset {it['offset']} is not contiguous")
        return layout


class ParamVec:
    """A flat float64 buffer interpreted through a :class:`Layout`.

    Gradients use the same class (``GradVec`` is an alias); the two are kept
    apart only by how they are used.
    """

    __slots__ = ("data", "layout")

    def __init__(self, data: np.ndarray, layout: Layout):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 1 or data.shape[0] != layout.size:
            raise StructuralError(f"buffer of shape {data.shape} does not match layout size {layout.size}")
        self.data = data
        self.layout = layout

    @classmethod
    def zeros(cls, layout: Layout) -> "ParamVec":
        return cls(np.zeros(layout.size), layout)

    def view(self, name: str) -> np.ndarray:
        slot = self.layout[name]
        return self.data[slot.offset:slot.offset + slot.size].reshape(slot.shape)

    def copy(self) -> "ParamVec":
        return ParamVec(self.data.copy(), self.layout)

    def __len__(self):
        return self.layout.size

    def __repr__(self):
        return f"ParamVec(size={self.layout.size})"


GradVec = ParamVec


def _check_layout(x: ParamVec, y: ParamVec):
    if x.layout != y.layout:
        raise StructuralError("parameter layouts differ")


def axpy(alpha: float, x: ParamVec, y: ParamVec) -> ParamVec:
    """Return ``y + alpha * x`` as a new vector."""
    _check_layout(x, y)
    return ParamVec(y.data + alpha * x.data, y.layout)


def dot(x: ParamVec, y: ParamVec) -> float:
    _check_layout(x, y)
    return float(np.dot(x.data, y.data))


def finite_diff_grad(loss_fn: Callable[[ParamVec], float], params: ParamVec, h: float = 1e-4) -> ParamVec:
    """Central-difference gradient of ``loss_fn`` at ``params``, one coordinate at a time."""
    if not h > 0:
        raise ValueError("step h must be positive")
    base = params.data
    grad = np.empty_like(base)
    probe = base.copy()
    for i in range(base.shape[0]):
        probe[i] = base[i] + h
        up = loss_fn(ParamVec(probe, params.layout))
        probe[i] = base[i] - h
        down = loss_fn(ParamVec(probe, params.layout))
        probe[i] = base[i]
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while probing coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return ParamVec(grad, params.layout)


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Element-wise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
