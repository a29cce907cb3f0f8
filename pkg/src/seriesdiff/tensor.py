"""Dense float64 values and named parameter collections.

Everything is stored row-major as flat 64-bit float arrays so that
checkpoint files have a single unambiguous byte layout.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator

import numpy as np


class Tensor:
    """Immutable dense value: a shape plus a flat row-major float64 array."""

    __slots__ = ("shape", "data")

    def __init__(self, shape: Iterable[int], data) -> None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ValueError(f"shape entries must be positive, got {shape}")
        flat = np.ascontiguousarray(data, dtype=np.float64).reshape(-1).copy()
        if flat.size != math.prod(shape):
            raise ValueError(
                f"shape {shape} needs {math.prod(shape)} entries, got {flat.size}"
            )
        if not np.all(np.isfinite(flat)):
            raise ValueError("tensor entries must be finite")
        flat.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", flat)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("Tensor is immutable")

    @classmethod
    def from_array(cls, arr) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        shape = arr.shape if arr.ndim > 0 else (1,)
        return cls(shape, arr.reshape(-1))

    @property
    def size(self) -> int:
        return self.data.size

    def as_array(self) -> np.ndarray:
        """Read-only view reshaped to ``shape``."""
        return self.data.reshape(self.shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class ParamSet:
    """Ordered, uniquely named collection of tensors.

    Iteration order is insertion order and is part of the contract:
    ``flatten``/``unflatten`` round-trip exactly and checkpoints rely on it.
    """

    __slots__ = ("_items",)

    def __init__(self, items: Iterable[tuple[str, Tensor]] | dict[str, Tensor]) -> None:
        pairs = list(items.items()) if isinstance(items, dict) else list(items)
        names = [name for name, _ in pairs]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        for name, tensor in pairs:
            if not isinstance(tensor, Tensor):
                raise TypeError(f"parameter {name!r} is not a Tensor")
        self._items = dict(pairs)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParamSet":
        return cls({name: Tensor.from_array(a) for name, a in arrays.items()})

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._items.keys())

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._items.items())

    @property
    def total_size(self) -> int:
        return sum(t.size for t in self._items.values())

    def flatten(self) -> np.ndarray:
        """All parameters concatenated into one flat float64 vector."""
        if not self._items:
            return np.zeros(0)
        return np.concatenate([t.data for t in self._items.values()])

    def unflatten(self, flat: np.ndarray) -> "ParamSet":
        """Rebuild a ParamSet with this set's names/shapes from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.size != self.total_size:
            raise ValueError(
                f"flat vector has {flat.size} entries, expected {self.total_size}"
            )
        out, pos = [], 0
        for name, t in self._items.items():
            out.append((name, Tensor(t.shape, flat[pos : pos + t.size])))
            pos += t.size
        return ParamSet(out)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.as_array().copy() for name, t in self._items.items()}

    def __repr__(self) -> str:
        return f"ParamSet({len(self._items)} tensors, {self.total_size} scalars)"
