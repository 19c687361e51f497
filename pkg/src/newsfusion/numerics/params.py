"""Named parameter store.

Parameters live as float32 arrays (what checkpoints serialize); compute and
gradients stay float64. ``tensor`` hands out tape leaves wired back to the
store so ``backward`` can accumulate into ``grads``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import NumericsError, Tensor

__all__ = ["ParameterStore"]


class ParameterStore:
    """dtype is float32 for real models (checkpoint storage width); gradient
    checking builds float64 stores so x +/- eps survives quantization."""

    def __init__(self, dtype=np.float32):
        if dtype not in (np.float32, np.float64):
            raise ValueError(f"unsupported parameter dtype {dtype}")
        self.dtype = dtype
        self._values: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}
        self.grads: dict[str, np.ndarray] = {}

    def create(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self._values:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.asarray(value, dtype=self.dtype)
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite init for parameter {name!r}")
        self._values[name] = arr
        self._trainable[name] = trainable

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return sorted(self._values)

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if self._trainable[n]]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, trainable: bool) -> None:
        if name not in self._values:
            raise KeyError(name)
        self._trainable[name] = trainable

    def value(self, name: str) -> np.ndarray:
        """The raw storage array (mutable in place)."""
        return self._values[name]

    def set_value(self, name: str, value: np.ndarray) -> None:
        current = self._values[name]
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != current.shape:
            raise ValueError(f"shape mismatch for {name!r}: {arr.shape} != {current.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite assignment to {name!r}")
        self._values[name] = arr

    def tensor(self, name: str) -> Tensor:
        """A float64 tape leaf for this parameter; backward() accumulates the
        leaf gradient into ``grads[name]``."""
        t = Tensor(self._values[name].astype(np.float64), requires_grad=True)
        t._sink = (self, name)
        return t

    def accumulate_grad(self, name: str, g: np.ndarray) -> None:
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for {name!r}")
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.astype(np.float64, copy=True)

    def scale_grads(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def zero_grads(self) -> None:
        self.grads.clear()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self._values.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        if set(snap) != set(self._values):
            raise ValueError("snapshot parameter set differs from store")
        for name, value in snap.items():
            self.set_value(name, value)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.names():
            yield name, self._values[name]
