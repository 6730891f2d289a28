"""Flat parameter vectors with a named segment layout."""
from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from ..errors import ContractViolation

__all__ = ["Layout", "ParamVector"]


@dataclass(frozen=True)
class Layout:
    """Ordered ``name -> shape`` segments packed contiguously."""

    segments: tuple[tuple[str, tuple[int, ...]], ...]

    @classmethod
    def build(cls, items):
        return cls(tuple((name, tuple(int(s) for s in shape)) for name, shape in items))

    @property
    def size(self) -> int:
        return sum(prod(shape) for _, shape in self.segments)

    def ranges(self):
        """Yield ``(name, start, stop, shape)``; contiguous, no gaps or overlaps."""
        start = 0
        for name, shape in self.segments:
            stop = start + prod(shape)
            yield name, start, stop, shape
            start = stop

    def unpack(self, flat) -> dict:
        """Views of ``flat`` (ndarray or tape Var) keyed by segment name."""
        if flat.shape != (self.size,):
            raise ContractViolation(f"parameter length {flat.shape} != layout size {self.size}")
        return {name: flat[a:b].reshape(shape) for name, a, b, shape in self.ranges()}

    def pack(self, arrays: dict) -> np.ndarray:
        out = np.empty(self.size)
        for name, a, b, shape in self.ranges():
            arr = np.asarray(arrays[name], dtype=float)
            if arr.shape != shape:
                raise ContractViolation(f"segment {name}: shape {arr.shape} != {shape}")
            out[a:b] = arr.ravel()
        return out


@dataclass
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.size,):
            raise ContractViolation("values do not cover the layout")

    def __len__(self):
        return self.layout.size

    def segments(self) -> dict:
        return self.layout.unpack(self.values)
