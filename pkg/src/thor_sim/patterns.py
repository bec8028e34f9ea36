"""64-element zero/non-zero masks.

A :class:`TilePattern` stores the mask as a 64-bit integer (bit ``i`` set means
element ``i`` is non-zero) so that alignment counts between weights and inputs
reduce to a single AND and popcount.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import PatternError

WIDTH = 64
FULL = (1 << WIDTH) - 1


def _popcount(x: int) -> int:
    return bin(x).count("1")


@dataclass(frozen=True)
class TilePattern:
    bits: int

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not 0 <= int(self.bits) <= FULL:
            raise PatternError(f"pattern bits must be an integer in [0, 2**{WIDTH})")
        object.__setattr__(self, "bits", int(self.bits))

    @classmethod
    def from_bools(cls, mask: Iterable[bool]) -> "TilePattern":
        values = list(mask)
        if len(values) != WIDTH:
            raise PatternError(f"mask must have exactly {WIDTH} elements, got {len(values)}")
        bits = 0
        for i, v in enumerate(values):
            if v:
                bits |= 1 << i
        return cls(bits)

    @classmethod
    def from_indices(cls, indices: Iterable[int]) -> "TilePattern":
        bits = 0
        for i in indices:
            if not 0 <= i < WIDTH:
                raise PatternError(f"index {i} out of range")
            bits |= 1 << i
        return cls(bits)

    @classmethod
    def ones(cls) -> "TilePattern":
        return cls(FULL)

    @classmethod
    def zeros(cls) -> "TilePattern":
        return cls(0)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "TilePattern":
        """Uniform over all 2**64 masks (independent fair coin per element)."""
        return cls(int(rng.integers(0, FULL, dtype=np.uint64, endpoint=True)))

    @property
    def mask(self) -> tuple[bool, ...]:
        return tuple(bool(self.bits >> i & 1) for i in range(WIDTH))

    def to_array(self) -> np.ndarray:
        return np.array(self.mask, dtype=bool)

    @property
    def nonzeros(self) -> int:
        return _popcount(self.bits)

    @property
    def sparsity(self) -> float:
        """Fraction of zero elements."""
        return (WIDTH - self.nonzeros) / WIDTH

    def complement(self) -> "TilePattern":
        return TilePattern(~self.bits & FULL)

    def __invert__(self) -> "TilePattern":
        return self.complement()

    def __and__(self, other: "TilePattern") -> "TilePattern":
        return TilePattern(self.bits & _as_pattern(other).bits)

    def __len__(self) -> int:
        return WIDTH

    def __getitem__(self, i: int) -> bool:
        if not -WIDTH <= i < WIDTH:
            raise IndexError(i)
        return bool(self.bits >> (i % WIDTH) & 1)

    def __iter__(self):
        return iter(self.mask)

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.mask)


def _as_pattern(value) -> TilePattern:
    if isinstance(value, TilePattern):
        return value
    if isinstance(value, (int, np.integer)):
        return TilePattern(int(value))
    return TilePattern.from_bools(value)


def as_pattern(value: TilePattern | int | Sequence[bool]) -> TilePattern:
    """Coerce an int or 64-element boolean sequence into a TilePattern."""
    return _as_pattern(value)


def aligned_count(weights: TilePattern, inputs: TilePattern) -> int:
    """Number of positions where both operands are non-zero."""
    return _popcount(_as_pattern(weights).bits & _as_pattern(inputs).bits)


def effective_sparsity(weights, inputs) -> float:
    """Fraction of product positions skippable because one operand is zero.

    A position contributes work only when the weight and the input element are
    both non-zero.
    """
    return 1.0 - aligned_count(weights, inputs) / WIDTH


def hamming_distance(a, b) -> int:
    return _popcount(_as_pattern(a).bits ^ _as_pattern(b).bits)
