"""
Deterministic random number streams.

All randomness in the package goes through ``Rng``, a thin wrapper over numpy's
counter-based Philox bit generator. A given seed yields the same draw sequence on every
platform; ``spawn`` derives independent named sub-streams so that adding draws in one
component never shifts the draws of another.
"""

import hashlib
from typing import Optional, Sequence, Tuple, Union

import numpy as np

Shape = Union[int, Tuple[int, ...]]

ALGORITHM = "philox4x64-10"


class Rng:
    """Seeded random stream (Philox 4x64, 10 rounds)."""

    def __init__(self, seed: int = 0):
        """
        Initialize stream.

        Args:
            seed: 64-bit integer seed
        """
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._generator = np.random.Generator(np.random.Philox(self.seed))
        self._spawned = 0

    @property
    def algorithm(self) -> str:
        return ALGORITHM

    def spawn(self, name: str = "") -> "Rng":
        """Derive an independent child stream keyed by spawn order and ``name``."""
        key = f"{self.seed}:{self._spawned}:{name}".encode()
        self._spawned += 1
        child_seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "little")
        return Rng(child_seed)

    def random(self, shape: Shape = ()) -> np.ndarray:
        return self._generator.random(shape)

    def uniform(self, low: float, high: float, shape: Shape = ()) -> np.ndarray:
        return self._generator.uniform(low, high, shape)

    def normal(self, shape: Shape = (), scale: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, scale, shape)

    def integers(self, low: int, high: int, shape: Optional[Shape] = None):
        """Integers in ``[low, high]`` (inclusive of ``high``)."""
        return self._generator.integers(low, high, size=shape, endpoint=True)

    def choice(self, options: Sequence, shape: Optional[Shape] = None):
        return self._generator.choice(options, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def uniform_init(self, shape: Tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
        """Weights drawn from ``U(-sqrt(1/fan_in), +sqrt(1/fan_in))``."""
        bound = np.sqrt(1.0 / max(fan_in, 1))
        return self._generator.uniform(-bound, bound, shape).astype(dtype)
