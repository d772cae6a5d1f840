"""Seeded sampling of support elements."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .jets import SupportElement


@dataclass(frozen=True)
class SampleSpec:
    """Base points uniform in a box, fibers uniform on the unit sphere scaled by a radius.

    Radii are drawn uniformly from ``radii`` so homogeneity is exercised away
    from the unit sphere and the zero section is never touched.
    """

    count: int = 100
    seed: int = 0
    low: Sequence[float] | float = -1.0
    high: Sequence[float] | float = 1.0
    radii: tuple[float, float] = (0.5, 2.0)

    def draw(self, dim: int) -> SupportElement:
        rng = np.random.default_rng(self.seed)
        low = np.broadcast_to(np.asarray(self.low, dtype=float), (dim,))
        high = np.broadcast_to(np.asarray(self.high, dtype=float), (dim,))
        x = low + (high - low) * rng.random((self.count, dim))
        direction = rng.standard_normal((self.count, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.uniform(self.radii[0], self.radii[1], size=(self.count, 1))
        return SupportElement(x, direction * radius)

    def with_seed(self, seed: int) -> "SampleSpec":
        return SampleSpec(self.count, seed, self.low, self.high, self.radii)
