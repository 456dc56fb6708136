"""Counter-based, splittable random streams keyed by (root_seed, stream_id)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SeedSpec:
    root_seed: int
    stream_id: int = 0
    sub: tuple = ()

    def __post_init__(self):
        for v in (self.root_seed, self.stream_id, *self.sub):
            if not 0 <= int(v) <= MASK64:
                raise ValueError(f"seed component {v} is not a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.root_seed), spawn_key=(int(self.stream_id), *map(int, self.sub)))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "SeedSpec":
        return SeedSpec(self.root_seed, self.stream_id, self.sub + tuple(int(k) for k in keys))

    def replicate(self, r: int) -> "SeedSpec":
        """Stream for replicate r; keeps the sub-path."""
        return SeedSpec(self.root_seed, int(r), self.sub)

    def to_json(self) -> dict:
        return {"root_seed": self.root_seed, "stream_id": self.stream_id, "sub": list(self.sub)}


def as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    return SeedSpec(int(seed))
