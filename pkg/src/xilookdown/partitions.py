"""Finite partitions of {1..n}, subset systems, coagulation and frequencies.

Levels are 1-based everywhere in the public API. Each partition also keeps a
0-based ``labels`` array (level i-1 -> block index) for vectorised consumers.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

EXACT_FREQ_LIMIT = 10_000


def _canonical(blocks: Iterable[Iterable[int]]) -> tuple[tuple[int, ...], ...]:
    out = [tuple(sorted(int(x) for x in b)) for b in blocks]
    out = [b for b in out if b]
    out.sort(key=lambda b: b[0])
    return tuple(out)


class Partition:
    """A partition of {1..n} with blocks ordered by least element."""

    __slots__ = ("n", "blocks", "_labels")

    def __init__(self, n: int, blocks: Iterable[Iterable[int]], check: bool = True):
        self.n = int(n)
        self.blocks = _canonical(blocks)
        self._labels = None
        if check:
            seen: set[int] = set()
            for b in self.blocks:
                for x in b:
                    if x < 1 or x > self.n:
                        raise ValueError(f"element {x} outside 1..{self.n}")
                    if x in seen:
                        raise ValueError(f"element {x} appears twice")
                    seen.add(x)
            if len(seen) != self.n:
                missing = sorted(set(range(1, self.n + 1)) - seen)
                raise ValueError(f"blocks do not cover {missing}")

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(n, [(i,) for i in range(1, n + 1)], check=False)

    @classmethod
    def one_block(cls, n: int) -> "Partition":
        return cls(n, [tuple(range(1, n + 1))] if n else [], check=False)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        """Build from any per-level labelling (equal labels share a block)."""
        groups: dict[int, list[int]] = {}
        for i, lab in enumerate(labels, start=1):
            groups.setdefault(int(lab), []).append(i)
        return cls(len(labels), groups.values(), check=False)

    @property
    def labels(self) -> np.ndarray:
        if self._labels is None:
            lab = np.empty(self.n, dtype=np.int64)
            for k, b in enumerate(self.blocks):
                for x in b:
                    lab[x - 1] = k
            self._labels = lab
        return self._labels

    def __len__(self) -> int:
        return len(self.blocks)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Partition) and self.n == other.n and self.blocks == other.blocks

    def __hash__(self) -> int:
        return hash((self.n, self.blocks))

    def __repr__(self) -> str:
        return f"Partition({self.n}, {format_partition(self)!r})"

    def block_of(self, i: int) -> tuple[int, ...]:
        return self.blocks[self.labels[i - 1]]

    def is_trivial(self) -> bool:
        """True when every block is a singleton (no reproduction visible)."""
        return len(self.blocks) == self.n

    def non_singleton_blocks(self) -> tuple[tuple[int, ...], ...]:
        return tuple(b for b in self.blocks if len(b) >= 2)

    def minima(self) -> tuple[int, ...]:
        return tuple(b[0] for b in self.blocks)


class SubsetSystem:
    """A system of disjoint nonempty subsets of {1..n}.

    This is the restricted view of a reproduction event: the traces on
    {1..n} of the blocks of size >= 2 of a partition of the naturals.  A
    trace can be a single level, which then took part in the event alone.
    """

    __slots__ = ("n", "blocks", "_partition", "_mask")

    def __init__(self, n: int, blocks: Iterable[Iterable[int]], check: bool = True):
        self.n = int(n)
        self.blocks = _canonical(blocks)
        self._partition = None
        self._mask = None
        if check:
            seen: set[int] = set()
            for b in self.blocks:
                for x in b:
                    if x < 1 or x > self.n or x in seen:
                        raise ValueError(f"invalid subset system element {x}")
                    seen.add(x)

    @classmethod
    def empty(cls, n: int) -> "SubsetSystem":
        return cls(n, (), check=False)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SubsetSystem) and self.n == other.n and self.blocks == other.blocks

    def __hash__(self) -> int:
        return hash(("S", self.n, self.blocks))

    def __repr__(self) -> str:
        return f"SubsetSystem({self.n}, {format_partition(self.blocks)!r})"

    def __len__(self) -> int:
        return len(self.blocks)

    def __bool__(self) -> bool:
        return bool(self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    def union(self) -> frozenset[int]:
        return frozenset(x for b in self.blocks for x in b)

    @property
    def in_union(self) -> np.ndarray:
        """Boolean mask over levels 1..n (0-based positions)."""
        if self._mask is None:
            m = np.zeros(self.n, dtype=bool)
            for b in self.blocks:
                for x in b:
                    m[x - 1] = True
            self._mask = m
        return self._mask

    def partition(self) -> Partition:
        """The partition whose non-singleton blocks are those of the system."""
        if self._partition is None:
            big = [b for b in self.blocks if len(b) >= 2]
            covered = {x for b in big for x in b}
            rest = [(i,) for i in range(1, self.n + 1) if i not in covered]
            self._partition = Partition(self.n, big + rest, check=False)
        return self._partition

    def changes_gamma(self) -> bool:
        return any(len(b) >= 2 for b in self.blocks)

    def restrict(self, m: int) -> "SubsetSystem":
        return SubsetSystem(m, ([x for x in b if x <= m] for b in self.blocks), check=False)

    def permuted(self, perm: Sequence[int]) -> "SubsetSystem":
        """Image under the level map i -> perm[i-1]."""
        return SubsetSystem(self.n, ([perm[x - 1] for x in b] for b in self.blocks))


def coagulate(outer: Partition, inner: Partition) -> Partition:
    k = len(outer.blocks)
    if inner.n < k:
        raise ValueError("inner partition must index every block of the outer one")
    merged = []
    for ib in inner.blocks:
        blk: list[int] = []
        for j in ib:
            if j <= k:
                blk.extend(outer.blocks[j - 1])
        if blk:
            merged.append(blk)
    return Partition(outer.n, merged, check=False)


def restrict_to(obj: Partition | SubsetSystem, m: int, mode: str = "full"):
    """Restrict to {1..m}.

    ``full`` returns the partition of {1..m} formed by the nonempty traces.
    ``non_singleton`` returns the traces that still have two or more
    elements, as a SubsetSystem.  Event restriction, which keeps one-level
    traces of large blocks, is ``SubsetSystem.restrict``.
    """
    if m < 0 or m > obj.n:
        raise ValueError(f"cannot restrict level {obj.n} object to {m}")
    if mode not in ("full", "non_singleton"):
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(obj, SubsetSystem):
        obj = obj.partition()
    traces = [[x for x in b if x <= m] for b in obj.blocks]
    if mode == "full":
        return Partition(m, traces, check=False)
    return SubsetSystem(m, (b for b in traces if len(b) >= 2), check=False)


def alpha_index(sigma: SubsetSystem | Partition, i: int) -> int:
    """1-based index of the block of the induced partition containing level i."""
    part = sigma.partition() if isinstance(sigma, SubsetSystem) else sigma
    if not 1 <= i <= part.n:
        raise ValueError(f"level {i} outside 1..{part.n}")
    return int(part.labels[i - 1]) + 1


def partition_distance(p: Partition, q: Partition) -> float:
    if p.n != q.n:
        raise ValueError("partitions live on different truncation levels")
    for k in range(1, p.n + 1):
        if restrict_to(p, k) != restrict_to(q, k):
            return 2.0 ** (-k)
    return 0.0


@dataclass(frozen=True)
class BlockFrequencies:
    weights: tuple
    dust_weight: object = 0

    def total(self):
        return sum(self.weights) + self.dust_weight


def block_frequencies(p: Partition, separate_dust: bool = False) -> BlockFrequencies:
    exact = p.n <= EXACT_FREQ_LIMIT

    def f(c: int):
        return Fraction(c, p.n) if exact else c / p.n

    if not separate_dust:
        return BlockFrequencies(tuple(f(len(b)) for b in p.blocks), f(0))
    big = tuple(f(len(b)) for b in p.blocks if len(b) >= 2)
    single = sum(1 for b in p.blocks if len(b) == 1)
    return BlockFrequencies(big, f(single))


def format_partition(p: Partition | SubsetSystem | Sequence[Sequence[int]]) -> str:
    blocks = p.blocks if isinstance(p, (Partition, SubsetSystem)) else p
    return "|".join(",".join(str(x) for x in b) for b in blocks)


def parse_partition(text: str, n: int | None = None) -> Partition:
    text = text.strip()
    blocks = [] if not text else [[int(x) for x in part.split(",")] for part in text.split("|")]
    if n is None:
        n = max((x for b in blocks for x in b), default=0)
    return Partition(n, blocks)


def parse_subset_system(text: str, n: int) -> SubsetSystem:
    text = text.strip()
    blocks = [] if not text else [[int(x) for x in part.split(",")] for part in text.split("|")]
    return SubsetSystem(n, blocks)


def set_partitions(n: int) -> Iterator[Partition]:
    """All partitions of {1..n} via restricted growth strings."""
    if n == 0:
        yield Partition(0, [])
        return
    rgs = [0] * n

    def rec(i: int, mx: int):
        if i == n:
            yield Partition.from_labels(rgs)
            return
        for v in range(mx + 2):
            rgs[i] = v
            yield from rec(i + 1, max(mx, v))

    rgs[0] = 0
    yield from rec(1, 0)


def nontrivial_partitions(n: int) -> Iterator[Partition]:
    """Partitions of {1..n} with at least one block of size >= 2."""
    for p in set_partitions(n):
        if not p.is_trivial():
            yield p


def subset_systems(n: int, include_empty: bool = False) -> Iterator[SubsetSystem]:
    """All systems of disjoint nonempty subsets of {1..n}.

    These correspond to partitions of {1..n, *} by removing the block of *.
    """
    for p in set_partitions(n + 1):
        blocks = [b for b in p.blocks if (n + 1) not in b]
        if blocks or include_empty:
            yield SubsetSystem(n, blocks, check=False)
