"""Backward Xi-coalescent simulation, equilibrium trees and Newick output."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .event_stream import EventSampler, EventStream
from .partitions import Partition, coagulate
from .rng import as_seed
from .xi_model import XiMeasure, classify_dust

MAX_EVENTS = 10_000_000


class CoalescentError(RuntimeError):
    """The backward process could not reach its target."""


class _Samplers:
    """Event samplers keyed by the current number of blocks."""

    def __init__(self, xi: XiMeasure, scope: str):
        self.xi, self.scope = xi, scope
        self._cache: dict[int, EventSampler] = {}

    def __call__(self, b: int) -> EventSampler:
        s = self._cache.get(b)
        if s is None:
            s = self._cache[b] = EventSampler(self.xi, b, self.scope)
        return s


@dataclass
class CoalescentPath:
    n: int
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def state_at(self, t: float) -> Partition:
        state = Partition.singletons(self.n)
        for tau, p in zip(self.times, self.states):
            if tau > t:
                break
            state = p
        return state

    def block_counts(self, grid: Sequence[float]) -> np.ndarray:
        return np.array([len(self.state_at(t)) for t in grid])


def simulate(xi: XiMeasure, n: int, horizon: float | None = None, seed=0, samplers=None) -> CoalescentPath:
    """Run the block-counting chain until the horizon or the MRCA."""
    if n < 2:
        raise ValueError("a coalescent needs at least two leaves")
    rng = as_seed(seed).generator()
    samplers = samplers or _Samplers(xi, "changes_gamma")
    path = CoalescentPath(n)
    state = Partition.singletons(n)
    t = 0.0
    for _ in range(MAX_EVENTS):
        b = len(state)
        if b == 1:
            return path
        sampler = samplers(b)
        if sampler.rate <= 0:
            if horizon is None:
                raise CoalescentError("no merger can occur: Xi has no mass")
            return path
        t += rng.exponential(1.0 / sampler.rate)
        if horizon is not None and t > horizon:
            return path
        ev = sampler.sample(rng, t)
        state = coagulate(state, ev.full_restriction)
        path.times.append(t)
        path.states.append(state)
    raise CoalescentError("event cap reached before the MRCA")


@dataclass
class CoalescentTree:
    n: int
    rho: np.ndarray
    u: np.ndarray
    r: np.ndarray
    height: float = 0.0


def equilibrium_tree(xi: XiMeasure, n: int, seed=0, samplers=None) -> CoalescentTree:
    """Sample the genealogy of n individuals in the stationary population.

    rho_ij is twice the coalescence time of i and j.  u_i is the time back to
    the first event that involves the lineage of i: any event touching it
    when Xi has dust, otherwise the first merger of that lineage.
    """
    if n < 2:
        raise ValueError("an equilibrium tree needs at least two leaves")
    if xi.total_mass <= 0:
        raise CoalescentError("Xi(simplex) = 0: lineages never meet")
    dust = classify_dust(xi) == "dust"
    scope = "touches_level" if dust else "changes_gamma"
    samplers = samplers or _Samplers(xi, scope)
    rng = as_seed(seed).generator()
    blocks: list[list[int]] = [[i] for i in range(n)]
    rho = np.zeros((n, n))
    u = np.full(n, np.nan)
    t = 0.0
    for _ in range(MAX_EVENTS):
        b = len(blocks)
        if b == 1:
            break
        sampler = samplers(b)
        if sampler.rate <= 0:
            raise CoalescentError("no event can occur among the remaining lineages")
        t += rng.exponential(1.0 / sampler.rate)
        ev = sampler.sample(rng, t)
        sig = ev.sigma
        if dust:
            involved = sig.in_union
        else:
            lab = sig.partition().labels
            involved = np.bincount(lab)[lab] >= 2
        for k in np.flatnonzero(involved):
            for leaf in blocks[k]:
                if np.isnan(u[leaf]):
                    u[leaf] = t
        if not sig.changes_gamma():
            continue
        merged = []
        for blk in sig.partition().blocks:
            leaves = [leaf for k in blk for leaf in blocks[k - 1]]
            if len(blk) > 1:
                groups = [blocks[k - 1] for k in blk]
                for a in range(len(groups)):
                    for c in range(a + 1, len(groups)):
                        ia, ic = np.array(groups[a]), np.array(groups[c])
                        rho[np.ix_(ia, ic)] = 2.0 * t
                        rho[np.ix_(ic, ia)] = 2.0 * t
            merged.append(leaves)
        blocks = merged
    else:
        raise CoalescentError("event cap reached before the MRCA")
    r = rho - u[:, None] - u[None, :]
    np.fill_diagonal(r, 0.0)
    return CoalescentTree(n, rho, u, r, t)


def tree_from_two_sided(stream: EventStream, t: float) -> tuple[np.ndarray, bool]:
    """Distance matrix at time t from a two-sided stream started at -lookback.

    Returns the matrix and whether every pair met inside the window.
    """
    from .lookdown import PlainState, evolve

    t0 = stream.window[0]
    state = PlainState(np.zeros((stream.n, stream.n)), t0)
    rho = evolve(state, stream, t).final.rho
    off = ~np.eye(stream.n, dtype=bool)
    return rho, bool(np.all(rho[off] < 2.0 * (t - t0)))


@dataclass
class ExternalBranchStats:
    u: np.ndarray
    mean: float
    quantiles: dict
    branchpoints: Partition


def external_branches(tree: CoalescentTree) -> ExternalBranchStats:
    adj = tree.r == 0.0
    lab = list(range(tree.n))
    for i in range(tree.n):
        for j in range(i):
            if adj[i, j]:
                lab[i] = lab[j]
                break
    q = {p: float(np.quantile(tree.u, p)) for p in (0.05, 0.5, 0.95)}
    return ExternalBranchStats(tree.u.copy(), float(tree.u.mean()), q, Partition.from_labels(lab))


@dataclass
class BlockProfile:
    rows: list
    stabilizes: bool
    ratio: float

    def to_csv(self) -> str:
        lines = ["n,t,mean_blocks,q05,q95"]
        for n, t, m, lo, hi in self.rows:
            lines.append(f"{n},{t!r},{m!r},{lo!r},{hi!r}")
        return "\n".join(lines) + "\n"


def block_count_profile(xi: XiMeasure, ns: Sequence[int], grid: Sequence[float], replicates: int,
                        seed=0, tolerance: float = 0.15) -> BlockProfile:
    """Block counts on a time grid for several sample sizes.

    The probe reports stabilization when the mean count at the last grid time
    grows by less than ``tolerance`` (relative) from the second largest to
    the largest n.  It is an empirical indication, not a classification.
    """
    seed = as_seed(seed)
    grid = list(grid)
    samplers = _Samplers(xi, "changes_gamma")
    rows = []
    last = {}
    for ni, n in enumerate(ns):
        counts = np.array([simulate(xi, n, max(grid), seed.child(ni).replicate(r), samplers).block_counts(grid)
                           for r in range(replicates)])
        for gi, t in enumerate(grid):
            col = counts[:, gi]
            rows.append((n, t, float(col.mean()), float(np.quantile(col, 0.05)), float(np.quantile(col, 0.95))))
        last[n] = float(counts[:, -1].mean())
    ordered = sorted(ns)
    ratio = last[ordered[-1]] / last[ordered[-2]] if len(ordered) > 1 else 1.0
    return BlockProfile(rows, ratio < 1.0 + tolerance, ratio)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_newick(tree, labels: Sequence[str] | None = None) -> str:
    rho = tree.rho if isinstance(tree, CoalescentTree) else np.asarray(tree, dtype=float)
    from .mmspace import tree_checks

    if not tree_checks(rho, tol=1e-12 * max(1.0, float(rho.max(initial=0.0)))).ultrametric:
        raise ValueError("distance matrix is not ultrametric")
    n = len(rho)
    labels = [str(i + 1) for i in range(n)] if labels is None else list(labels)

    def build(members: list[int]) -> tuple[str, float]:
        if len(members) == 1:
            return labels[members[0]], 0.0
        sub = rho[np.ix_(members, members)]
        top = float(sub.max())
        h = top / 2.0
        rest = list(members)
        parts = []
        while rest:
            first = rest[0]
            grp = [m for m in rest if rho[first, m] < top]
            rest = [m for m in rest if m not in grp]
            parts.append(grp)
        if len(parts) == 1:
            # all pairwise distances equal zero: polytomy at height zero
            parts = [[m] for m in members]
        kids = []
        for grp in parts:
            txt, ch = build(grp)
            kids.append(f"{txt}:{_fmt(h - ch)}")
        return "(" + ",".join(kids) + ")", h

    txt, _ = build(list(range(n)))
    return txt + ";"


def parse_newick(text: str) -> tuple[list[str], np.ndarray]:
    """Leaf labels in order of appearance and the path-length distance matrix."""
    tokens = re.findall(r"\(|\)|,|;|:[^,();]+|[^,():;]+", text.strip())
    pos = 0
    leaves: list[str] = []
    up: dict[int, tuple[int, float]] = {}  # node -> (parent, edge length)
    leaf_ids: list[int] = []
    count = 0

    def node() -> tuple[int, float]:
        nonlocal pos, count
        me = count
        count += 1
        if tokens[pos] == "(":
            pos += 1
            while True:
                kid, w = node()
                up[kid] = (me, w)
                tok = tokens[pos]
                pos += 1
                if tok == ")":
                    break
                if tok != ",":
                    raise ValueError(f"unexpected token {tok!r}")
            if tokens[pos] not in (",", ")", ";") and not tokens[pos].startswith(":"):
                pos += 1  # internal node label
        else:
            leaves.append(tokens[pos].strip())
            leaf_ids.append(me)
            pos += 1
        length = 0.0
        if pos < len(tokens) and tokens[pos].startswith(":"):
            length = float(tokens[pos][1:])
            pos += 1
        return me, length

    node()
    if pos >= len(tokens) or tokens[pos] != ";":
        raise ValueError("newick string must end with ';'")

    def depths(v: int) -> dict[int, float]:
        out = {v: 0.0}
        acc = 0.0
        while v in up:
            v, w = up[v][0], acc + up[v][1]
            acc = w
            out[v] = acc
        return out

    anc = [depths(v) for v in leaf_ids]
    k = len(leaf_ids)
    mat = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            mat[i, j] = mat[j, i] = min(anc[i][a] + anc[j][a] for a in anc[i] if a in anc[j])
    return leaves, mat
