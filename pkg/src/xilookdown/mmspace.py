"""Finite (marked) metric measure spaces and exact small-instance distances.

The Prohorov distance uses the coupling form inf{eps : exists nu with
nu{d > eps} < eps}.  Gromov-Prohorov (optionally marked) and GHP distances
use the relation and correspondence forms: a relation R with
(1/2) dis R <= eps carrying coupled mass >= 1 - eps (for marked spaces only
pairs whose marks differ by at most eps count).
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

EXACT_MAX_POINTS = 6
FLOW_TOL = 1e-14


@dataclass
class FiniteMMSpace:
    dist: np.ndarray
    weights: np.ndarray
    marks: np.ndarray | None = None

    def __post_init__(self):
        self.dist = np.array(self.dist, dtype=float)
        self.weights = np.array(self.weights, dtype=float)
        if self.marks is not None:
            self.marks = np.array(self.marks, dtype=float)
        m = len(self.weights)
        if self.dist.shape != (m, m):
            raise ValueError("distance matrix and weight vector sizes differ")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must form a probability vector")
        if not np.allclose(self.dist, self.dist.T, rtol=0, atol=0) or np.any(np.diag(self.dist) != 0):
            raise ValueError("distance matrix must be symmetric with zero diagonal")
        if np.any(self.dist < 0):
            raise ValueError("distances must be nonnegative")
        if triangle_violation(self.dist) > 1e-9:
            raise ValueError("triangle inequality violated")
        if self.marks is not None and (self.marks.shape != (m,) or np.any(self.marks < 0)):
            raise ValueError("marks must be a nonnegative vector of matching length")

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def marked(self) -> bool:
        return self.marks is not None

    def support(self) -> "FiniteMMSpace":
        """The subspace of positive-weight points."""
        keep = np.flatnonzero(self.weights > 0)
        marks = None if self.marks is None else self.marks[keep]
        return FiniteMMSpace(self.dist[np.ix_(keep, keep)], self.weights[keep], marks)

    def to_json(self) -> dict:
        out = {"dist": self.dist.tolist(), "w": self.weights.tolist()}
        if self.marks is not None:
            out["marks"] = self.marks.tolist()
        return out


def space_from_json(obj) -> FiniteMMSpace:
    if isinstance(obj, str):
        obj = json.loads(obj)
    return FiniteMMSpace(obj["dist"], obj["w"], obj.get("marks"))


def triangle_violation(d: np.ndarray) -> float:
    if len(d) < 3:
        return 0.0
    worst = 0.0
    for y in range(len(d)):
        viol = d - (d[:, y][:, None] + d[y, :][None, :])
        worst = max(worst, float(viol.max()))
    return worst


@dataclass(frozen=True)
class Correspondence:
    pairs: frozenset
    full_cover: bool = False

    @classmethod
    def of(cls, pairs: Iterable[tuple], sizes: tuple | None = None) -> "Correspondence":
        pairs = frozenset((int(i), int(j)) for i, j in pairs)
        cover = False
        if sizes is not None:
            cover = {i for i, _ in pairs} == set(range(sizes[0])) and {j for _, j in pairs} == set(range(sizes[1]))
        return cls(pairs, cover)


def distortion(rel, A: FiniteMMSpace, B: FiniteMMSpace) -> float:
    """max |d_A(x,y) - d_B(x',y')| over pairs of related pairs; 0 if empty."""
    pairs = list(rel.pairs if isinstance(rel, Correspondence) else rel)
    if not pairs:
        return 0.0
    ia = np.array([p[0] for p in pairs])
    ib = np.array([p[1] for p in pairs])
    return float(np.abs(A.dist[np.ix_(ia, ia)] - B.dist[np.ix_(ib, ib)]).max())


def max_transport(p: np.ndarray, q: np.ndarray, allowed: np.ndarray) -> float:
    """Largest mass movable from p to q along allowed (i, j) pairs (max flow)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m, k = len(p), len(q)
    N = m + k + 2
    S, T = 0, N - 1
    cap = np.zeros((N, N))
    cap[S, 1:m + 1] = p
    cap[m + 1:m + k + 1, T] = q
    big = float(p.sum() + q.sum() + 1.0)
    ii, jj = np.nonzero(allowed)
    cap[ii + 1, jj + m + 1] = big
    flow = 0.0
    while True:
        parent = np.full(N, -1)
        parent[S] = S
        dq = deque([S])
        while dq and parent[T] < 0:
            v = dq.popleft()
            for w in np.flatnonzero((cap[v] > FLOW_TOL) & (parent < 0)):
                parent[w] = v
                dq.append(w)
        if parent[T] < 0:
            return flow
        bott = math.inf
        w = T
        while w != S:
            v = parent[w]
            bott = min(bott, cap[v, w])
            w = v
        w = T
        while w != S:
            v = parent[w]
            cap[v, w] -= bott
            cap[w, v] += bott
            w = v
        flow += bott


def _first_true(lo: int, hi: int, pred) -> int:
    """Smallest index in [lo, hi] with pred true; pred is monotone and pred(hi) holds."""
    while lo < hi:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def prohorov_distance(p, q, space) -> float:
    """Exact Prohorov distance between two weight vectors on one finite space."""
    dist = space.dist if isinstance(space, FiniteMMSpace) else np.asarray(space, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    levels = np.unique(np.concatenate([[0.0], dist.ravel()]))
    cache: dict[int, float] = {}

    def deficit(k: int) -> float:
        if k not in cache:
            cache[k] = max(0.0, 1.0 - max_transport(p, q, dist <= levels[k]))
        return cache[k]

    def ok(k: int) -> bool:
        nxt = levels[k + 1] if k + 1 < len(levels) else math.inf
        return deficit(k) < nxt

    k = _first_true(0, len(levels) - 1, ok)
    return float(max(levels[k], deficit(k)))


@dataclass
class DistanceResult:
    value: float | None
    lower: float
    upper: float
    mode: str

    def __float__(self) -> float:
        return float(self.value if self.value is not None else self.upper)

    def to_json(self) -> dict:
        return {"mode": self.mode, "value": self.value, "lower": self.lower, "upper": self.upper}


def _pair_tables(A: FiniteMMSpace, B: FiniteMMSpace, marked: bool, keep_zero: bool):
    ia = np.arange(A.size) if keep_zero else np.flatnonzero(A.weights > 0)
    ib = np.arange(B.size) if keep_zero else np.flatnonzero(B.weights > 0)
    verts = [(int(i), int(j)) for i in ia for j in ib]
    vi = np.array([v[0] for v in verts])
    vj = np.array([v[1] for v in verts])
    half = 0.5 * np.abs(A.dist[np.ix_(vi, vi)] - B.dist[np.ix_(vj, vj)])
    gap = np.abs(A.marks[vi] - B.marks[vj]) if marked else np.zeros(len(verts))
    return verts, vi, vj, half, gap


def _clique_flow(A, B, vi, vj, members) -> float:
    allowed = np.zeros((A.size, B.size), dtype=bool)
    allowed[vi[members], vj[members]] = True
    return max_transport(A.weights, B.weights, allowed)


def _exact_relation_search(A, B, marked: bool, cover: bool) -> float:
    verts, vi, vj, half, gap = _pair_tables(A, B, marked, keep_zero=cover)
    crit = np.unique(np.concatenate([[0.0], half.ravel(), gap]))
    cache: dict[int, float] = {}

    def best(k: int) -> float:
        if k in cache:
            return cache[k]
        c = crit[k]
        live = np.flatnonzero(gap <= c)
        g = nx.Graph()
        g.add_nodes_from(live.tolist())
        sub = half[np.ix_(live, live)] <= c
        a, b = np.nonzero(np.triu(sub, 1))
        g.add_edges_from(zip(live[a].tolist(), live[b].tolist()))
        val = -math.inf
        for clique in nx.find_cliques(g):
            members = np.array(clique)
            if cover and (len(set(vi[members])) < A.size or len(set(vj[members])) < B.size):
                continue
            val = max(val, _clique_flow(A, B, vi, vj, members))
            if val >= 1.0 - 1e-15:
                break
        cache[k] = val
        return val

    def ok(k: int) -> bool:
        nxt = crit[k + 1] if k + 1 < len(crit) else math.inf
        return 1.0 - best(k) < nxt

    k = _first_true(0, len(crit) - 1, ok)
    return float(max(crit[k], 1.0 - best(k), 0.0))


def _distance_law(S: FiniteMMSpace) -> tuple[np.ndarray, np.ndarray]:
    w = np.outer(S.weights, S.weights).ravel()
    return S.dist.ravel(), w


def _line_prohorov(xa, wa, xb, wb) -> float:
    pts = np.unique(np.concatenate([xa, xb]))
    p = np.zeros(len(pts))
    q = np.zeros(len(pts))
    np.add.at(p, np.searchsorted(pts, xa), wa)
    np.add.at(q, np.searchsorted(pts, xb), wb)
    p /= p.sum()
    q /= q.sum()
    return prohorov_distance(p, q, np.abs(pts[:, None] - pts[None, :]))


def _lower_bound(A, B, marked: bool) -> float:
    lb = 0.5 * _line_prohorov(*_distance_law(A), *_distance_law(B))
    if marked:
        lb = max(lb, _line_prohorov(A.marks, A.weights, B.marks, B.weights))
    return lb


def _greedy_upper(A, B, marked: bool, cover: bool, n_thresholds: int = 24) -> float:
    verts, vi, vj, half, gap = _pair_tables(A, B, marked, keep_zero=cover)
    crit = np.unique(np.concatenate([[0.0], half.ravel(), gap]))
    if len(crit) > n_thresholds:
        crit = np.unique(np.quantile(crit, np.linspace(0, 1, n_thresholds), method="nearest"))
    score = np.minimum(A.weights[vi], B.weights[vj])
    order = np.argsort(-score, kind="stable")
    best = math.inf
    for c in crit:
        chosen: list[int] = []
        for v in order:
            if gap[v] <= c and all(half[v, u] <= c for u in chosen):
                chosen.append(int(v))
        if cover:
            for side, idx, size in ((0, vi, A.size), (1, vj, B.size)):
                for pt in range(size):
                    if any(idx[u] == pt for u in chosen):
                        continue
                    cand = np.flatnonzero(idx == pt)
                    worst = [max((half[v, u] for u in chosen), default=0.0) for v in cand]
                    chosen.append(int(cand[int(np.argmin(worst))]))
        members = np.array(chosen)
        d = float(half[np.ix_(members, members)].max()) if len(members) else 0.0
        flow = _clique_flow(A, B, vi, vj, members)
        best = min(best, max(c, d, 1.0 - flow))
    if cover:
        full = 0.5 * float(np.abs(A.dist[np.ix_(vi, vi)] - B.dist[np.ix_(vj, vj)]).max())
        best = min(best, full)
    return float(best)


def _solve(A, B, marked: bool, cover: bool, exact_limit: int) -> DistanceResult:
    if marked and (A.marks is None or B.marks is None):
        raise ValueError("marked distance needs marks on both spaces")
    if max(A.size, B.size) <= exact_limit:
        v = _exact_relation_search(A, B, marked, cover)
        return DistanceResult(v, v, v, "exact")
    lo = _lower_bound(A, B, marked)
    hi = _greedy_upper(A, B, marked, cover)
    return DistanceResult(None, lo, max(lo, hi), "bounds")


def gromov_prohorov_small(A: FiniteMMSpace, B: FiniteMMSpace, marked: bool = False,
                          exact_limit: int = EXACT_MAX_POINTS) -> DistanceResult:
    """Gromov-Prohorov distance (marked variant when ``marked``); exact up to 6 points."""
    return _solve(A, B, marked, cover=False, exact_limit=exact_limit)


def ghp_small(A: FiniteMMSpace, B: FiniteMMSpace, support_only: bool = False,
              exact_limit: int = EXACT_MAX_POINTS) -> DistanceResult:
    """Gromov-Hausdorff-Prohorov distance over full correspondences.

    ``support_only`` drops zero-weight points first; by default they are kept
    because the correspondence must cover the whole space.
    """
    if support_only:
        A, B = A.support(), B.support()
    return _solve(A, B, False, cover=True, exact_limit=exact_limit)


def sample_distance_matrix(space: FiniteMMSpace, k: int, rng: np.random.Generator, replace: bool = True):
    """Distance matrix (and marks, or None) of k weight-distributed draws."""
    if k < 1:
        raise ValueError("k must be positive")
    idx = rng.choice(space.size, size=k, replace=replace, p=space.weights)
    mat = space.dist[np.ix_(idx, idx)]
    marks = None if space.marks is None else space.marks[idx]
    return mat, marks


def finite_space_from_matrix(rho, u=None, tol: float = 1e-9) -> FiniteMMSpace:
    """Uniform measure on the points of a distance matrix, zero-distance points merged."""
    rho = np.array(rho, dtype=float)
    k = rho.shape[0]
    if rho.shape != (k, k) or not np.array_equal(rho, rho.T) or np.any(np.diag(rho) != 0):
        raise ValueError("expected a symmetric matrix with zero diagonal")
    if triangle_violation(rho) > tol:
        raise ValueError("triangle inequality violated")
    marks = None if u is None else np.array(u, dtype=float)
    rep = list(range(k))
    for i in range(k):
        for j in range(i):
            if rho[i, j] == 0 and (marks is None or marks[i] == marks[j]) and rep[j] == j:
                rep[i] = j
                break
    reps = sorted(set(rep))
    pos = {r: a for a, r in enumerate(reps)}
    w = np.zeros(len(reps))
    for i in range(k):
        w[pos[rep[i]]] += 1.0
    idx = np.array(reps)
    rho_s = np.maximum(rho[np.ix_(idx, idx)], 0.0)
    return FiniteMMSpace(rho_s, w / k, None if marks is None else marks[idx])


@dataclass
class TreeReport:
    ultrametric: bool
    four_point: bool
    ultrametric_violation: float
    four_point_violation: float


def tree_checks(obj, tol: float = 0.0, four_point_tol: float = 1e-9, max_quadruples: int = 200_000) -> TreeReport:
    d = obj.dist if isinstance(obj, FiniteMMSpace) else np.asarray(obj, dtype=float)
    m = len(d)
    uv = 0.0
    for y in range(m):
        viol = d - np.maximum(d[:, y][:, None], d[y, :][None, :])
        uv = max(uv, float(viol.max()))
    fv = 0.0
    if m >= 2:
        if m ** 4 <= max_quadruples:
            for x in range(m):
                a = d[x][:, None, None] + d[None, :, :]           # d(x,y) + d(z,w)
                b = d[x][None, :, None] + d[:, None, :]           # d(x,z) + d(y,w)
                c = d[x][None, None, :] + d[:, :, None]           # d(x,w) + d(y,z)
                stack = np.sort(np.stack([a, b, c]), axis=0)
                fv = max(fv, float((stack[2] - stack[1]).max()))
        else:
            rng = np.random.default_rng(0)
            q = rng.integers(0, m, size=(max_quadruples, 4))
            x, y, z, w = q.T
            sums = np.sort(np.stack([d[x, y] + d[z, w], d[x, z] + d[y, w], d[x, w] + d[y, z]]), axis=0)
            fv = float((sums[2] - sums[1]).max())
    scale = max(1.0, float(d.max()) if m else 1.0)
    return TreeReport(uv <= tol, fv <= four_point_tol * scale, uv, fv)
