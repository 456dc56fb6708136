"""Pathwise lookdown evolution of distance matrices and marked distance matrices.

Two state types are used:

* ``PlainState``: the genealogical distance matrix rho among levels 1..n.
* ``MarkedState``: the pair (r, u) with rho_ij = u_i + r_ij + u_j for i != j.
  The vector u is stored as reset times (``birth``), so u_i = time - birth_i
  and equality of u-values is an exact comparison of event times.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .event_stream import EventStream, ReproductionEvent
from .partitions import Partition, SubsetSystem

ESCAPED = None


def compose(r: np.ndarray, u: np.ndarray) -> np.ndarray:
    rho = u[:, None] + r + u[None, :]
    np.fill_diagonal(rho, 0.0)
    return rho


@dataclass
class PlainState:
    rho: np.ndarray
    time: float = 0.0

    @property
    def n(self) -> int:
        return self.rho.shape[0]

    def copy(self) -> "PlainState":
        return PlainState(self.rho.copy(), self.time)


@dataclass
class MarkedState:
    r: np.ndarray
    birth: np.ndarray
    time: float = 0.0
    t0: float = 0.0

    @classmethod
    def from_ru(cls, r, u, time: float = 0.0) -> "MarkedState":
        r = np.array(r, dtype=float)
        u = np.array(u, dtype=float)
        if np.any(u < 0):
            raise ValueError("marks must be nonnegative")
        return cls(r, time - u, float(time), float(time))

    @classmethod
    def zero(cls, n: int, time: float = 0.0) -> "MarkedState":
        return cls.from_ru(np.zeros((n, n)), np.zeros(n), time)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.time - self.birth

    def rho(self) -> np.ndarray:
        return compose(self.r, self.u)

    def copy(self) -> "MarkedState":
        return MarkedState(self.r.copy(), self.birth.copy(), self.time, self.t0)

    def dust_mask(self) -> np.ndarray:
        """Levels never involved in an event since the initial time (u >= t)."""
        return self.birth <= self.t0


def _labels(obj) -> np.ndarray:
    if isinstance(obj, SubsetSystem):
        return obj.partition().labels
    if isinstance(obj, Partition):
        return obj.labels
    return np.asarray(obj)


def apply_pi(rho: np.ndarray, pi) -> np.ndarray:
    """rho'_ij = rho_{alpha(i), alpha(j)} (zero when the block indices agree)."""
    lab = _labels(pi)
    out = rho[np.ix_(lab, lab)]
    np.fill_diagonal(out, 0.0)
    return out


def apply_sigma_arrays(r: np.ndarray, u: np.ndarray, sigma: SubsetSystem) -> tuple[np.ndarray, np.ndarray]:
    """The marked update on plain arrays; returns (r', u')."""
    if not sigma:
        return r.copy(), u.copy()
    lab = sigma.partition().labels
    inside = sigma.in_union
    ua = u[lab]
    uin = np.where(inside, ua, 0.0)
    r2 = uin[:, None] + r[np.ix_(lab, lab)] + uin[None, :]
    r2[lab[:, None] == lab[None, :]] = 0.0
    return r2, np.where(inside, 0.0, ua)


def apply_sigma(state: MarkedState, sigma: SubsetSystem) -> MarkedState:
    if not sigma:
        return state.copy()
    lab = sigma.partition().labels
    inside = sigma.in_union
    u = state.u
    ua = u[lab]
    uin = np.where(inside, ua, 0.0)
    r2 = uin[:, None] + state.r[np.ix_(lab, lab)] + uin[None, :]
    r2[lab[:, None] == lab[None, :]] = 0.0
    birth = np.where(inside, state.time, state.birth[lab])
    return MarkedState(r2, birth, state.time, state.t0)


def grow(state, dt: float, representation: str | None = None):
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if isinstance(state, MarkedState):
        if representation not in (None, "marked"):
            raise ValueError("marked state needs marked representation")
        return MarkedState(state.r.copy(), state.birth.copy(), state.time + dt, state.t0)
    if representation not in (None, "plain"):
        raise ValueError("plain state needs plain representation")
    rho = state.rho + 2.0 * dt
    np.fill_diagonal(rho, 0.0)
    return PlainState(rho, state.time + dt)


def _advance(state, t: float):
    """In-place growth to time t."""
    dt = t - state.time
    if dt < 0:
        raise ValueError(f"event at {t} precedes current time {state.time}")
    if isinstance(state, MarkedState):
        state.time = t
    else:
        if dt:
            state.rho += 2.0 * dt
            np.fill_diagonal(state.rho, 0.0)
        state.time = t
    return state


def apply_event(state, event: ReproductionEvent):
    if isinstance(state, MarkedState):
        return apply_sigma(state, event.sigma)
    return PlainState(apply_pi(state.rho, event.sigma), state.time)


@dataclass
class EvolutionPath:
    initial: object
    stream: EventStream
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    final: object = None

    def state_at(self, t: float):
        """State at time t (after any event at exactly t)."""
        if t < self.initial.time:
            raise ValueError("time precedes the initial state")
        if self.states:
            k = bisect.bisect_right(self.times, t)
            base = self.initial if k == 0 else self.states[k - 1]
            return _advance(base.copy(), t)
        return evolve(self.initial, self.stream, t).final


def evolve(initial, stream: EventStream, horizon: float | None = None, record: bool = False,
           checkpoints: Sequence[float] | None = None):
    """Fold the events of the stream into the state up to the horizon.

    With ``record`` every post-event state is kept; ``checkpoints`` returns a
    list of states at the given sorted times alongside the path.
    """
    horizon = stream.window[1] if horizon is None else float(horizon)
    state = initial.copy()
    path = EvolutionPath(initial.copy(), stream)
    cps = list(checkpoints) if checkpoints is not None else []
    if any(b < a for a, b in zip(cps, cps[1:])):
        raise ValueError("checkpoints must be sorted")
    snaps = []
    ci = 0
    for e in stream.events:
        if e.time <= initial.time:
            raise ValueError(f"event at {e.time} lies outside the evolution window")
        if e.time > horizon:
            break
        while ci < len(cps) and cps[ci] < e.time:
            snaps.append(_advance(state.copy(), cps[ci]))
            ci += 1
        _advance(state, e.time)
        state = apply_event(state, e)
        if record:
            path.times.append(e.time)
            path.states.append(state.copy())
    while ci < len(cps) and cps[ci] <= horizon:
        snaps.append(_advance(state.copy(), cps[ci]))
        ci += 1
    path.final = _advance(state, horizon)
    if checkpoints is not None:
        return path, snaps
    return path


def _events(events) -> list:
    return events.events if isinstance(events, EventStream) else list(events)


def ancestral_level(events, t: float, i: int, s: float) -> int:
    """Level at time s of the ancestor of the individual on level i at time t."""
    if s > t:
        raise ValueError("ancestral time must not exceed the present")
    lev = i
    for e in reversed(_events(events)):
        if e.time > t:
            continue
        if e.time <= s:
            break
        lev = int(e.sigma.partition().labels[lev - 1]) + 1
    return lev


def ancestor_vector(events, s: float, t: float, n: int) -> np.ndarray:
    """A_s(t, j) for j = 1..n as a 1-based array."""
    anc = np.arange(1, n + 1)
    for e in _events(events):
        if s < e.time <= t:
            anc = anc[e.sigma.partition().labels]
    return anc


def descendant_level(events, s: float, i: int, t: float):
    """Lowest level at time t descending from (s, i), or ESCAPED."""
    if t < s:
        raise ValueError("descendant time must not precede the ancestor")
    evs = _events(events)
    n = evs[0].sigma.n if evs else i
    anc = ancestor_vector(evs, s, t, max(n, i))
    hits = np.flatnonzero(anc == i)
    return int(hits[0]) + 1 if len(hits) else ESCAPED


def pair_distance(events, rho0: np.ndarray, a: tuple, b: tuple, t0: float = 0.0) -> float:
    """Genealogical distance between individuals a=(s,i) and b=(t,j)."""
    (s, i), (t, j) = a, b
    m = min(s, t)
    evs = _events(events)
    la = ancestral_level(evs, s, i, m)
    lb = ancestral_level(evs, t, j, m)
    if la == lb:
        return s + t - 2 * m
    for e in reversed(evs):
        if e.time > m:
            continue
        if e.time <= t0:
            break
        lab = e.sigma.partition().labels
        la, lb = int(lab[la - 1]) + 1, int(lab[lb - 1]) + 1
        if la == lb:
            return s + t - 2 * e.time
    return s + t - 2 * t0 + float(rho0[la - 1, lb - 1])


def meet_times(events, n: int, t0: float, checkpoints: Sequence[float]) -> list:
    """Matrices M with rho_ij(t) = 2 (t - M_ij) at each checkpoint, from rho(t0) = 0.

    M_ij is the time at which the lineages of levels i and j meet (t0 when
    they have not met since t0).  Entries are copied event times, so
    comparisons against reset times are exact.
    """
    M = np.full((n, n), float(t0))
    out = []
    cps = list(checkpoints)
    ci = 0
    for e in _events(events):
        while ci < len(cps) and cps[ci] < e.time:
            out.append(M.copy())
            ci += 1
        lab = e.sigma.partition().labels
        M = M[np.ix_(lab, lab)]
        M[lab[:, None] == lab[None, :]] = e.time
    while ci < len(cps):
        out.append(M.copy())
        ci += 1
    return out


class PartitionError(ValueError):
    """A threshold relation that should be an equivalence is not."""


def _threshold_partition(adj: np.ndarray) -> Partition:
    n = adj.shape[0]
    lab = -np.ones(n, dtype=np.int64)
    k = 0
    for i in range(n):
        if lab[i] >= 0:
            continue
        members = np.flatnonzero(adj[i])
        members = members[members >= i]
        block = np.union1d([i], members)
        if np.any(lab[block] >= 0) or not adj[np.ix_(block, block)].all():
            raise PartitionError("threshold relation is not transitive")
        lab[block] = k
        k += 1
    return Partition.from_labels(lab.tolist())


def flow_partition(rho_t: np.ndarray, t: float, s: float) -> Partition:
    """Levels at time t grouped by common ancestor at time s."""
    if s > t:
        raise ValueError("s must not exceed t")
    adj = rho_t < 2.0 * (t - s)
    np.fill_diagonal(adj, True)
    return _threshold_partition(adj)


@dataclass(frozen=True)
class DustPartition:
    partition: Partition
    dust: frozenset

    def non_dust_blocks(self) -> list:
        return [b for b in self.partition.blocks if not (len(b) == 1 and b[0] in self.dust)]


def dust_partition(state: MarkedState) -> DustPartition:
    dust = state.dust_mask()
    same_birth = state.birth[:, None] == state.birth[None, :]
    adj = same_birth & (state.r == 0.0) & ~dust[:, None] & ~dust[None, :]
    np.fill_diagonal(adj, True)
    part = _threshold_partition(adj)
    return DustPartition(part, frozenset(int(i) + 1 for i in np.flatnonzero(dust)))


@dataclass
class JumpLog:
    theta: tuple
    theta_f: tuple
    theta_prime_proxy: tuple
    escapes: list = field(default_factory=list)


def detect_jumps(events, traces: Iterable[tuple] | None = None, refresh: bool = True,
                 max_seeds: int = 64) -> JumpLog:
    """Classify event times into Theta, Theta_f and a truncation proxy for Theta'.

    A tracked family (s, i) escapes at t when its lowest descendant level
    leaves {1..n}.  By default every level at the window start is tracked and,
    with ``refresh``, every level just after each event (the most recent
    ``max_seeds`` seed times are kept).  Events from atoms with |x|_1 = 1 and
    finite support remove all levels above the number of blocks; they are
    added to the proxy explicitly.
    """
    stream = events if isinstance(events, EventStream) else None
    evs = _events(events)
    theta = tuple(e.time for e in evs if e.from_atom)
    theta_f = tuple(e.time for e in evs if e.from_atom and e.atom_finite)
    if not evs:
        return JumpLog(theta, theta_f, ())
    n = evs[0].sigma.n
    start = stream.window[0] if stream is not None else min(e.time for e in evs) - 1.0
    if traces is None:
        pending = [(start, set(range(1, n + 1)))]
    else:
        grouped: dict[float, set] = {}
        for s, i in traces:
            grouped.setdefault(float(s), set()).add(int(i))
        pending = sorted(grouped.items())
    proxy = set(theta_f)
    escapes = []
    active: dict[float, list] = {}
    for e in evs:
        # a seed becomes active at the first event after its time, where the
        # ancestor map is still the identity
        while pending and pending[0][0] < e.time:
            s, tr = pending.pop(0)
            active[s] = [np.arange(1, n + 1), set(tr)]
        lab = e.sigma.partition().labels
        for s, rec in list(active.items()):
            anc, tracked = rec
            before = tracked & set(anc.tolist())
            anc = anc[lab]
            after = set(anc.tolist())
            lost = before - after
            if lost:
                proxy.add(e.time)
                escapes.extend((e.time, s, i) for i in sorted(lost))
            rec[0] = anc
            rec[1] = tracked - lost
            if not rec[1]:
                del active[s]
        if refresh:
            active[e.time] = [np.arange(1, n + 1), set(range(1, n + 1))]
            if len(active) > max_seeds:
                del active[min(active)]
    return JumpLog(theta, theta_f, tuple(sorted(proxy)), escapes)


@dataclass
class WeightedSupport:
    levels: tuple
    weights: tuple
    marks: tuple | None = None
    remainder: float = 0.0

    def total(self) -> float:
        return float(sum(self.weights) + self.remainder)

    def to_space(self, rho: np.ndarray):
        from .mmspace import FiniteMMSpace

        idx = np.array(self.levels) - 1
        w = np.array(self.weights, dtype=float)
        if self.remainder:
            raise ValueError("dust remainder has no representative level")
        marks = None if self.marks is None else np.array(self.marks, dtype=float)
        return FiniteMMSpace(rho[np.ix_(idx, idx)], w / w.sum(), marks)


def sampling_measure(state, mode: str = "uniform_n", s: float | None = None) -> WeightedSupport:
    """Finite approximants of the sampling measure on the lookdown space.

    ``uniform_n``: weight 1/n per level.  ``flow``: weight of each block of
    the flow partition from time s, placed at the block minimum (Prohorov
    error at most 2(t - s) to the untruncated limit).  ``dust_decomposed``:
    one atom per non-dust block of the dust partition carrying its u-mark,
    plus the dust remainder weight.
    """
    n = state.n
    if mode == "uniform_n":
        return WeightedSupport(tuple(range(1, n + 1)), tuple([1.0 / n] * n))
    if mode == "flow":
        if s is None or not s < state.time:
            raise ValueError("flow mode needs s < t")
        rho = state.rho if isinstance(state, PlainState) else state.rho()
        part = flow_partition(rho, state.time, s)
        return WeightedSupport(part.minima(), tuple(len(b) / n for b in part.blocks))
    if mode == "dust_decomposed":
        if not isinstance(state, MarkedState):
            raise ValueError("dust decomposition needs a marked state")
        dp = dust_partition(state)
        blocks = dp.non_dust_blocks()
        u = state.u
        return WeightedSupport(tuple(b[0] for b in blocks), tuple(len(b) / n for b in blocks),
                               tuple(float(u[b[0] - 1]) for b in blocks), len(dp.dust) / n)
    raise ValueError(f"unknown mode {mode!r}")
