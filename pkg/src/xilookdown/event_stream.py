"""Poisson reproduction events restricted to n levels on a time window."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .partitions import Partition, SubsetSystem, format_partition, parse_subset_system, subset_systems
from .rng import SeedSpec, as_seed
from .xi_model import (
    INF,
    SCOPES,
    InfiniteRateError,
    XiMeasure,
    atom_visible_probability,
    component_rates,
    family_size_rates,
    kappa_sigma,
    paintbox_labels,
)

CATEGORICAL_MAX_N = 8


@dataclass(frozen=True, slots=True)
class ReproductionEvent:
    time: float
    sigma: SubsetSystem
    origin: str
    atom_finite: bool = False
    x: tuple | None = None

    @property
    def full_restriction(self) -> Partition:
        return self.sigma.partition()

    @property
    def from_atom(self) -> bool:
        return self.origin != "kingman"


@dataclass
class EventStream:
    n: int
    window: tuple
    events: list
    seed: SeedSpec | None = None
    scope: str = "changes_gamma"
    stats: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=float)

    def between(self, s: float, t: float) -> list:
        """Events with time in (s, t]."""
        return [e for e in self.events if s < e.time <= t]

    def restrict(self, m: int, scope: str | None = None) -> "EventStream":
        """The same point measure seen through the first m levels."""
        scope = scope or self.scope
        if m > self.n:
            raise ValueError("cannot restrict to more levels than generated")
        out = []
        for e in self.events:
            sig = e.sigma.restrict(m)
            if _visible(sig, scope):
                out.append(ReproductionEvent(e.time, sig, e.origin, e.atom_finite, e.x))
        return EventStream(m, self.window, out, self.seed, scope)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "origin", "sigma", "atom_finite"])
        for e in self.events:
            w.writerow([repr(e.time), e.origin, format_partition(e.sigma), int(e.atom_finite)])
        return buf.getvalue()


def stream_from_csv(text: str, n: int, window: tuple, scope: str = "changes_gamma") -> EventStream:
    rows = list(csv.DictReader(io.StringIO(text)))
    events = [ReproductionEvent(float(r["time"]), parse_subset_system(r["sigma"], n), r["origin"],
                                bool(int(r["atom_finite"]))) for r in rows]
    return EventStream(n, tuple(window), events, None, scope)


def _visible(sig: SubsetSystem, scope: str) -> bool:
    return sig.changes_gamma() if scope == "changes_gamma" else bool(sig)


def _labels_to_sigma(lab: np.ndarray, n: int) -> SubsetSystem:
    groups: dict[int, list[int]] = {}
    for i, v in enumerate(lab.tolist(), start=1):
        if v >= 0:
            groups.setdefault(v, []).append(i)
    return SubsetSystem(n, groups.values(), check=False)


def _labels_visible(lab: np.ndarray, scope: str) -> np.ndarray:
    """Row-wise visibility for a batch of label rows."""
    if scope == "touches_level":
        return (lab >= 0).any(axis=1)
    srt = np.sort(lab, axis=1)
    same = (srt[:, 1:] == srt[:, :-1]) & (srt[:, 1:] >= 0)
    return same.any(axis=1)


class EventSampler:
    """Draws restricted reproduction events for a fixed (Xi, n, scope)."""

    def __init__(self, xi: XiMeasure, n: int, scope: str = "changes_gamma", method: str = "thinning"):
        if scope not in SCOPES:
            raise ValueError(f"unknown scope {scope!r}")
        if method not in ("thinning", "categorical"):
            raise ValueError(f"unknown method {method!r}")
        if method == "categorical" and n > CATEGORICAL_MAX_N:
            raise ValueError(f"categorical sampling limited to n <= {CATEGORICAL_MAX_N}")
        self.xi, self.n, self.scope, self.method = xi, n, scope, method
        comps = component_rates(xi, n, scope)
        if any(math.isinf(r) for _, r in comps):
            raise InfiniteRateError(f"visible rate is infinite for scope {scope} (model has no dust)")
        self.origins = [o for o, r in comps if r > 0]
        rates = np.array([r for _, r in comps if r > 0], dtype=float)
        self.rate = float(math.fsum(rates))
        self.probs = rates / self.rate if self.rate > 0 else rates
        self.draws = 0
        self.accepted = 0
        if xi.family is not None:
            fr = family_size_rates(xi.family, n, scope)
            self._family_k = fr / fr.sum() if fr.sum() > 0 else fr
        if method == "categorical":
            self._build_table()

    def _build_table(self):
        table = []
        for sig in subset_systems(self.n):
            if not _visible(sig, self.scope):
                continue
            sizes = sig.sizes
            if self.xi.kingman_mass > 0 and sizes == (2,):
                table.append((sig, "kingman", self.xi.kingman_mass))
            for k, (w, x) in enumerate(self.xi.atoms):
                r = w / x.l2sq * kappa_sigma(x, self.n, sizes)
                if r > 0:
                    table.append((sig, f"atom:{k}", r))
            if self.xi.family is not None and len(sizes) == 1:
                r = self.xi.family.lambda_nk(self.n, sizes[0])
                if r > 0:
                    table.append((sig, "family", r))
        self._table = table
        w = np.array([r for _, _, r in table])
        self._table_p = w / w.sum() if len(w) else w

    def sample(self, rng: np.random.Generator, time: float) -> ReproductionEvent:
        if self.method == "categorical":
            idx = int(rng.choice(len(self._table), p=self._table_p))
            sig, origin, _ = self._table[idx]
            return self._finish(rng, time, sig, origin)
        origin = self.origins[int(rng.choice(len(self.origins), p=self.probs))] if len(self.origins) > 1 \
            else self.origins[0]
        if origin == "kingman":
            i, j = rng.choice(self.n, 2, replace=False)
            sig = SubsetSystem(self.n, [(int(i) + 1, int(j) + 1)], check=False)
            return ReproductionEvent(time, sig, "kingman", False, None)
        if origin == "family":
            k = int(rng.choice(self.n + 1, p=self._family_k))
            block = rng.choice(self.n, k, replace=False) + 1
            sig = SubsetSystem(self.n, [block.tolist()], check=False)
            return self._finish(rng, time, sig, origin, k=k)
        k = int(origin.split(":")[1])
        x = self.xi.atoms[k][1]
        p = atom_visible_probability(x, self.n, self.scope)
        batch = 1 if p > 0.5 else min(4096, int(math.ceil(2.0 / max(p, 1e-12))))
        while True:
            lab = paintbox_labels(x, self.n, rng, rows=batch)
            ok = _labels_visible(lab, self.scope)
            hits = np.flatnonzero(ok)
            if len(hits):
                self.draws += int(hits[0]) + 1
                self.accepted += 1
                sig = _labels_to_sigma(lab[hits[0]], self.n)
                return ReproductionEvent(time, sig, origin, x.finite_full, x.entries)
            self.draws += batch

    def _finish(self, rng, time, sig, origin, k=None) -> ReproductionEvent:
        if origin == "kingman":
            return ReproductionEvent(time, sig, origin, False, None)
        if origin == "family":
            k = sig.sizes[0] if k is None else k
            xv = self.xi.family.posterior_x(rng, self.n, k)
            return ReproductionEvent(time, sig, origin, self.xi.family.finite_full, (xv,))
        x = self.xi.atoms[int(origin.split(":")[1])][1]
        return ReproductionEvent(time, sig, origin, x.finite_full, x.entries)


def _event_times(rng: np.random.Generator, rate: float, t0: float, t1: float) -> np.ndarray:
    length = t1 - t0
    if rate <= 0 or length <= 0:
        return np.zeros(0)
    while True:
        count = int(rng.poisson(rate * length))
        times = np.sort(t0 + length * rng.random(count))
        # ties and the excluded left endpoint are null events; redraw
        if count == 0 or (times[0] > t0 and times[-1] <= t1 and np.all(np.diff(times) > 0)):
            return times


def generate(xi: XiMeasure, n: int, window, scope: str = "changes_gamma", seed=0,
             method: str = "thinning", sampler: EventSampler | None = None) -> EventStream:
    """Events of the restricted Poisson point measure on the window (t0, t1].

    A prebuilt ``sampler`` for the same (xi, n, scope) may be passed to skip
    the rate set-up when many replicates are drawn.
    """
    if isinstance(window, (int, float)):
        window = (0.0, float(window))
    t0, t1 = float(window[0]), float(window[1])
    if t1 < t0:
        raise ValueError("window end precedes its start")
    seed = as_seed(seed)
    if xi.is_zero():
        return EventStream(n, (t0, t1), [], seed, scope)
    if sampler is None:
        sampler = EventSampler(xi, n, scope, method)
    elif (sampler.xi, sampler.n, sampler.scope) != (xi, n, scope):
        raise ValueError("sampler was built for a different model, size or scope")
    rng = seed.generator()
    times = _event_times(rng, sampler.rate, t0, t1)
    events = [sampler.sample(rng, float(t)) for t in times]
    out = EventStream(n, (t0, t1), events, seed, scope)
    out.stats = {"draws": sampler.draws, "accepted": sampler.accepted}
    return out


def generate_two_sided(xi: XiMeasure, n: int, lookback: float, horizon: float, seed=0,
                       scope: str = "changes_gamma") -> EventStream:
    if lookback < 0:
        raise ValueError("lookback must be nonnegative")
    return generate(xi, n, (-float(lookback), float(horizon)), scope, seed)


@dataclass
class EventDiagnostics:
    intervals: list
    levels: list
    newborn: np.ndarray
    involved: np.ndarray
    U: np.ndarray
    V: np.ndarray
    running_U: np.ndarray
    running_V: np.ndarray


def event_diagnostics(stream: EventStream, intervals: Sequence[tuple] | None = None,
                      levels: Iterable[int] | None = None) -> EventDiagnostics:
    """Newborn counts, involvement counts and running |x|_2^2, |x|_1 sums.

    ``newborn[k, l]`` is the sum over events in interval k of
    l - (#blocks of the restriction to l levels); ``involved[k, l]`` sums the
    number of levels <= l that take part in the event.  U and V sum over
    atom-origin events that are visible at this truncation.
    """
    if intervals is None:
        intervals = [stream.window]
    levels = list(range(1, stream.n + 1)) if levels is None else list(levels)
    newborn = np.zeros((len(intervals), len(levels)), dtype=np.int64)
    involved = np.zeros_like(newborn)
    U = np.zeros(len(intervals))
    V = np.zeros(len(intervals))
    run_u, run_v = [], []
    cu = cv = 0.0
    for e in stream.events:
        is_atom = e.from_atom and e.x is not None
        if is_atom:
            cu += math.fsum(v * v for v in e.x)
            cv += math.fsum(e.x)
        run_u.append(cu)
        run_v.append(cv)
        lab = e.full_restriction.labels
        mask = e.sigma.in_union
        for li, ell in enumerate(levels):
            nb = ell - len(np.unique(lab[:ell]))
            inv = int(mask[:ell].sum())
            for k, (a, b) in enumerate(intervals):
                if a < e.time <= b:
                    newborn[k, li] += nb
                    involved[k, li] += inv
        for k, (a, b) in enumerate(intervals):
            if is_atom and a < e.time <= b:
                U[k] += math.fsum(v * v for v in e.x)
                V[k] += math.fsum(e.x)
    return EventDiagnostics(list(intervals), levels, newborn, involved, U, V,
                            np.array(run_u), np.array(run_v))
