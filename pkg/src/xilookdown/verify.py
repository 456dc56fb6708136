"""Statistical verification: generators, martingale residuals, duality and sample tests.

Test functions are products of univariate factors, each reading one
coordinate of the state: an entry rho_ij of a plain matrix, or an entry
r_ij / mark u_i / composed distance rho_ij of a marked state.  Between
events every coordinate moves affinely in time, also after any of the jump
maps is applied, so the jump part of the generator along a path is a sum of
products of functions of affine arguments.  That structure is what the
residual and duality estimators exploit.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .event_stream import EventSampler, generate
from .lookdown import MarkedState, PlainState, _advance, apply_event, apply_pi, apply_sigma, compose
from .partitions import nontrivial_partitions, subset_systems
from .rng import SeedSpec, as_seed
from .xi_model import InfiniteRateError, XiMeasure, classify_dust, rate_pi, rate_sigma

GAUSS_NODES = 16
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_NODES)


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class Factor:
    """One univariate piece g(x) bound to a coordinate.

    ``bump``: exp(1 - 1/(1 - z^2)) for |z| < 1 with z = (x - center)/width,
    zero outside; smooth with compact support and maximum 1.
    ``decay``: exp(-rate * x); bounded with bounded derivative on x >= 0.
    Coordinates are ("rho", i, j), ("r", i, j) or ("u", i) with 1-based levels.
    """

    kind: str
    coord: tuple
    center: float = 0.0
    width: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bump", "decay"):
            raise ValueError(f"unknown factor kind {self.kind!r}")
        name = self.coord[0]
        if name in ("rho", "r"):
            if len(self.coord) != 3 or self.coord[1] == self.coord[2] or min(self.coord[1:]) < 1:
                raise ValueError(f"pair coordinate needs two distinct levels, got {self.coord}")
        elif name == "u":
            if len(self.coord) != 2 or self.coord[1] < 1:
                raise ValueError(f"mark coordinate needs one level, got {self.coord}")
        else:
            raise ValueError(f"unknown coordinate {name!r}")
        if self.kind == "bump" and not self.width > 0:
            raise ValueError("bump width must be positive")
        if self.kind == "decay" and not self.rate > 0:
            raise ValueError("decay rate must be positive")

    @classmethod
    def bump(cls, coord, center: float, width: float) -> "Factor":
        return cls("bump", tuple(coord), float(center), float(width))

    @classmethod
    def decay(cls, coord, rate: float = 1.0) -> "Factor":
        return cls("decay", tuple(coord), rate=float(rate))

    @property
    def levels(self) -> tuple:
        return tuple(self.coord[1:])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "decay":
            return np.exp(-self.rate * x)
        z = (x - self.center) / self.width
        inside = np.abs(z) < 1.0
        zz = np.where(inside, z * z, 0.0)
        return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - zz)), 0.0)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "decay":
            return -self.rate * np.exp(-self.rate * x)
        z = (x - self.center) / self.width
        inside = np.abs(z) < 1.0
        zz = np.where(inside, z * z, 0.0)
        g = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - zz)), 0.0)
        return np.where(inside, g * (-2.0 * z) / (1.0 - zz) ** 2 / self.width, 0.0)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "coord": list(self.coord)}
        if self.kind == "bump":
            out.update(center=self.center, width=self.width)
        else:
            out["rate"] = self.rate
        return out


@dataclass(frozen=True)
class TestFunction:
    """phi = product of factors; ``kind`` is "plain" or "marked"."""

    __test__ = False  # not a pytest class

    n: int
    factors: tuple
    kind: str = "plain"

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.kind not in ("plain", "marked"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        for f in self.factors:
            if max(f.levels) > self.n:
                raise ValueError(f"factor {f.coord} reads beyond arity {self.n}")
            if self.kind == "plain" and f.coord[0] != "rho":
                raise ValueError("plain test functions read rho entries only")

    @classmethod
    def of(cls, n: int, *factors: Factor) -> "TestFunction":
        kind = "plain" if all(f.coord[0] == "rho" for f in factors) else "marked"
        return cls(n, tuple(factors), kind)

    @property
    def all_decay(self) -> bool:
        return all(f.kind == "decay" for f in self.factors)

    def _check_state(self, state):
        want = MarkedState if self.kind == "marked" else PlainState
        if not isinstance(state, want):
            raise TypeError(f"{self.kind} test function needs a {want.__name__}")
        if state.n != self.n:
            raise ValueError(f"state has {state.n} levels, test function arity is {self.n}")

    def coordinates(self, state) -> np.ndarray:
        self._check_state(state)
        out = np.empty(len(self.factors))
        if self.kind == "plain":
            for k, f in enumerate(self.factors):
                out[k] = state.rho[f.coord[1] - 1, f.coord[2] - 1]
            return out
        u = state.u
        for k, f in enumerate(self.factors):
            name = f.coord[0]
            if name == "u":
                out[k] = u[f.coord[1] - 1]
            else:
                i, j = f.coord[1] - 1, f.coord[2] - 1
                out[k] = state.r[i, j] + (u[i] + u[j] if name == "rho" else 0.0)
        return out

    def evaluate(self, x) -> np.ndarray:
        """phi at coordinate values x[..., K]."""
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for k, f in enumerate(self.factors):
            out = out * f.value(x[..., k])
        return out

    def __call__(self, state) -> float:
        return float(self.evaluate(self.coordinates(state)))

    def partials(self, x) -> np.ndarray:
        """d phi / d x_k per bound coordinate slot."""
        x = np.asarray(x, dtype=float)
        vals = np.array([f.value(x[k]) for k, f in enumerate(self.factors)])
        ders = np.array([f.derivative(x[k]) for k, f in enumerate(self.factors)])
        out = np.empty(len(self.factors))
        for k in range(len(self.factors)):
            out[k] = ders[k] * np.prod(np.delete(vals, k))
        return out

    def growth_slopes(self) -> np.ndarray:
        """d x_k / dt under pure growth."""
        if self.kind == "plain":
            return np.full(len(self.factors), 2.0)
        return np.array([{"u": 1.0, "r": 0.0, "rho": 2.0}[f.coord[0]] for f in self.factors])

    def growth(self, state) -> float:
        return float(self.growth_slopes() @ self.partials(self.coordinates(state)))

    def to_json(self) -> dict:
        return {"n": self.n, "kind": self.kind, "factors": [f.to_json() for f in self.factors]}


def function_from_json(obj) -> TestFunction:
    facs = []
    for f in obj["factors"]:
        if f["kind"] == "bump":
            facs.append(Factor.bump(tuple(f["coord"]), f["center"], f["width"]))
        else:
            facs.append(Factor.decay(tuple(f["coord"]), f.get("rate", 1.0)))
    tf = TestFunction.of(int(obj["n"]), *facs)
    if obj.get("kind", tf.kind) != tf.kind:
        raise ValueError("declared test function kind does not match its coordinates")
    return tf


# ---------------------------------------------------------------- jump tables and generators

@dataclass
class JumpTable:
    """All jump maps at arity n with their rates (zero-rate maps dropped)."""

    kind: str
    maps: list
    labels: np.ndarray
    inside: np.ndarray
    rates: np.ndarray
    total: float
    # the same maps followed by the identity, weighted (rates..., -total)
    ext_labels: np.ndarray = None
    ext_inside: np.ndarray = None
    weights: np.ndarray = None

    def __post_init__(self):
        n = self.labels.shape[1]
        self.ext_labels = np.vstack([self.labels, np.arange(n)[None, :]])
        self.ext_inside = np.vstack([self.inside, np.zeros((1, n), dtype=bool)])
        self.weights = np.append(self.rates, -self.total)


def jump_table(xi: XiMeasure, n: int, kind: str) -> JumpTable:
    key = ("jump_table", n, kind)
    hit = xi._cache.get(key)
    if hit is not None:
        return hit
    maps, labs, ins, rates = [], [], [], []
    if kind == "plain":
        for pi in nontrivial_partitions(n):
            lam = rate_pi(xi, n, pi)
            if lam > 0:
                maps.append(pi)
                labs.append(pi.labels)
                ins.append(np.zeros(n, dtype=bool))
                rates.append(lam)
    elif kind == "marked":
        if classify_dust(xi) != "dust":
            raise InfiniteRateError("marked generator needs a model with dust; the rates diverge otherwise")
        for sig in subset_systems(n):
            lam = rate_sigma(xi, n, sig)
            if lam > 0:
                maps.append(sig)
                labs.append(sig.partition().labels)
                ins.append(sig.in_union)
                rates.append(lam)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    labels = np.array(labs, dtype=np.int64).reshape(len(maps), n)
    inside = np.array(ins, dtype=bool).reshape(len(maps), n)
    rates = np.array(rates, dtype=float)
    table = JumpTable(kind, maps, labels, inside, rates, math.fsum(rates))
    xi._cache[key] = table
    return table


def _affine_terms(phi: TestFunction, table: JumpTable, state) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coordinates after each jump map as base + slope * s along the next gap.

    The last row is the identity map.  Returns (base [T+1, K], slope, weights)
    with weights (rates..., -total) so that sum_t w_t phi(row t) is the jump
    part of the generator.
    """
    L, M, w = table.ext_labels, table.ext_inside, table.weights
    K = len(phi.factors)
    base = np.empty((len(L), K))
    slope = np.empty((len(L), K))
    if phi.kind == "plain":
        rho = state.rho
        for k, f in enumerate(phi.factors):
            li, lj = L[:, f.coord[1] - 1], L[:, f.coord[2] - 1]
            diff = li != lj
            base[:, k] = np.where(diff, rho[li, lj], 0.0)
            slope[:, k] = 2.0 * diff
        return base, slope, w
    u, r = state.u, state.r
    ub = np.where(M, 0.0, u[L])
    us = np.where(M, 0.0, 1.0)
    for k, f in enumerate(phi.factors):
        name = f.coord[0]
        if name == "u":
            i = f.coord[1] - 1
            base[:, k], slope[:, k] = ub[:, i], us[:, i]
            continue
        i, j = f.coord[1] - 1, f.coord[2] - 1
        li, lj = L[:, i], L[:, j]
        diff = li != lj
        mi, mj = M[:, i], M[:, j]
        rb = np.where(diff, mi * u[li] + r[li, lj] + mj * u[lj], 0.0)
        rs = np.where(diff, mi * 1.0 + mj * 1.0, 0.0)
        if name == "rho":
            rb = rb + ub[:, i] + ub[:, j]
            rs = rs + us[:, i] + us[:, j]
        base[:, k], slope[:, k] = rb, rs
    return base, slope, w


def _generator(phi: TestFunction, xi: XiMeasure, state, kind: str) -> float:
    phi._check_state(state)
    table = jump_table(xi, phi.n, kind)
    base, _, _ = _affine_terms(phi, table, state)
    vals = phi.evaluate(base)
    return phi.growth(state) + float(table.rates @ (vals[:-1] - vals[-1]))


def generator_omega1(phi: TestFunction, rho, xi: XiMeasure) -> float:
    """Growth plus jump part of the plain-matrix generator at rho."""
    state = rho if isinstance(rho, PlainState) else PlainState(np.asarray(rho, dtype=float))
    if phi.kind != "plain":
        raise ValueError("the plain generator needs a plain test function")
    return _generator(phi, xi, state, "plain")


def generator_omega2(phi: TestFunction, state: MarkedState, xi: XiMeasure) -> float:
    """Growth plus jump part of the marked generator at (r, u)."""
    if phi.kind != "marked":
        raise ValueError("the marked generator needs a marked test function")
    return _generator(phi, xi, state, "marked")


def _integrate_terms(phi: TestFunction, base, slope, w, length) -> np.ndarray:
    """int_0^L sum_t w_t phi(base_t + slope_t s) ds for a batch of gaps.

    base and slope have shape [G, T, K], length shape [G].  Exact when every
    factor is a decay; otherwise composite Gauss-Legendre with pieces short
    against the narrowest bump.
    """
    base = np.asarray(base, dtype=float)
    slope = np.asarray(slope, dtype=float)
    length = np.asarray(length, dtype=float)
    out = np.zeros(len(length))
    if len(length) == 0:
        return out
    if phi.all_decay:
        c = np.array([f.rate for f in phi.factors])
        a = base @ c
        b = slope @ c
        L = length[:, None]
        bb = np.where(b > 0, b, 1.0)
        part = np.where(b > 0, -np.expm1(-bb * L) / bb, L)
        return (np.exp(-a) * part) @ w
    width = min(f.width for f in phi.factors if f.kind == "bump")
    top = slope.max(axis=(1, 2))
    pieces = np.clip(np.ceil(length * top / (0.5 * width)), 1, 64).astype(int)
    for p in np.unique(pieces):
        g = np.flatnonzero((pieces == p) & (length > 0))
        if not len(g):
            continue
        h = length[g] / p
        unit = (np.arange(p)[:, None] + 0.5 * (_NODES[None, :] + 1.0)).ravel()  # in units of h
        s = h[:, None] * unit[None, :]                                             # [g, Q]
        x = base[g][:, :, :, None] + slope[g][:, :, :, None] * s[:, None, None, :]  # [g, T, K, Q]
        vals = phi.evaluate(np.moveaxis(x, 2, -1))                                 # [g, T, Q]
        quad = np.tile(_WEIGHTS, p)
        out[g] = (vals @ quad) @ w * (h / 2.0)
    return out


# ---------------------------------------------------------------- reports

@dataclass
class Criterion:
    name: str
    statistic: float
    se: float | None
    rule: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "statistic": _clean(self.statistic), "se": _clean(self.se),
                "rule": self.rule, "passed": bool(self.passed), "detail": _clean(self.detail)}


@dataclass
class TestReport:
    """Statistics with pass/fail per criterion, each citing its tolerance rule."""

    __test__ = False

    name: str
    criteria: list = field(default_factory=list)
    seed: SeedSpec | None = None
    replicates: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def add(self, name, statistic, se, rule, passed, **detail) -> Criterion:
        c = Criterion(name, statistic, se, rule, bool(passed), detail)
        self.criteria.append(c)
        return c

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "replicates": self.replicates,
                "seed": None if self.seed is None else self.seed.to_json(),
                "criteria": [c.to_json() for c in self.criteria]}


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def within_se(diff: float, se: float, k: float = 3.0) -> bool:
    """|diff| <= k se; with se = 0 only an exact zero passes."""
    return abs(diff) <= k * se if se > 0 else diff == 0


# ---------------------------------------------------------------- replicate plumbing

def map_replicates(fn: Callable, seed, replicates: int, threads: int = 1, **kwargs) -> list:
    """Run fn(list_of_seeds, **kwargs) over replicates 0..R-1, results in replicate order.

    Replicate r always uses ``seed.replicate(r)``, so results do not depend
    on ``threads``.  fn must be a module-level function returning one item
    per seed.
    """
    seed = as_seed(seed)
    seeds = [seed.replicate(r) for r in range(replicates)]
    if threads <= 1 or replicates < 2 * threads:
        return list(fn(seeds, **kwargs))
    chunks = np.array_split(np.arange(replicates), threads * 4)
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(fn, [seeds[i] for i in c], **kwargs) for c in chunks if len(c)]
        out = []
        for f in futs:
            out.extend(f.result())
    return out


def _initial_state(initial, rng):
    return initial(rng).copy() if callable(initial) else initial.copy()


def _scope_for(state) -> str:
    return "touches_level" if isinstance(state, MarkedState) else "changes_gamma"


def _residual_worker(seeds, xi, initial, phi, t):
    kind = "marked" if phi.kind == "marked" else "plain"
    table = jump_table(xi, phi.n, kind)
    probe = _initial_state(initial, np.random.default_rng(0))
    scope = _scope_for(probe)
    sampler = None if xi.is_zero() else EventSampler(xi, phi.n, scope)
    out, bases, slopes, lengths, owner = [], [], [], [], []
    for sd in seeds:
        rng = sd.child(1).generator()
        state = _initial_state(initial, rng)
        t0 = state.time
        phi0 = phi(state)
        stream = generate(xi, phi.n, (t0, t0 + t), scope, sd.child(0), sampler=sampler)
        jumps = 0.0
        for e in stream.events:
            base, slope, _ = _affine_terms(phi, table, state)
            bases.append(base)
            slopes.append(slope)
            lengths.append(e.time - state.time)
            owner.append(len(out))
            _advance(state, e.time)
            before = phi(state)
            state = apply_event(state, e)
            jumps += phi(state) - before
        base, slope, _ = _affine_terms(phi, table, state)
        bases.append(base)
        slopes.append(slope)
        lengths.append(t0 + t - state.time)
        owner.append(len(out))
        _advance(state, t0 + t)
        out.append([jumps, phi(state) - phi0])
    comp = _integrate_terms(phi, np.array(bases), np.array(slopes), table.weights, np.array(lengths))
    res = np.array(out, dtype=float).reshape(len(out), 2)
    np.subtract.at(res[:, 0], np.array(owner, dtype=int), comp)
    return [tuple(r) for r in res]


def martingale_residual(xi: XiMeasure, initial, phi: TestFunction, t: float, replicates: int,
                        seed=0, threads: int = 1) -> TestReport:
    """Monte Carlo estimate of E[phi(X_t)] - phi(X_0) - int_0^t E[Omega phi(X_s)] ds.

    Per path the growth part integrates exactly to the change of phi between
    events, so the residual equals the sum of jumps of phi minus the
    integrated jump part of the generator.  ``initial`` is a state or a
    callable rng -> state.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    seed = as_seed(seed)
    res = np.array(map_replicates(_residual_worker, seed, replicates, threads,
                                  xi=xi, initial=initial, phi=phi, t=float(t)))
    rep = TestReport("martingale_residual", seed=seed, replicates=replicates)
    vals = res[:, 0] if len(res) else np.zeros(0)
    mean = float(vals.mean()) if len(vals) else 0.0
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    rep.add("residual", mean, se, "|residual| <= 3 SE (exact zero when SE = 0)", within_se(mean, se),
            t=t, kind=phi.kind, mean_increment=float(res[:, 1].mean()) if len(res) else 0.0)
    return rep


# ---------------------------------------------------------------- duality

def _forward_worker(seeds, xi, initial, phi, t):
    probe = _initial_state(initial, np.random.default_rng(0))
    scope = _scope_for(probe)
    sampler = None if xi.is_zero() else EventSampler(xi, phi.n, scope)
    out = []
    for sd in seeds:
        state = _initial_state(initial, sd.child(1).generator())
        t0 = state.time
        stream = generate(xi, phi.n, (t0, t0 + t), scope, sd.child(0), sampler=sampler)
        for e in stream.events:
            _advance(state, e.time)
            state = apply_event(state, e)
        _advance(state, t0 + t)
        out.append(phi(state))
    return out


def _dual_worker(seeds, xi, initial, phi, t):
    kind = "marked" if phi.kind == "marked" else "plain"
    table = jump_table(xi, phi.n, kind)
    p = table.rates / table.total if table.total > 0 else table.rates
    out = []
    for sd in seeds:
        rng = sd.child(0).generator()
        count = int(rng.poisson(table.total * t)) if table.total > 0 else 0
        dual_times = rng.uniform(0.0, t, count)
        kinds = rng.choice(len(p), size=count, p=p) if count else np.zeros(0, dtype=int)
        state = _initial_state(initial, sd.child(1).generator())
        t0 = state.time
        # the dual jump at dual time s acts on the state at forward time t - s
        order = np.argsort(t - dual_times, kind="stable")
        for idx in order:
            _advance(state, t0 + t - float(dual_times[idx]))
            m = table.maps[int(kinds[idx])]
            if kind == "plain":
                state = PlainState(apply_pi(state.rho, m), state.time)
            else:
                state = apply_sigma(state, m)
        _advance(state, t0 + t)
        out.append(phi(state))
    return out


def dual_consistency(xi: XiMeasure, initial, phi: TestFunction, t: float, replicates: int,
                     seed=0, threads: int = 1) -> TestReport:
    """Forward estimate of E[phi(X_t)] against the function-valued dual.

    The forward side drives the lookdown with sampled reproduction events.
    The dual side runs phi_s from phi_0 = phi: deterministic transport by
    growth and jumps phi -> phi o iota at the enumerated rates; phi_t(x0)
    is then phi evaluated after replaying the dual jumps in reversed time.
    """
    seed = as_seed(seed)
    fwd = np.array(map_replicates(_forward_worker, seed.child(0), replicates, threads,
                                  xi=xi, initial=initial, phi=phi, t=float(t)))
    dual = np.array(map_replicates(_dual_worker, seed.child(1), replicates, threads,
                                   xi=xi, initial=initial, phi=phi, t=float(t)))
    rep = TestReport("dual_consistency", seed=seed, replicates=replicates)
    if t == 0:
        rep.add("forward_minus_dual", 0.0, 0.0, "t = 0: both sides equal phi(X_0) exactly",
                bool(np.array_equal(fwd, dual)), forward=float(fwd.mean()), dual=float(dual.mean()))
        return rep
    diff = float(fwd.mean() - dual.mean())
    se = math.sqrt(fwd.var(ddof=1) / len(fwd) + dual.var(ddof=1) / len(dual))
    rep.add("forward_minus_dual", diff, se, "|forward - dual| <= 3 SE", within_se(diff, se),
            forward=float(fwd.mean()), dual=float(dual.mean()), t=t)
    return rep


# ---------------------------------------------------------------- closed-form Kingman pair law

def kingman_pair_mean(t: float, a: float = 1.0) -> float:
    """E[exp(-rho_12(t))] for two levels, pair rate a, rho_12(0) = 0."""
    c = a / (2.0 + a)
    return c + (1.0 - c) * math.exp(-(2.0 + a) * t)


def _pair_worker(seeds, xi, times):
    sampler = EventSampler(xi, 2, "changes_gamma")
    times = list(times)
    out = []
    for sd in seeds:
        stream = generate(xi, 2, (0.0, times[-1]), "changes_gamma", sd, sampler=sampler)
        ev = stream.times
        row = []
        for t in times:
            k = np.searchsorted(ev, t, side="right")
            last = ev[k - 1] if k else 0.0
            row.append(2.0 * (t - last))
        out.append(row)
    return out


def closed_form_test(times: Sequence[float], replicates: int, seed=0, rate_scale: float = 1.0,
                     threads: int = 1) -> TestReport:
    """Two-level Kingman rho_12 law against 1/3 + (2/3) exp(-3t).

    ``rate_scale`` multiplies the simulated pair rate while the oracle keeps
    rate 1 (the negative control uses 1.1).
    """
    seed = as_seed(seed)
    times = sorted(float(t) for t in times)
    rho = np.array(map_replicates(_pair_worker, seed, replicates, threads,
                                  xi=XiMeasure.kingman(rate_scale), times=times))
    rep = TestReport("kingman_pair_law", seed=seed, replicates=replicates)
    vals = np.exp(-rho)
    for k, t in enumerate(times):
        mc = float(vals[:, k].mean())
        se = float(vals[:, k].std(ddof=1) / math.sqrt(len(vals)))
        exact = kingman_pair_mean(t)
        rep.add(f"t={t!r}", mc - exact, se, "|MC - exact| <= 3 SE", within_se(mc - exact, se),
                mc=mc, exact=exact, rate_scale=rate_scale)
    return rep


# ---------------------------------------------------------------- exchangeability and resampling

def _coordinate(ensemble, kind, idx):
    if kind == "u":
        return np.array([s.u[idx[0]] for s in ensemble])
    i, j = idx
    if isinstance(ensemble[0], MarkedState):
        return np.array([s.r[i, j] for s in ensemble]) if kind == "r" else \
            np.array([s.rho()[i, j] for s in ensemble])
    return np.array([s.rho[i, j] for s in ensemble])


def exchangeability_test(ensemble: Sequence, b: int, n: int, alpha: float = 0.01,
                         keep: Sequence[bool] | None = None) -> TestReport:
    """KS comparisons of coordinates related by permutations fixing levels 1..b.

    ``ensemble`` holds states (one per path) with at least b + n levels.
    Each comparison uses disjoint halves of the paths so the two samples are
    independent; the level is Bonferroni-corrected over comparisons.
    ``keep`` restricts to paths without events that are nontrivial on 1..b.
    """
    states = list(ensemble) if keep is None else [s for s, k in zip(ensemble, keep) if k]
    rep = TestReport("exchangeability", replicates=len(states))
    if len(states) < 4 or n < 2:
        rep.add("comparisons", 0.0, None, "fewer than two free levels or four paths: nothing to compare", True)
        return rep
    marked = isinstance(states[0], MarkedState)
    free = list(range(b, b + n))
    comps = []
    pair_kind = "r" if marked else "rho"
    ref = (free[0], free[1])
    comps += [(pair_kind, ref, (i, j)) for a, i in enumerate(free) for j in free[a + 1:] if (i, j) != ref]
    comps += [(pair_kind, (i, free[0]), (i, j)) for i in range(b) for j in free[1:]]
    if marked:
        comps += [("u", (free[0],), (j,)) for j in free[1:]]
    half = len(states) // 2
    first, second = states[:half], states[half:2 * half]
    pvals = []
    for kind, a, c in comps:
        x = _coordinate(first, kind, a)
        y = _coordinate(second, kind, c)
        pvals.append(float(stats.ks_2samp(x, y).pvalue))
    level = alpha / max(1, len(comps))
    worst = min(pvals) if pvals else 1.0
    rep.add("min_ks_pvalue", worst, None, f"min p >= {alpha}/{len(comps)} (Bonferroni)",
            worst >= level, comparisons=len(comps), b=b, n=n)
    return rep


def energy_test(x: np.ndarray, y: np.ndarray, rng: np.random.Generator, permutations: int = 199) -> tuple:
    """Two-sample energy statistic and permutation p-value."""
    from scipy.spatial.distance import cdist

    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    z = np.vstack([x, y])
    d = cdist(z, z)
    nx_ = len(x)

    def stat(idx):
        a, b = idx[:nx_], idx[nx_:]
        return 2 * d[np.ix_(a, b)].mean() - d[np.ix_(a, a)].mean() - d[np.ix_(b, b)].mean()

    base = np.arange(len(z))
    e0 = stat(base)
    if not d.any():
        return 0.0, 1.0
    count = sum(stat(rng.permutation(len(z))) >= e0 for _ in range(permutations))
    return float(e0), (1 + count) / (1 + permutations)


def _features(mat, marks=None):
    iu = np.triu_indices(mat.shape[0], 1)
    f = mat[iu]
    return f if marks is None else np.concatenate([f, marks])


def resampling_test(matrices, k: int, seed=0, marks=None, replace: bool = False, alpha: float = 0.01,
                    permutations: int = 199) -> TestReport:
    """Resampled k x k matrices from finite spaces against fresh k x k corners.

    The first half of the ensemble builds finite spaces (uniform weight per
    level) and resamples k points from each; the second half contributes
    its leading corners.  Without replacement the k levels are distinct,
    which matches the corner law exactly at finite n.
    """
    from .mmspace import finite_space_from_matrix, sample_distance_matrix

    seed = as_seed(seed)
    rng = seed.generator()
    mats = [np.asarray(m, dtype=float) for m in matrices]
    marks = None if marks is None else [np.asarray(u, dtype=float) for u in marks]
    half = len(mats) // 2
    rep = TestReport("resampling", seed=seed, replicates=len(mats))
    resampled, corners = [], []
    for a in range(half):
        m = mats[a]
        if replace:
            space = finite_space_from_matrix(m, None if marks is None else marks[a])
            sub, mk = sample_distance_matrix(space, k, rng, replace=True)
        else:
            idx = rng.choice(m.shape[0], size=k, replace=False)
            sub = m[np.ix_(idx, idx)]
            mk = None if marks is None else marks[a][idx]
        resampled.append(_features(sub, mk))
    for a in range(half, 2 * half):
        m = mats[a]
        corners.append(_features(m[:k, :k], None if marks is None else marks[a][:k]))
    e, p = energy_test(np.array(resampled), np.array(corners), rng, permutations)
    rep.add("energy_pvalue", p, None, f"permutation p-value >= {alpha}", p >= alpha,
            energy=e, k=k, replace=replace)
    return rep


# ---------------------------------------------------------------- frequency uniformity

def _block_frequencies(stream, b: int, s: float, grid: Sequence[float], ns: Sequence[int], mode: str):
    """Frequencies among the first n levels, per grid time and n."""
    N = stream.n
    out = np.zeros((len(grid), len(ns)))
    anc = np.arange(N)
    touched = np.zeros(N, dtype=bool)
    events = [e for e in stream.events if e.time > s]
    ei = 0
    for gi, t in enumerate(grid):
        while ei < len(events) and events[ei].time <= t:
            e = events[ei]
            lab = e.sigma.partition().labels
            anc = anc[lab]
            touched = np.where(e.sigma.in_union, True, touched[lab])
            ei += 1
        for ni, n in enumerate(ns):
            if mode == "dust":
                out[gi, ni] = float(np.mean(~touched[:n]))
            else:
                out[gi, ni] = float(np.mean(anc[:n] == anc[b - 1]))
    return out


def frequency_uniformity_test(xi: XiMeasure, ladder: Sequence[int], reference: int, b: int,
                              grid: Sequence[float], seeds: int, seed=0, s: float = 0.0,
                              mode: str = "block") -> TestReport:
    """sup over the grid of |freq_n - freq_reference| along a ladder of n.

    ``block`` uses the block of level b in the flow partition from time s;
    ``dust`` uses the fraction of levels untouched since s.  Streams are
    generated once at the reference size; smaller n are nested truncations.
    Passes when the medians over seeds strictly decrease along the ladder
    (or all vanish).
    """
    if mode not in ("block", "dust"):
        raise ValueError(f"unknown mode {mode!r}")
    seed = as_seed(seed)
    grid = sorted(float(g) for g in grid)
    ladder = sorted(int(n) for n in ladder)
    if ladder[-1] > reference or b > ladder[0]:
        raise ValueError("ladder must lie between b and the reference size")
    scope = "touches_level" if mode == "dust" else "changes_gamma"
    sampler = EventSampler(xi, reference, scope)
    sups = np.zeros((seeds, len(ladder)))
    for r in range(seeds):
        stream = generate(xi, reference, (s, grid[-1]), scope, seed.replicate(r), sampler=sampler)
        f = _block_frequencies(stream, b, s, grid, ladder + [reference], mode)
        sups[r] = np.abs(f[:, :-1] - f[:, -1:]).max(axis=0)
    med = np.median(sups, axis=0)
    ok = bool(np.all(med == 0) or np.all(np.diff(med) < 0))
    rep = TestReport("frequency_uniformity", seed=seed, replicates=seeds)
    rep.add("median_sup_difference", float(med[-1]), None,
            "medians strictly decrease along the ladder, or all vanish", ok,
            ladder=ladder, medians=med, reference=reference, mode=mode)
    return rep


# ---------------------------------------------------------------- derivative check

def finite_difference_check(phi: TestFunction, x: np.ndarray, h: float = 1e-5) -> float:
    """max_k |analytic partial - central difference| at coordinate values x."""
    x = np.asarray(x, dtype=float)
    ana = phi.partials(x)
    worst = 0.0
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        num = (float(phi.evaluate(x + e)) - float(phi.evaluate(x - e))) / (2 * h)
        worst = max(worst, abs(num - ana[k]))
    return worst


# ---------------------------------------------------------------- brute-force oracles

def _all_subsets(m: int) -> np.ndarray:
    codes = np.arange(1, 2 ** m)
    return ((codes[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)


def prohorov_oracle(p, q, dist) -> float:
    """Prohorov distance by enumerating every subset A in p(A) <= q(A^eps) + eps."""
    p, q, d = np.asarray(p, float), np.asarray(q, float), np.asarray(dist, float)
    S = _all_subsets(len(p))
    pa = S @ p
    levels = np.unique(np.append(d.ravel(), 0.0))
    best = math.inf
    for k, lev in enumerate(levels):
        near = (S.astype(float) @ (d <= lev).astype(float)) > 0
        f = max(0.0, float(np.max(pa - near @ q)))
        cand = max(float(lev), f)
        if k + 1 == len(levels) or cand < levels[k + 1]:
            best = min(best, cand)
    return best


def _hall_mass(pa, qb, rel: np.ndarray, subsets: np.ndarray) -> float:
    """Largest coupled mass carried by a relation, by the supply-demand theorem."""
    total_p = pa.sum()
    best = min(total_p, qb.sum())
    for S in subsets:
        nb = rel[S].any(axis=0)
        best = min(best, total_p - pa[S].sum() + qb[nb].sum())
    return float(best)


def relation_oracle(A, B, marked: bool = False, cover: bool = False, max_pairs: int = 12) -> float:
    """Exhaustive search over every relation (or every full correspondence).

    Value: min over relations R of max(dis R / 2, mark gap on R, 1 - coupled
    mass on R).  Gromov-Prohorov uses the positive-weight supports; with
    ``cover`` the relation must cover both spaces, zero-weight points
    included.
    """
    if not cover:
        A, B = A.support(), B.support()
    a, b = A.size, B.size
    if a * b > max_pairs:
        raise ValueError(f"oracle limited to {max_pairs} candidate pairs")
    xs_all = np.repeat(np.arange(a), b)
    ys_all = np.tile(np.arange(b), a)
    subsets = _all_subsets(a)
    best = math.inf if cover else 1.0
    for mask in range(1, 2 ** (a * b)):
        bits = np.array([(mask >> k) & 1 for k in range(a * b)], dtype=bool)
        xs, ys = xs_all[bits], ys_all[bits]
        if cover and (len(set(xs.tolist())) < a or len(set(ys.tolist())) < b):
            continue
        dis = float(np.abs(A.dist[np.ix_(xs, xs)] - B.dist[np.ix_(ys, ys)]).max())
        gap = float(np.abs(A.marks[xs] - B.marks[ys]).max()) if marked else 0.0
        rel = np.zeros((a, b), dtype=bool)
        rel[xs, ys] = True
        mass = _hall_mass(A.weights, B.weights, rel, subsets)
        best = min(best, max(dis / 2.0, gap, 1.0 - mass))
    return best


# ---------------------------------------------------------------- suites

def _random_sigma(rng, n):
    from .partitions import SubsetSystem

    lab = rng.integers(-1, max(1, n // 2) + 1, size=n)
    groups: dict = {}
    for i, v in enumerate(lab.tolist(), start=1):
        if v >= 0:
            groups.setdefault(v, []).append(i)
    return SubsetSystem(n, groups.values(), check=False)


def _random_marked(rng, n):
    from .coalescent import equilibrium_tree

    r = rng.exponential(1.0, (n, n))
    r = np.triu(r, 1)
    r = r + r.T
    return MarkedState.from_ru(r, rng.exponential(1.0, n), time=float(rng.uniform(0, 3)))


def _check_commutation(cfg, seed) -> TestReport:
    from .partitions import Partition

    rng = seed.generator()
    worst = 0.0
    for _ in range(cfg["instances"]):
        n = int(rng.integers(1, cfg["max_n"] + 1))
        sig = _random_sigma(rng, n)
        st = _random_marked(rng, n)
        lhs = apply_sigma(st, sig).rho()
        rhs = apply_pi(st.rho(), sig.partition())
        scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
        worst = max(worst, float(np.abs(lhs - rhs).max(initial=0.0)) / scale)
    rep = TestReport("commutation", seed=seed, replicates=cfg["instances"])
    rep.add("max_relative_error", worst, None, "compose after iota_2 equals iota_1 after compose, <= 1e-12",
            worst <= 1e-12, max_n=cfg["max_n"])
    return rep


def flow_labels(labels: Sequence[np.ndarray], times: np.ndarray, s: float, t: float, n: int) -> np.ndarray:
    """0-based ancestor at time s of each level at time t, from per-event label arrays."""
    anc = np.arange(n)
    lo = int(np.searchsorted(times, s, side="right"))
    hi = int(np.searchsorted(times, t, side="right"))
    for k in range(lo, hi):
        anc = anc[labels[k]]
    return anc


def _check_cocycle(cfg, seed) -> TestReport:
    from .partitions import Partition, coagulate

    rep = TestReport("cocycle", seed=seed, replicates=cfg["triples"])
    n = cfg["n"]
    for mi, (name, xi, horizon) in enumerate([("kingman", XiMeasure.kingman(), cfg["kingman_horizon"]),
                                              ("star", XiMeasure.lambda_dirac(1.0), cfg["star_horizon"])]):
        stream = generate(xi, n, horizon, "changes_gamma", seed.child(mi))
        labels = [e.sigma.partition().labels for e in stream.events]
        times = stream.times
        rng = seed.child(mi, 1).generator()
        bad = 0
        for _ in range(cfg["triples"]):
            r, s, t = np.sort(rng.uniform(0.0, horizon, 3))
            p_rt = Partition.from_labels(flow_labels(labels, times, r, t, n).tolist())
            p_st = Partition.from_labels(flow_labels(labels, times, s, t, n).tolist())
            p_rs = Partition.from_labels(flow_labels(labels, times, r, s, n).tolist())
            if coagulate(p_st, p_rs) != p_rt:
                bad += 1
        rep.add(f"{name}_mismatches", float(bad), None, "exact partition equality on every triple", bad == 0,
                events=len(stream), n=n)
    return rep


def _check_marked_plain(cfg, seed) -> TestReport:
    from .lookdown import evolve

    xi = XiMeasure.lambda_dirac(0.5)
    n, T = cfg["n"], cfg["horizon"]
    worst = 0.0
    for k in range(cfg["runs"]):
        stream = generate(xi, n, T, "touches_level", seed.replicate(k))
        grid = list(np.linspace(0.0, T, 21))
        pm, ms = evolve(MarkedState.zero(n), stream, T, record=True, checkpoints=grid)
        pp, ps = evolve(PlainState(np.zeros((n, n))), stream, T, record=True, checkpoints=grid)
        for a, b in zip(pm.states + ms, pp.states + ps):
            worst = max(worst, float(np.abs(a.rho() - b.rho).max()))
    rep = TestReport("marked_plain_consistency", seed=seed, replicates=cfg["runs"])
    rep.add("max_abs_error", worst, None, "compose(R_t) = rho_t, <= 1e-9", worst <= 1e-9, n=n, horizon=T)
    return rep


def _check_dust_table() -> TestReport:
    rep = TestReport("dust_classification")
    cases = [("kingman", XiMeasure.kingman(), "no_dust"), ("star", XiMeasure.lambda_dirac(1.0), "dust"),
             ("uniform", XiMeasure.uniform(), "no_dust")]
    for a in (0.5, 1.0, 1.5, 2.0, 3.0):
        for b in (0.5, 1.0, 2.0):
            cases.append((f"beta({a},{b})", XiMeasure.beta(a, b), "dust" if a > 1 else "no_dust"))
    wrong = [name for name, xi, want in cases if classify_dust(xi) != want]
    rep.add("misclassified", float(len(wrong)), None, "exact match with the analytic table", not wrong,
            cases=len(cases), wrong=wrong)
    return rep


def _check_generators(seed) -> TestReport:
    rng = seed.generator()
    rep = TestReport("generator_identities", seed=seed)
    models = [XiMeasure.kingman(), XiMeasure.lambda_dirac(0.5), XiMeasure.lambda_dirac(1.0),
              XiMeasure.from_atoms([(1.0, [0.5, 0.25])], kingman=0.5), XiMeasure.beta(2.0, 1.0)]
    worst_const = 0.0
    for xi in models:
        for n in (1, 2, 3, 4):
            st = _random_marked(rng, n)
            if n >= 2:
                worst_const = max(worst_const, abs(generator_omega1(TestFunction(n, (), "plain"), st.rho(), xi)))
            if classify_dust(xi) == "dust":
                worst_const = max(worst_const, abs(generator_omega2(TestFunction(n, (), "marked"), st, xi)))
    rep.add("constant_functions", worst_const, None, "Omega phi = 0 exactly for constant phi", worst_const == 0.0)

    g = Factor.bump(("rho", 1, 2), 1.0, 1.5)
    x = 0.7
    rho2 = np.array([[0.0, x], [x, 0.0]])
    expect = 2 * float(g.derivative(x)) + float(g.value(0.0)) - float(g.value(x))
    got = generator_omega1(TestFunction.of(2, g), rho2, XiMeasure.kingman())
    rho3 = np.array([[0, x, 0.9], [x, 0, 0.9], [0.9, 0.9, 0]])
    got3 = generator_omega1(TestFunction.of(3, g), rho3, XiMeasure.lambda_dirac(1.0))
    gu = Factor.bump(("u", 1), 0.5, 1.0)
    st1 = MarkedState.from_ru(np.zeros((1, 1)), [0.3])
    expect_u = float(gu.derivative(0.3)) + 2.0 * (float(gu.value(0.0)) - float(gu.value(0.3)))
    got_u = generator_omega2(TestFunction.of(1, gu), st1, XiMeasure.lambda_dirac(0.5))
    err = max(abs(got - expect), abs(got3 - expect), abs(got_u - expect_u))
    rep.add("hand_examples", err, None, "two-level Kingman, three-level star and one-level dust examples, <= 1e-12",
            err <= 1e-12)

    count = sum(1 for _ in subset_systems(3))
    rep.add("subset_systems_n3", float(count), None, "14 nonempty subset systems on 3 levels", count == 14)

    worst_fd = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 4))
        facs = []
        for _ in range(k):
            if rng.random() < 0.5:
                facs.append(Factor.bump(("rho", 1, 2), float(rng.uniform(0, 2)), float(rng.uniform(0.5, 2))))
            else:
                facs.append(Factor.decay(("rho", 1, 2), float(rng.uniform(0.1, 2))))
        phi = TestFunction.of(2, *facs)
        worst_fd = max(worst_fd, finite_difference_check(phi, rng.uniform(0, 3, size=k)))
    rep.add("finite_differences", worst_fd, None, "analytic vs central difference (h = 1e-5), <= 1e-6",
            worst_fd <= 1e-6)

    zero = []
    for xi, init, phi in [(XiMeasure.kingman(), PlainState(np.zeros((3, 3))),
                           TestFunction.of(3, Factor.bump(("rho", 1, 2), 0.5, 1.0))),
                          (XiMeasure.lambda_dirac(0.5), MarkedState.zero(3),
                           TestFunction.of(3, Factor.bump(("u", 1), 0.2, 1.0), Factor.decay(("r", 2, 3))))]:
        r = martingale_residual(xi, init, phi, 0.0, 50, seed.child(9))
        zero.append(r.criteria[0].statistic)
    rep.add("residual_at_zero", float(max(abs(z) for z in zero)), None, "residual at t = 0 is exactly 0",
            all(z == 0.0 for z in zero))
    return rep


def suite_algebra(cfg, seed, threads=1) -> list:
    return [_check_commutation(cfg["commutation"], seed.child(1)),
            _check_cocycle(cfg["cocycle"], seed.child(2)),
            _check_marked_plain(cfg["marked_plain"], seed.child(3)),
            _check_dust_table(),
            _check_generators(seed.child(4))]


def _count_worker(seeds, xi, horizon):
    sampler = EventSampler(xi, 2, "changes_gamma")
    return [len(generate(xi, 2, horizon, "changes_gamma", sd, sampler=sampler)) for sd in seeds]


def pair_event_rate_test(xi: XiMeasure, horizon: float, runs: int, seed=0, threads: int = 1) -> TestReport:
    """Two-level event counts against the Poisson(Xi(simplex) * T) 3-sigma band."""
    seed = as_seed(seed)
    mean = xi.total_mass * horizon
    lo, hi = mean - 3 * math.sqrt(mean), mean + 3 * math.sqrt(mean)
    counts = np.array(map_replicates(_count_worker, seed, runs, threads, xi=xi, horizon=horizon))
    frac = float(np.mean((counts >= lo) & (counts <= hi)))
    rep = TestReport("pair_event_rate", seed=seed, replicates=runs)
    rep.add("fraction_in_band", frac, None, f"count in [{lo:.6g}, {hi:.6g}] for >= 95% of runs", frac >= 0.95,
            mass=xi.total_mass, mean_count=float(counts.mean()))
    return rep


def _equilibrium_worker(seeds, n):
    from .coalescent import _Samplers, equilibrium_tree

    xi = XiMeasure.kingman()
    samplers = _Samplers(xi, "changes_gamma")
    return [float(equilibrium_tree(xi, n, sd, samplers).rho[0, 1]) for sd in seeds]


def equilibrium_test(replicates: int, seed=0, horizon: float = 10.0, threads: int = 1) -> TestReport:
    """Lookdown rho_12 at a late time against equilibrium-tree samples (2 Exp(1))."""
    seed = as_seed(seed)
    look = np.array(map_replicates(_pair_worker, seed.child(0), replicates, threads,
                                   xi=XiMeasure.kingman(), times=[horizon]))[:, 0]
    eq = np.array(map_replicates(_equilibrium_worker, seed.child(1), replicates, threads, n=2))
    rep = TestReport("equilibrium", seed=seed, replicates=replicates)
    p = float(stats.ks_2samp(look, eq).pvalue)
    rep.add("ks_pvalue", p, None, "two-sample KS p >= 0.01", p >= 0.01)
    for name, v in (("lookdown_mean", look), ("equilibrium_mean", eq)):
        se = float(v.std(ddof=1) / math.sqrt(len(v)))
        rep.add(name, float(v.mean()), se, "|mean - 2| <= 3 SE", within_se(float(v.mean()) - 2.0, se))
    return rep


def negative_control_power(runs: int, replicates: int, seed=0, scale: float = 1.1,
                           times=(0.1, 0.5, 1.0, 2.0), threads: int = 1) -> TestReport:
    """Fraction of closed-form tests that fail when the pair rate is scaled."""
    seed = as_seed(seed)
    fails = [not closed_form_test(times, replicates, seed.child(k), rate_scale=scale, threads=threads).passed
             for k in range(runs)]
    power = float(np.mean(fails))
    rep = TestReport("negative_control", seed=seed, replicates=runs * replicates)
    rep.add("power", power, None, f"rate x{scale} rejected in >= 90% of runs", power >= 0.9, runs=runs)
    return rep


def suite_kingman_law(cfg, seed, threads=1) -> list:
    c = cfg
    out = [pair_event_rate_test(XiMeasure.kingman(), c["horizon"], c["runs"], seed.child(1), threads),
           pair_event_rate_test(XiMeasure.from_atoms([(0.5, [0.5])], kingman=1.0), c["horizon"], c["runs"],
                                seed.child(2), threads),
           closed_form_test(c["times"], c["replicates"], seed.child(3), threads=threads)]
    if c["control_runs"]:
        out.append(negative_control_power(c["control_runs"], c["replicates"], seed.child(4), times=c["times"],
                                          threads=threads))
    out.append(equilibrium_test(c["replicates"], seed.child(5), threads=threads))
    return out


def default_bumps(kind: str) -> list:
    """The two bump test functions used by the residual and duality suites."""
    if kind == "plain":
        return [TestFunction.of(3, Factor.bump(("rho", 1, 2), 1.0, 1.0)),
                TestFunction.of(3, Factor.bump(("rho", 1, 3), 0.8, 0.9), Factor.bump(("rho", 2, 3), 1.2, 1.5))]
    return [TestFunction.of(3, Factor.bump(("u", 1), 0.5, 0.8)),
            TestFunction.of(3, Factor.bump(("r", 1, 2), 0.6, 0.9), Factor.bump(("u", 3), 0.3, 0.6))]


def suite_martingale(cfg, seed, threads=1) -> list:
    out = []
    for k, phi in enumerate(default_bumps("plain")):
        out.append(martingale_residual(XiMeasure.kingman(), PlainState(np.zeros((3, 3))), phi, cfg["t"],
                                       cfg["replicates"], seed.child(1, k), threads))
    for k, phi in enumerate(default_bumps("marked")):
        out.append(martingale_residual(XiMeasure.lambda_dirac(0.5), MarkedState.zero(3), phi, cfg["t"],
                                       cfg["replicates"], seed.child(2, k), threads))
    return out


def suite_duality(cfg, seed, threads=1) -> list:
    out = []
    plain = TestFunction.of(2, Factor.bump(("rho", 1, 2), 1.0, 1.2))
    marked = TestFunction.of(2, Factor.bump(("u", 1), 0.4, 0.6), Factor.bump(("rho", 1, 2), 0.8, 1.0))
    for k, t in enumerate(cfg["times"]):
        out.append(dual_consistency(XiMeasure.kingman(), PlainState(np.zeros((2, 2))), plain, t,
                                    cfg["replicates"], seed.child(1, k), threads))
        out.append(dual_consistency(XiMeasure.lambda_dirac(1.0), MarkedState.zero(2), marked, t,
                                    cfg["replicates"], seed.child(2, k), threads))
    return out


def _random_space(rng, m, marked=False, zeros=True):
    from .mmspace import FiniteMMSpace

    pts = rng.uniform(0, 1, (m, 2))
    d = np.round(np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)), 2)
    d = _metric_closure(d)
    w = rng.integers(0 if zeros else 1, 4, m).astype(float)
    if w.sum() == 0:
        w[0] = 1.0
    marks = np.round(rng.uniform(0, 1, m), 1) if marked else None
    return FiniteMMSpace(d, w / w.sum(), marks)


def _metric_closure(d):
    d = d.copy()
    for k in range(len(d)):
        d = np.minimum(d, d[:, k][:, None] + d[k][None, :])
    return d


def suite_distances(cfg, seed, threads=1) -> list:
    from .mmspace import FiniteMMSpace, finite_space_from_matrix, ghp_small, gromov_prohorov_small, \
        prohorov_distance

    rng = seed.generator()
    rep = TestReport("prohorov_oracle", seed=seed, replicates=cfg["prohorov_instances"])
    worst = 0.0
    for _ in range(cfg["prohorov_instances"]):
        m = int(rng.integers(1, 9))
        S = _random_space(rng, m)
        p = rng.integers(0, 4, m).astype(float)
        q = rng.integers(0, 4, m).astype(float)
        p[0] += p.sum() == 0
        q[-1] += q.sum() == 0
        p, q = p / p.sum(), q / q.sum()
        worst = max(worst, abs(prohorov_distance(p, q, S) - prohorov_oracle(p, q, S.dist)))
    rep.add("max_abs_difference", worst, None, "flow solver = subset enumeration, <= 1e-9", worst <= 1e-9)
    out = [rep]

    rep = TestReport("relation_oracle", seed=seed, replicates=cfg["relation_instances"])
    worst = {"gp": 0.0, "mgp": 0.0, "ghp": 0.0}
    order_bad = 0
    for _ in range(cfg["relation_instances"]):
        while True:
            a, b = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            if a * b <= cfg["max_pairs"]:
                break
        A, B = _random_space(rng, a, marked=True), _random_space(rng, b, marked=True)
        gp = float(gromov_prohorov_small(A, B))
        mgp = float(gromov_prohorov_small(A, B, marked=True))
        ghp = float(ghp_small(A, B))
        worst["gp"] = max(worst["gp"], abs(gp - relation_oracle(A, B, max_pairs=cfg["max_pairs"])))
        worst["mgp"] = max(worst["mgp"], abs(mgp - relation_oracle(A, B, marked=True, max_pairs=cfg["max_pairs"])))
        worst["ghp"] = max(worst["ghp"], abs(ghp - relation_oracle(A, B, cover=True, max_pairs=cfg["max_pairs"])))
        order_bad += ghp < gp - 1e-12
    for k, v in worst.items():
        rep.add(f"{k}_max_abs_difference", v, None, "exact search = exhaustive relation oracle, <= 1e-9", v <= 1e-9)
    rep.add("ghp_below_gp", float(order_bad), None, "GHP >= GP on every instance", order_bad == 0)
    out.append(rep)

    from .coalescent import equilibrium_tree

    rep = TestReport("lipschitz", seed=seed, replicates=cfg["lipschitz_pairs"])
    worst_slack = -math.inf
    for k in range(cfg["lipschitz_pairs"]):
        n = int(rng.integers(2, 7))
        rho1 = equilibrium_tree(XiMeasure.kingman(), n, seed.child(7, k)).rho
        pts = rng.uniform(0, 1, n)
        line = np.abs(pts[:, None] - pts[None, :])
        rho2 = rho1 + float(rng.uniform(0, 0.5)) * line
        if rng.random() < 0.3:
            rho1 = np.zeros((n, n))
        A, B = finite_space_from_matrix(rho1), finite_space_from_matrix(rho2)
        res = ghp_small(A, B)
        if res.mode != "exact":
            raise RuntimeError("Lipschitz check requires exact sizes")
        worst_slack = max(worst_slack, float(res) - 0.5 * float(np.abs(rho1 - rho2).max()))
    rep.add("max_excess", worst_slack, None, "dGHP <= max|rho' - rho''| / 2 (1e-12 slack)", worst_slack <= 1e-12)
    out.append(rep)
    return out


def suite_jumps(cfg, seed, threads=1) -> list:
    from .lookdown import detect_jumps

    out = []
    models = [("star", XiMeasure.from_atoms([(1.0, [1.0])], kingman=1.0)),
              ("atom_half_quarter", XiMeasure.from_atoms([(1.0, [0.5, 0.25])], kingman=1.0))]
    for mi, (name, xi) in enumerate(models):
        rep = TestReport(f"jumps_{name}", seed=seed.child(mi), replicates=cfg["runs"])
        bad = {"theta_f_in_theta": 0, "theta_f_in_proxy": 0, "kingman_outside_theta": 0}
        sizes = []
        for r in range(cfg["runs"]):
            stream = generate(xi, cfg["n"], cfg["horizon"], "changes_gamma", seed.child(mi).replicate(r))
            log = detect_jumps(stream)
            theta, theta_f, proxy = set(log.theta), set(log.theta_f), set(log.theta_prime_proxy)
            king = {e.time for e in stream.events if e.origin == "kingman"}
            bad["theta_f_in_theta"] += not theta_f <= theta
            bad["theta_f_in_proxy"] += not theta_f <= proxy
            bad["kingman_outside_theta"] += bool(king & theta)
            sizes.append(len(theta_f))
        for k, v in bad.items():
            rep.add(k, float(v), None, "exact set relation on every run", v == 0,
                    mean_theta_f=float(np.mean(sizes)))
        out.append(rep)
    return out


def dust_branch_check(n: int, seed, horizon: float, grid: Sequence[float]) -> tuple:
    """Dust external-branch inequality u_i <= min_j rho_ij / 2 on one run.

    With u_i = t - b_i (b_i the last reset time) and rho_ij = 2 (t - M_ij)
    (M_ij the meeting time of the two lineages) the inequality reads
    max_j M_ij <= b_i, a comparison of stored event times and therefore
    exact.  Returns (violations, fraction of strict inequality, largest
    excess of u_i over min_j rho_ij / 2 in floating distance coordinates).
    """
    from .lookdown import evolve, meet_times

    xi = XiMeasure.lambda_dirac(0.5)
    stream = generate(xi, n, horizon, "touches_level", seed)
    _, snaps = evolve(MarkedState.zero(n), stream, horizon, checkpoints=grid)
    meets = meet_times(stream, n, 0.0, grid)
    bad = strict = total = 0
    excess = -math.inf
    for st, M in zip(snaps, meets):
        np.fill_diagonal(M, -np.inf)
        latest = M.max(axis=1)
        bad += int(np.sum(latest > st.birth))
        strict += int(np.sum(latest < st.birth))
        total += n
        rho = st.rho()
        np.fill_diagonal(rho, np.inf)
        excess = max(excess, float(np.max(st.u - rho.min(axis=1) / 2.0)))
    return bad, strict / total, excess


def suite_dust_branches(cfg, seed, threads=1) -> list:
    rep = TestReport("dust_external_branches", seed=seed, replicates=cfg["seeds"])
    grid = list(np.linspace(cfg["horizon"] / cfg["grid_points"], cfg["horizon"], cfg["grid_points"]))
    medians, total_bad, excess = [], 0, -math.inf
    for ni, n in enumerate(cfg["ns"]):
        fr = []
        for r in range(cfg["seeds"]):
            bad, f, ex = dust_branch_check(n, seed.child(ni).replicate(r), cfg["horizon"], grid)
            total_bad += bad
            excess = max(excess, ex)
            fr.append(f)
        medians.append(float(np.median(fr)))
    rep.add("inequality_violations", float(total_bad), None,
            "u_i <= min_j rho_ij / 2 on every sampled (t, i), compared exactly as max_j M_ij <= b_i",
            total_bad == 0, float_excess=excess)
    rep.add("strict_fraction_median", medians[-1], None, "medians strictly decrease along n",
            bool(np.all(np.diff(medians) < 0)), ns=list(cfg["ns"]), medians=medians)
    return [rep]


def _ensemble_worker(seeds, xi, n, t, marked):
    scope = "touches_level" if marked else "changes_gamma"
    sampler = EventSampler(xi, n, scope)
    out = []
    for sd in seeds:
        stream = generate(xi, n, t, scope, sd, sampler=sampler)
        state = MarkedState.zero(n) if marked else PlainState(np.zeros((n, n)))
        for e in stream.events:
            _advance(state, e.time)
            state = apply_event(state, e)
        _advance(state, t)
        out.append(state)
    return out


def lookdown_ensemble(xi: XiMeasure, n: int, t: float, replicates: int, seed=0, marked: bool = False,
                      threads: int = 1) -> list:
    """States at time t from the zero initial state, one per replicate."""
    return map_replicates(_ensemble_worker, seed, replicates, threads, xi=xi, n=n, t=float(t), marked=marked)


def suite_exchangeability(cfg, seed, threads=1) -> list:
    ens = lookdown_ensemble(XiMeasure.kingman(), cfg["n"], cfg["t"], cfg["replicates"], seed.child(1),
                            threads=threads)
    out = [exchangeability_test(ens, 0, cfg["n"])]
    out.append(exchangeability_test(ens, 1, cfg["n"] - 1))
    dust = lookdown_ensemble(XiMeasure.lambda_dirac(0.5), cfg["n"], cfg["t"], cfg["replicates"], seed.child(2),
                             marked=True, threads=threads)
    out.append(exchangeability_test(dust, 0, cfg["n"]))
    for r in out:
        r.seed = seed
    return out


def suite_resampling(cfg, seed, threads=1) -> list:
    ens = lookdown_ensemble(XiMeasure.kingman(), cfg["n"], cfg["t"], cfg["replicates"], seed.child(1),
                            threads=threads)
    return [resampling_test([s.rho for s in ens], cfg["k"], seed.child(2), permutations=cfg["permutations"])]


def suite_frequency(cfg, seed, threads=1) -> list:
    return [frequency_uniformity_test(XiMeasure.kingman(), cfg["ladder"], cfg["reference"], 1, cfg["grid"],
                                      cfg["seeds"], seed.child(1)),
            frequency_uniformity_test(XiMeasure.lambda_dirac(0.5), cfg["ladder"], cfg["reference"], 1, cfg["grid"],
                                      cfg["seeds"], seed.child(2), mode="dust")]


SUITE_DEFAULTS = {
    "algebra": {"commutation": {"instances": 1000, "max_n": 10},
                "cocycle": {"n": 50, "triples": 1000, "kingman_horizon": 0.3, "star_horizon": 20.0},
                "marked_plain": {"n": 20, "horizon": 10.0, "runs": 5}},
    "kingman-law": {"runs": 100, "horizon": 100.0, "times": [0.1, 0.5, 1.0, 2.0], "replicates": 10000,
                    "control_runs": 20},
    "martingale": {"t": 1.0, "replicates": 10000},
    "duality": {"times": [0.5, 1.0], "replicates": 10000},
    "distances": {"prohorov_instances": 200, "relation_instances": 100, "max_pairs": 12, "lipschitz_pairs": 200},
    "jumps": {"runs": 100, "n": 8, "horizon": 5.0},
    "dust-branches": {"ns": [25, 100, 400], "seeds": 20, "horizon": 10.0, "grid_points": 10},
    "exchangeability": {"n": 4, "t": 1.0, "replicates": 4000},
    "resampling": {"n": 6, "k": 3, "t": 1.0, "replicates": 1000, "permutations": 199},
    "frequency": {"ladder": [25, 50, 100], "reference": 200, "grid": [0.1, 0.2, 0.3, 0.4, 0.5], "seeds": 9},
}

SUITES = {
    "algebra": suite_algebra,
    "kingman-law": suite_kingman_law,
    "martingale": suite_martingale,
    "duality": suite_duality,
    "distances": suite_distances,
    "jumps": suite_jumps,
    "dust-branches": suite_dust_branches,
    "exchangeability": suite_exchangeability,
    "resampling": suite_resampling,
    "frequency": suite_frequency,
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if k not in base:
            raise KeyError(f"unknown setting {k!r}")
        out[k] = _merge(base[k], v) if isinstance(base[k], dict) else v
    return out


def run_suite(name: str, config: dict | None = None, seed=0, threads: int = 1) -> list:
    """Run a named suite; config entries override its defaults."""
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; known: {', '.join(sorted(SUITES))}")
    cfg = _merge(SUITE_DEFAULTS[name], config or {})
    return SUITES[name](cfg, as_seed(seed), threads)
