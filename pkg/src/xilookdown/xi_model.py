"""The reproduction measure Xi, paintbox sampling and event rates.

Xi = a * delta_0 + Xi_0 where Xi_0 is either a finite list of weighted
simplex atoms or a closed-form Lambda family living on x = (x_1, 0, ...).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import betaln, gammaln

from .partitions import Partition, SubsetSystem

INF = math.inf
SUM_TOL = 1e-15
SCOPES = ("changes_gamma", "touches_level")


class InfiniteRateError(ValueError):
    """Raised when a requested event rate diverges."""


@dataclass(frozen=True)
class SimplexPoint:
    entries: tuple

    def __init__(self, entries: Sequence[float]):
        vals = tuple(sorted((float(v) for v in entries), reverse=True))
        if any(not v > 0 for v in vals):
            raise ValueError("simplex entries must be strictly positive")
        if sum(vals) > 1 + SUM_TOL:
            raise ValueError(f"simplex entries sum to {sum(vals)} > 1")
        object.__setattr__(self, "entries", vals)

    @property
    def l1(self) -> float:
        return math.fsum(self.entries)

    @property
    def l2sq(self) -> float:
        return math.fsum(v * v for v in self.entries)

    @property
    def dust_length(self) -> float:
        return max(0.0, 1.0 - self.l1)

    @property
    def finite_full(self) -> bool:
        """Membership in the set of points with |x|_1 = 1 and finite support."""
        return bool(self.entries) and abs(self.l1 - 1.0) <= SUM_TOL * 4

    def __len__(self) -> int:
        return len(self.entries)


class BetaFamily:
    """Lambda(dx) = Beta(a, b) density on [0, 1], total mass one."""

    def __init__(self, a: float, b: float, tag: str = "beta"):
        if a <= 0 or b <= 0:
            raise ValueError("beta parameters must be positive")
        self.a, self.b, self.tag = float(a), float(b), tag

    def lambda_nk(self, n: int, k: int) -> float:
        if self.a + k - 2 <= 0:
            return INF
        return math.exp(betaln(self.a + k - 2, self.b + n - k) - betaln(self.a, self.b))

    def posterior_x(self, rng: np.random.Generator, n: int, k: int) -> float:
        return float(rng.beta(self.a + k - 2, self.b + n - k))

    @property
    def finite_full(self) -> bool:
        return False

    def to_json(self):
        if self.tag == "uniform":
            return {"uniform": {}}
        return {"beta": [self.a, self.b]}


class DiracFamily:
    """Lambda = delta_p with unit mass."""

    tag = "dirac"

    def __init__(self, p: float):
        if not 0 < p <= 1:
            raise ValueError("dirac location must lie in (0, 1]")
        self.p = float(p)

    def lambda_nk(self, n: int, k: int) -> float:
        p = self.p
        return p ** k * (1.0 - p) ** (n - k) / (p * p)

    def posterior_x(self, rng, n: int, k: int) -> float:
        return self.p

    @property
    def finite_full(self) -> bool:
        return self.p == 1.0

    def to_json(self):
        return {"dirac": self.p}


@dataclass(frozen=True)
class XiMeasure:
    kingman_mass: float = 0.0
    atoms: tuple = ()
    family: object = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kingman_mass < 0:
            raise ValueError("kingman mass must be nonnegative")
        for w, x in self.atoms:
            if not w > 0:
                raise ValueError("atom weights must be positive")
            if not isinstance(x, SimplexPoint) or len(x) == 0:
                raise ValueError("atoms must be nonzero simplex points")
        if self.family is not None and self.atoms:
            raise ValueError("a closed-form family excludes explicit atoms")

    @classmethod
    def kingman(cls, a: float = 1.0) -> "XiMeasure":
        return cls(kingman_mass=float(a))

    @classmethod
    def from_atoms(cls, atoms, kingman: float = 0.0) -> "XiMeasure":
        return cls(float(kingman), tuple((float(w), SimplexPoint(x)) for w, x in atoms))

    @classmethod
    def lambda_dirac(cls, p: float, mass: float = 1.0, kingman: float = 0.0) -> "XiMeasure":
        return cls.from_atoms([(mass, [p])], kingman)

    @classmethod
    def beta(cls, a: float, b: float, kingman: float = 0.0) -> "XiMeasure":
        return cls(float(kingman), (), BetaFamily(a, b))

    @classmethod
    def uniform(cls, kingman: float = 0.0) -> "XiMeasure":
        return cls(float(kingman), (), BetaFamily(1.0, 1.0, tag="uniform"))

    @property
    def total_mass(self) -> float:
        return self.kingman_mass + sum(w for w, _ in self.atoms) + (1.0 if self.family else 0.0)

    def is_zero(self) -> bool:
        return self.total_mass == 0

    def to_json(self) -> dict:
        out: dict = {"kingman": self.kingman_mass,
                     "atoms": [{"w": w, "x": list(x.entries)} for w, x in self.atoms]}
        if self.family is not None:
            out["family"] = self.family.to_json()
        return out


def xi_from_json(obj) -> XiMeasure:
    if isinstance(obj, str):
        obj = json.loads(obj)
    if not isinstance(obj, dict):
        raise ValueError("model descriptor must be a JSON object")
    unknown = set(obj) - {"kingman", "atoms", "family"}
    if unknown:
        raise ValueError(f"unknown model keys {sorted(unknown)}")
    a = float(obj.get("kingman", 0.0))
    atoms = tuple((float(at["w"]), SimplexPoint(at["x"])) for at in obj.get("atoms", []))
    fam = obj.get("family")
    family = None
    if fam:
        if not isinstance(fam, dict) or len(fam) != 1:
            raise ValueError("family must hold exactly one tag")
        (tag, val), = fam.items()
        if tag == "beta":
            family = BetaFamily(*val)
        elif tag == "uniform":
            family = BetaFamily(1.0, 1.0, tag="uniform")
        elif tag == "dirac":
            family = DiracFamily(val)
        else:
            raise ValueError(f"unknown family {tag!r}")
    return XiMeasure(a, atoms, family)


def paintbox_labels(x: SimplexPoint, n: int, rng: np.random.Generator, rows: int | None = None) -> np.ndarray:
    """Component index of each level's uniform mark, -1 for the dust interval.

    With ``rows`` a (rows, n) array of independent paintboxes is returned.
    """
    cum = np.cumsum(x.entries) if len(x) else np.zeros(0)
    u = rng.random(n if rows is None else (rows, n))
    lab = np.searchsorted(cum, u, side="right")
    lab[lab >= len(x)] = -1
    return lab


def paintbox_sample(x: SimplexPoint, n: int, rng: np.random.Generator) -> Partition:
    lab = paintbox_labels(x, n, rng)
    # dust levels become singletons
    keys = [int(v) if v >= 0 else -(i + 1) for i, v in enumerate(lab)]
    return Partition.from_labels(keys)


def injective_moment(x: Sequence[float], ks: Sequence[int]) -> float:
    """Sum over pairwise distinct i_1..i_l of prod x_{i_m}^{k_m}.

    Dynamic programme over components and the set of already placed blocks;
    equivalent to enumerating permutations of the support positions.
    """
    ell = len(ks)
    if ell == 0:
        return 1.0
    if ell > len(x):
        return 0.0
    full = (1 << ell) - 1
    dp = np.zeros(full + 1)
    dp[0] = 1.0
    for xc in x:
        pw = [xc ** k for k in ks]
        new = dp.copy()
        for mask in range(full + 1):
            v = dp[mask]
            if v == 0.0:
                continue
            for b in range(ell):
                if not mask >> b & 1:
                    new[mask | 1 << b] += v * pw[b]
        dp = new
    return float(dp[full])


def _sizes_key(sizes: Sequence[int]) -> tuple:
    return tuple(sorted(sizes, reverse=True))


def kappa_sigma(x: SimplexPoint, n: int, sizes: Sequence[int]) -> float:
    """Paintbox probability that the restricted event equals a system of given sizes."""
    rest = n - sum(sizes)
    if rest < 0:
        raise ValueError("sizes exceed level count")
    return injective_moment(x.entries, _sizes_key(sizes)) * x.dust_length ** rest


def rate_sigma_sizes(xi: XiMeasure, n: int, sizes: Sequence[int]) -> float:
    key = ("sig", n, _sizes_key(sizes))
    hit = xi._cache.get(key)
    if hit is not None:
        return hit
    sizes = list(sizes)
    ell = len(sizes)
    total = 0.0
    if ell:
        for w, x in xi.atoms:
            total += w / x.l2sq * kappa_sigma(x, n, sizes)
        if xi.family is not None and ell == 1:
            total += xi.family.lambda_nk(n, sizes[0])
        if xi.kingman_mass > 0 and ell == 1:
            if sizes[0] == 2:
                total += xi.kingman_mass
            elif sizes[0] == 1:
                total = INF
    xi._cache[key] = total
    return total


def rate_sigma(xi: XiMeasure, n: int, sigma: SubsetSystem) -> float:
    if sigma.n != n:
        raise ValueError("subset system lives on a different level count")
    return rate_sigma_sizes(xi, n, sigma.sizes)


def rate_pi(xi: XiMeasure, n: int, pi: Partition) -> float:
    if pi.n != n:
        raise ValueError("partition lives on a different level count")
    big = [len(b) for b in pi.blocks if len(b) >= 2]
    if not big:
        raise ValueError("rate_pi needs a partition with a non-singleton block")
    s = n - sum(big)
    # completions where j of the s singletons are traces of large blocks
    return math.fsum(math.comb(s, j) * rate_sigma_sizes(xi, n, big + [1] * j) for j in range(s + 1))


def dust_rate(xi: XiMeasure) -> float:
    """The rate lambda_{1,{{1}}} at which a fixed level takes part in events."""
    if xi.kingman_mass > 0:
        return INF
    total = math.fsum(w * x.l1 / x.l2sq for w, x in xi.atoms)
    if xi.family is not None:
        total += xi.family.lambda_nk(1, 1)
    return total


def classify_dust(xi: XiMeasure) -> str:
    return "dust" if math.isfinite(dust_rate(xi)) else "no_dust"


@lru_cache(maxsize=4096)
def _elementary(entries: tuple, upto: int) -> tuple:
    e = [1.0] + [0.0] * upto
    for v in entries:
        for j in range(upto, 0, -1):
            e[j] += e[j - 1] * v
    return tuple(e)


def atom_visible_probability(x: SimplexPoint, n: int, scope: str) -> float:
    """Probability that a paintbox restricted to n levels is visible in the scope."""
    if scope == "touches_level":
        return 1.0 - x.dust_length ** n
    if scope != "changes_gamma":
        raise ValueError(f"unknown scope {scope!r}")
    if n < 2:
        return 0.0
    top = min(n, len(x))
    e = _elementary(x.entries, top)
    d = x.dust_length
    # all levels in distinct components or dust
    distinct = math.fsum(math.comb(n, j) * d ** (n - j) * math.factorial(j) * e[j]
                         for j in range(top + 1))
    return max(0.0, 1.0 - distinct)


def family_size_rates(family, n: int, scope: str) -> np.ndarray:
    """Rates C(n,k) * lambda_{n,k} for k = 0..n (zero outside the scope)."""
    out = np.zeros(n + 1)
    lo = 1 if scope == "touches_level" else 2
    for k in range(lo, n + 1):
        lam = family.lambda_nk(n, k)
        if math.isinf(lam):
            out[k] = INF
            continue
        if lam == 0.0:
            continue
        out[k] = math.exp(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1) + math.log(lam))
    return out


def component_rates(xi: XiMeasure, n: int, scope: str) -> list[tuple[str, float]]:
    """Visible rate per origin: ('kingman', r), ('atom:k', r), ('family', r)."""
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    out: list[tuple[str, float]] = []
    if xi.kingman_mass > 0:
        if scope == "touches_level":
            out.append(("kingman", INF))
        else:
            out.append(("kingman", xi.kingman_mass * n * (n - 1) / 2))
    for k, (w, x) in enumerate(xi.atoms):
        out.append((f"atom:{k}", w / x.l2sq * atom_visible_probability(x, n, scope)))
    if xi.family is not None:
        out.append(("family", float(np.sum(family_size_rates(xi.family, n, scope)))))
    return out


def visible_rate(xi: XiMeasure, n: int, scope: str) -> float:
    rates = [r for _, r in component_rates(xi, n, scope)]
    if any(math.isinf(r) for r in rates):
        return INF
    return math.fsum(rates)
