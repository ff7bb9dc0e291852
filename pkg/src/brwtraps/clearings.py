"""Trap-free balls ("clearings") and the scans built on them.

Balls are closed: B(c, r) holds the lattice sites z with |z - c| <= r.
A clearing is accessible when its sites lie in the proxy infinite cluster.
Since a closed lattice ball centred at a lattice point is connected, that
amounts to the centre carrying the proxy label.

The scans are exhaustive over centres.  They use the squared Euclidean
distance from each site to the nearest trap, with the box padded by a ring
of traps, so that "B(c, r) is trap-free and fits in the box" reads
``dist2[c] > r**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, OutOfBoxError
from .lattice import LatticeConfig, TrapField, generate_environment
from .percolation import ClusterLabeling, infinite_cluster_proxy, label_vacant_clusters
from .rng import derive_replica_seed
from .walk import constants


@dataclass(frozen=True)
class Clearing:
    center: tuple[int, ...]
    radius: float
    accessible: bool


@dataclass(frozen=True)
class ScaleSet:
    """Time-n radii: rho(n), r(n) for large clearings, R(n) for huge ones."""

    n: int
    dimension: int
    vacancy_prob: float
    k2: float
    A: float
    rho: float
    r_large: float
    r_huge: float

    @property
    def half_width(self) -> int:
        """Integer half-side of [-An, An]^d."""
        return int(math.floor(self.A * self.n))

    @property
    def positive(self) -> bool:
        return self.rho > 1 and self.r_large > 0 and self.r_huge > 0


def scales(n: int, d: int, p: float, k2: float = 1.0, A: float = 1.0) -> ScaleSet:
    if n < 2:
        raise ConfigError("scales need n >= 2 (log n must be positive)")
    if k2 <= 0 or A <= 0:
        raise ConfigError("k2 and A must be positive")
    c = constants(d, p)
    logn = math.log(n)
    rho = k2 * n / logn ** (2.0 / d)
    r_large = (c.R0 / 2) * math.log(rho) ** (1.0 / d) if rho > 1 else float("nan")
    r_huge = c.R0 * logn ** (1.0 / d) - 2 * math.sqrt(d)
    return ScaleSet(n, d, p, k2, A, rho, r_large, r_huge)


def min_positive_n(d: int, p: float, k2: float = 1.0, A: float = 1.0, limit: int = 10**9) -> int:
    """Smallest n >= 2 from which every radius of ``scales`` stays positive."""
    c = constants(d, p)
    # r_huge > 0 iff log n > (2 sqrt(d) / R0)^d; rho increases for n >= e^(2/d)
    n = max(3, math.floor(math.exp((2 * math.sqrt(d) / c.R0) ** d)))
    while n < limit:
        if scales(n, d, p, k2, A).positive:
            while n > 3 and scales(n - 1, d, p, k2, A).positive:
                n -= 1
            return n
        n *= 2
    raise ConfigError("radii never become positive below the search limit")


def ball_sites(center: Sequence[int], radius: float) -> list[tuple[int, ...]]:
    if radius < 0:
        raise ConfigError("radius must be non-negative")
    d = len(center)
    m = int(math.floor(radius))
    axes = np.meshgrid(*[np.arange(-m, m + 1)] * d, indexing="ij")
    off = np.stack([a.ravel() for a in axes], axis=1)
    off = off[(off * off).sum(axis=1) <= radius * radius]
    return [tuple(int(c) + int(o) for c, o in zip(center, row)) for row in off]


def _proxy_label(field: TrapField, labeling: ClusterLabeling | None) -> tuple[ClusterLabeling, int | None]:
    labeling = labeling if labeling is not None else label_vacant_clusters(field)
    return labeling, infinite_cluster_proxy(labeling)


def is_clearing(
    field: TrapField,
    center: Sequence[int],
    radius: float,
    require_accessible: bool = False,
    labeling: ClusterLabeling | None = None,
) -> bool:
    sites = ball_sites(center, radius)
    L = field.box_radius
    if any(abs(c) > L for s in sites for c in s):
        raise OutOfBoxError(f"ball of radius {radius} at {tuple(center)} leaves the box of radius {L}")
    idx = tuple(np.array(sites).T + L)
    if not field.vacant[idx].all():
        return False
    if require_accessible:
        labeling, proxy = _proxy_label(field, labeling)
        return proxy is not None and bool((labeling.labels[idx] == proxy).all())
    return True


class _TrapDistance:
    """Squared distance from each box site to the nearest trap (padding included)."""

    def __init__(self, field: TrapField):
        self.field = field

    @cached_property
    def dist2(self) -> np.ndarray:
        vac = np.pad(self.field.vacant, 1, constant_values=False)
        dist = ndimage.distance_transform_edt(vac)
        inner = tuple(slice(1, -1) for _ in range(vac.ndim))
        return np.rint(dist[inner] ** 2).astype(np.int64)

    def clearing_mask(self, radius: float) -> np.ndarray:
        if radius < 0:
            raise ConfigError("radius must be non-negative")
        # a trap at squared distance D lies in the closed ball iff D <= r^2
        return self.dist2 > radius * radius


_distance_cache: "dict[int, _TrapDistance]" = {}


def trap_distance(field: TrapField) -> _TrapDistance:
    key = id(field)
    hit = _distance_cache.get(key)
    if hit is None or hit.field is not field:
        _distance_cache.clear()
        hit = _distance_cache[key] = _TrapDistance(field)
    return hit


def clearing_mask(field: TrapField, radius: float, labeling: ClusterLabeling | None = None, accessible: bool = False) -> np.ndarray:
    """Boolean mask over the box of centres c with B(c, radius) a clearing inside the box."""
    mask = trap_distance(field).clearing_mask(radius)
    if accessible:
        labeling, proxy = _proxy_label(field, labeling)
        mask = mask & (labeling.labels == proxy) if proxy is not None else np.zeros_like(mask)
    return mask


def _require_margin(field: TrapField, half: int, radius: float, what: str) -> None:
    need = half + int(math.floor(max(radius, 0.0)))
    if field.box_radius < need:
        raise OutOfBoxError(f"{what} needs box radius L >= {need}, have {field.box_radius}")


def phi_mask(field: TrapField, labeling: ClusterLabeling | None, n: int, scale: ScaleSet) -> np.ndarray:
    """Mask over the box of the restricted target set: centres in [-An, An]^d
    whose r(n)-ball is trap-free."""
    r = scale.r_large
    if not r >= 0:
        raise ConfigError(f"r(n) = {r} is not a valid radius at n = {scale.n}")
    half = scale.half_width
    _require_margin(field, half, r, "the target set")
    L = field.box_radius
    window = tuple(slice(L - half, L + half + 1) for _ in range(field.dimension))
    out = np.zeros(field.config.shape, dtype=bool)
    out[window] = clearing_mask(field, r)[window]
    return out


def phi_set(field: TrapField, labeling: ClusterLabeling | None, n: int, scale: ScaleSet) -> set[tuple[int, ...]]:
    mask = phi_mask(field, labeling, n, scale)
    L = field.box_radius
    return {tuple(int(c) - L for c in idx) for idx in np.argwhere(mask)}


def lemma1_radius(n: int, d: int, p: float) -> float:
    """Target clearing radius r_n = (2 R0 / 3) (log 2^n)^(1/d)."""
    return 2 * constants(d, p).R0 / 3 * (n * math.log(2)) ** (1.0 / d)


def lemma1_half_side(n: int, d: int, p: float) -> float:
    """Half-side 2 R0 (log 2^n)^(1/d) 2^n of the scanned cube."""
    return 2 * constants(d, p).R0 * (n * math.log(2)) ** (1.0 / d) * 2.0 ** n


@dataclass(frozen=True)
class Lemma1Verdict:
    center: tuple[int, ...]
    found: bool
    witness: tuple[int, ...] | None
    radius: float


def lemma1_scan(
    field: TrapField, labeling: ClusterLabeling | None, n: int, centers: Sequence[Sequence[int]]
) -> list[Lemma1Verdict]:
    """For each cube x_j + T_n, look for an accessible clearing of radius r_n
    lying inside the cube.  The witness is the admissible centre closest to
    x_j, ties broken lexicographically."""
    d, p = field.dimension, field.config.vacancy_prob
    r = lemma1_radius(n, d, p)
    a = int(math.floor(lemma1_half_side(n, d, p)))
    L = field.box_radius
    for x in centers:
        if max(abs(int(c)) for c in x) + a > L:
            raise OutOfBoxError(f"cube of half-side {a} around {tuple(x)} needs L >= {max(abs(int(c)) for c in x) + a}, have {L}")
    labeling, _ = _proxy_label(field, labeling)
    mask = clearing_mask(field, r, labeling, accessible=True)
    reach = a - int(math.floor(r))
    out = []
    for x in centers:
        x = tuple(int(c) for c in x)
        if reach < 0:
            out.append(Lemma1Verdict(x, False, None, r))
            continue
        window = tuple(slice(c + L - reach, c + L + reach + 1) for c in x)
        hits = np.argwhere(mask[window])
        if hits.size == 0:
            out.append(Lemma1Verdict(x, False, None, r))
            continue
        rel = hits - reach
        key = np.lexsort(tuple(rel[:, i] for i in reversed(range(d))) + ((rel * rel).sum(axis=1),))
        best = rel[key[0]]
        out.append(Lemma1Verdict(x, True, tuple(int(c) + int(b) for c, b in zip(x, best)), r))
    return out


def huge_clearing_scan(field: TrapField, labeling: ClusterLabeling | None, n: int, A: float = 1.0) -> Clearing | None:
    """Lexicographically smallest centre in [-An, An]^d of an accessible
    clearing of radius R(n), or None."""
    sc = scales(n, field.dimension, field.config.vacancy_prob, A=A)
    R = sc.r_huge
    if R < 0:
        raise ConfigError(f"R({n}) = {R:.4f} is negative; use n >= {min_positive_n(field.dimension, field.config.vacancy_prob)}")
    half = sc.half_width
    _require_margin(field, half, R, "the huge-clearing scan")
    L = field.box_radius
    mask = clearing_mask(field, R, labeling, accessible=True)
    window = tuple(slice(L - half, L + half + 1) for _ in range(field.dimension))
    hits = np.argwhere(mask[window])
    if hits.size == 0:
        return None
    # argwhere enumerates in row-major order, which is lexicographic
    return Clearing(tuple(int(c) - half for c in hits[0]), R, True)


def large_clearing_scan(field: TrapField, labeling: ClusterLabeling | None, n: int, k2: float = 1.0, A: float = 1.0) -> list[Clearing]:
    """All clearings of radius r(n) centred in [-An, An]^d, in lexicographic order."""
    sc = scales(n, field.dimension, field.config.vacancy_prob, k2=k2, A=A)
    labeling, proxy = _proxy_label(field, labeling)
    mask = phi_mask(field, labeling, n, sc)
    L = field.box_radius
    return [
        Clearing(tuple(int(c) - L for c in idx), sc.r_large, proxy is not None and bool(labeling.labels[tuple(idx)] == proxy))
        for idx in np.argwhere(mask)
    ]


@dataclass(frozen=True)
class RadiusScalingRow:
    rho: float
    radius: float
    samples: int
    hits: int

    @property
    def probability(self) -> float:
        return self.hits / self.samples

    @property
    def se(self) -> float:
        q = self.probability
        return math.sqrt(q * (1 - q) / self.samples)


def radius_scaling_stats(
    d: int, p: float, rho_values: Sequence[float], samples_per_rho: int, master_seed: int
) -> list[RadiusScalingRow]:
    """Empirical chance that a fresh cube [-rho, rho]^d holds an accessible
    clearing of radius (R0/2)(log rho)^(1/d) lying inside the cube."""
    R0 = constants(d, p).R0
    rows = []
    for j, rho in enumerate(rho_values):
        half = int(math.floor(rho))
        radius = (R0 / 2) * math.log(rho) ** (1.0 / d) if rho > 1 else 0.0
        hits = 0
        family = derive_replica_seed(master_seed, j)
        for s in range(samples_per_rho):
            if radius > half:
                continue
            env = generate_environment(LatticeConfig(d, half, p, derive_replica_seed(family, s)), warn=False)
            if clearing_mask(env, radius, accessible=True).any():
                hits += 1
        rows.append(RadiusScalingRow(float(rho), radius, samples_per_rho, hits))
    return rows
