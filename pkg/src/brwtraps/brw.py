"""Monte Carlo of the branching random walk with hard killing.

Dynamics per time step: every particle jumps to a uniform nearest
neighbour; on a vacant site it is replaced by two particles, on a trap it is
removed.  Two samplers share this law:

``particle``
    One random direction per particle.  Directions are counter-based hashes
    of (replica seed, step, particle index), particles being ordered so that
    the children of the j-th surviving particle sit at 2j and 2j+1.  A
    replica therefore reproduces bit-for-bit whether it runs alone or inside
    a vectorised batch.
``count``
    Particles sharing a site are moved together: the 2d-way multinomial
    split is drawn as a chain of binomials from a Philox stream keyed by the
    replica seed.  Counts are exact int64; exceeding 2**62 raises.

Replica ``i`` of an ensemble uses ``derive_replica_seed(master_seed, i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, CountOverflowError, NoSurvivorsError, OutOfBoxError, ParticleCapError
from .lattice import TrapField, flat_offsets, required_radius
from .rng import bounded, derive_replica_seed, generator, particle_hash, step_keys

MODES = ("particle", "count")
COUNT_LIMIT = 1 << 62
_CHUNK_PARTICLES = 1 << 22


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class SimOptions:
    horizon: int
    mode: str = "particle"
    replica_seed: int = 0
    particle_cap: int = 10_000_000
    target_set: np.ndarray | None = None
    track_range: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        if self.particle_cap < 1:
            raise ConfigError("particle_cap must be >= 1")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Observables of one replica for k = 0..n.

    ``M`` is the largest Euclidean distance from the start among visited
    sites (the radius of the smallest start-centred ball holding the range);
    ``hits[k]`` says whether the range up to time k met the target set.
    """

    start: tuple[int, ...]
    mode: str
    replica_seed: int
    N: np.ndarray
    F: np.ndarray
    T: np.ndarray
    M: np.ndarray | None = None
    hits: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return int(self.N.size - 1)

    @property
    def Sigma(self) -> np.ndarray:
        return self.N + self.T

    @property
    def survived(self) -> np.ndarray:
        return self.N >= 1

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        same = lambda a, b: (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
        return (
            self.start == other.start and self.mode == other.mode and self.replica_seed == other.replica_seed
            and all(same(getattr(self, f), getattr(other, f)) for f in ("N", "F", "T", "M", "hits"))
        )

    __hash__ = None

    def rows(self) -> list[tuple]:
        out = []
        for k in range(self.N.size):
            out.append((
                k, int(self.N[k]), int(self.F[k]), int(self.T[k]), int(self.N[k] + self.T[k]),
                None if self.M is None else float(self.M[k]),
                None if self.hits is None else bool(self.hits[k]),
            ))
        return out


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Observables of replicas 0..R-1, one row per replica."""

    start: tuple[int, ...]
    mode: str
    seeds: np.ndarray
    N: np.ndarray
    F: np.ndarray
    T: np.ndarray
    M: np.ndarray | None = None
    hits: np.ndarray | None = None

    @property
    def replicas(self) -> int:
        return int(self.seeds.size)

    def record(self, i: int) -> TrajectoryRecord:
        return TrajectoryRecord(
            self.start, self.mode, int(self.seeds[i]), self.N[i], self.F[i], self.T[i],
            None if self.M is None else self.M[i],
            None if self.hits is None else self.hits[i],
        )

    def records(self) -> list[TrajectoryRecord]:
        return [self.record(i) for i in range(self.replicas)]


# ---------------------------------------------------------------- geometry


class _Geometry:
    """Flat-index view of a field for fast stepping."""

    def __init__(self, field: TrapField, start: Sequence[int], horizon: int, target=None, track_range=False):
        self.field = field
        self.start = tuple(int(c) for c in start)
        idx = field.array_index(self.start)
        if field.traps[idx]:
            raise ConfigError(f"start site {self.start} is a trap")
        need = required_radius(self.start, horizon)
        if field.box_radius < need:
            raise OutOfBoxError(
                f"walks of {horizon} steps from {self.start} can leave the box; need L >= {need}, have {field.box_radius}"
            )
        self.d = field.dimension
        self.shape = field.config.shape
        self.vac = np.ascontiguousarray(field.vacant.ravel())
        self.offsets = flat_offsets(self.shape)
        self.start_flat = field.flat_index(self.start)
        self.start_idx = np.array(idx, dtype=np.int64)
        self.target = None
        if target is not None:
            self.target = _target_mask(field, target).ravel()
        self.track_range = track_range

    def norms(self, flat: np.ndarray) -> np.ndarray:
        coords = np.stack(np.unravel_index(flat, self.shape), axis=1) - self.start_idx
        return np.sqrt((coords.astype(np.float64) ** 2).sum(axis=1))


def _target_mask(field: TrapField, target) -> np.ndarray:
    if isinstance(target, np.ndarray) and target.dtype == bool:
        if target.shape != field.config.shape:
            raise ConfigError("target mask must match the box shape")
        return target
    mask = np.zeros(field.config.shape, dtype=bool)
    for site in target:
        mask[field.array_index(site)] = True
    return mask


# ---------------------------------------------------------------- particle mode


def _particle_batch(geo: _Geometry, seeds: np.ndarray, n: int, cap: int) -> dict:
    R = seeds.size
    seeds = seeds.astype(np.uint64)
    N = np.zeros((R, n + 1), dtype=np.int64)
    F = np.zeros((R, n + 1), dtype=np.int64)
    T = np.zeros((R, n + 1), dtype=np.int64)
    N[:, 0] = 1
    M = np.zeros((R, n + 1)) if geo.track_range else None
    hits = None
    if geo.target is not None:
        hits = np.zeros((R, n + 1), dtype=bool)
        hits[:, 0] = geo.target[geo.start_flat]
    pos = np.full(R, geo.start_flat, dtype=np.int64)
    rep = np.arange(R, dtype=np.int64)
    two_d = 2 * geo.d
    for k in range(1, n + 1):
        counts = np.bincount(rep, minlength=R)
        first = np.cumsum(counts) - counts
        within = np.arange(pos.size, dtype=np.int64) - first[rep]
        keys = step_keys(seeds, k)[rep]
        dirs = bounded(particle_hash(keys, within), two_d)
        dest = pos + geo.offsets[dirs]
        ok = geo.vac[dest]
        born = np.bincount(rep[ok], minlength=R)
        F[:, k] = F[:, k - 1] + born
        T[:, k] = T[:, k - 1] + (counts - born)
        N[:, k] = 2 * born
        landed, lrep = dest[ok], rep[ok]
        if M is not None:
            mk = M[:, k - 1].copy()
            if landed.size:
                np.maximum.at(mk, lrep, geo.norms(landed))
            M[:, k] = mk
        if hits is not None:
            hk = hits[:, k - 1].copy()
            hk[lrep[geo.target[landed]]] = True
            hits[:, k] = hk
        over = np.flatnonzero(N[:, k] > cap)
        if over.size:
            i = int(over[0])
            rec = TrajectoryRecord(
                geo.start, "particle", int(seeds[i]), N[i, : k + 1], F[i, : k + 1], T[i, : k + 1],
                None if M is None else M[i, : k + 1], None if hits is None else hits[i, : k + 1],
            )
            raise ParticleCapError(f"replica seed {int(seeds[i])}: N_{k} = {N[i, k]} exceeds cap {cap}", rec)
        pos = np.repeat(landed, 2)
        rep = np.repeat(lrep, 2)
    return dict(N=N, F=F, T=T, M=M, hits=hits)


# ---------------------------------------------------------------- count mode


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Particle counts per site (flat indices into the box, ascending)."""

    time: int
    sites: np.ndarray
    counts: np.ndarray
    fissions: int = 0
    trap_hits: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def alive(self) -> bool:
        return self.total >= 1

    @classmethod
    def initial(cls, field: TrapField, start: Sequence[int]) -> "PopulationState":
        if field.traps[field.array_index(start)]:
            raise ConfigError(f"start site {tuple(start)} is a trap")
        return cls(0, np.array([field.flat_index(start)], dtype=np.int64), np.ones(1, dtype=np.int64))

    def as_dict(self, field: TrapField) -> dict[tuple[int, ...], int]:
        return {field.site_of(int(s)): int(c) for s, c in zip(self.sites, self.counts)}


def _check_inside(field: TrapField, sites: np.ndarray, dirs: Iterable[int]) -> None:
    """Raise if a particle on ``sites`` would step out of the box."""
    L2 = 2 * field.box_radius
    coords = np.stack(np.unravel_index(sites, field.config.shape), axis=1)
    for k in dirs:
        axis, sign = divmod(int(k), 2)
        edge = L2 if sign == 0 else 0
        if np.any(coords[:, axis] == edge):
            raise OutOfBoxError("a particle reached the box boundary; enlarge the box")


def _count_step(sites, counts, vac, offsets, rng, two_d):
    """Multinomial move of site counts; returns (sites, counts, born, killed)."""
    split = rng.multinomial(counts, np.full(two_d, 1.0 / two_d))
    nz = split > 0
    dest = (sites[:, None] + offsets[None, :])[nz]
    amounts = split[nz].astype(np.int64)
    ok = vac[dest]
    born = int(amounts[ok].sum())
    killed = int(amounts.sum()) - born
    if 2 * born >= COUNT_LIMIT:
        raise CountOverflowError(f"population 2*{born} exceeds 2**62")
    new_sites, inv = np.unique(dest[ok], return_inverse=True)
    new_counts = np.zeros(new_sites.size, dtype=np.int64)
    np.add.at(new_counts, inv, amounts[ok])
    return new_sites, 2 * new_counts, born, killed


def step(state: PopulationState, field: TrapField, rng: np.random.Generator, mode: str = "count") -> PopulationState:
    """Advance the population by one time step."""
    if not state.alive:
        raise ConfigError("cannot step an extinct population")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    two_d = 2 * field.dimension
    _check_inside(field, state.sites, range(two_d))
    offsets = flat_offsets(field.config.shape)
    vac = field.vacant.ravel()
    if mode == "particle":
        movers = np.repeat(state.sites, state.counts)
        dest = movers + offsets[rng.integers(0, two_d, size=movers.size)]
        ok = vac[dest]
        born, killed = int(ok.sum()), int((~ok).sum())
        sites, counts = np.unique(dest[ok], return_counts=True)
        counts = 2 * counts.astype(np.int64)
    else:
        sites, counts, born, killed = _count_step(state.sites, state.counts, vac, offsets, rng, two_d)
    return PopulationState(state.time + 1, sites, counts, state.fissions + born, state.trap_hits + killed)


def _count_replica(geo: _Geometry, seed: int, n: int, cap: int) -> TrajectoryRecord:
    field = geo.field
    rng = generator(seed)
    state = PopulationState.initial(field, geo.start)
    N = np.zeros(n + 1, dtype=np.int64)
    F = np.zeros(n + 1, dtype=np.int64)
    T = np.zeros(n + 1, dtype=np.int64)
    N[0] = 1
    M = np.zeros(n + 1) if geo.track_range else None
    hits = None
    if geo.target is not None:
        hits = np.zeros(n + 1, dtype=bool)
        hits[0] = geo.target[geo.start_flat]
    sites, counts = state.sites, state.counts
    fis = hits_t = 0
    two_d = 2 * geo.d
    for k in range(1, n + 1):
        if sites.size:
            sites, counts, born, killed = _count_step(sites, counts, geo.vac, geo.offsets, rng, two_d)
            fis += born
            hits_t += killed
        state = PopulationState(k, sites, counts, fis, hits_t)
        N[k], F[k], T[k] = state.total, state.fissions, state.trap_hits
        if M is not None:
            M[k] = max(M[k - 1], float(geo.norms(state.sites).max())) if state.sites.size else M[k - 1]
        if hits is not None:
            hits[k] = hits[k - 1] or bool(geo.target[state.sites].any())
        if N[k] > cap:
            rec = TrajectoryRecord(geo.start, "count", seed, N[: k + 1], F[: k + 1], T[: k + 1],
                                   None if M is None else M[: k + 1], None if hits is None else hits[: k + 1])
            raise ParticleCapError(f"replica seed {seed}: N_{k} = {N[k]} exceeds cap {cap}", rec)
    return TrajectoryRecord(geo.start, "count", seed, N, F, T, M, hits)


# ---------------------------------------------------------------- public drivers


def simulate(field: TrapField, start: Sequence[int], options: SimOptions) -> TrajectoryRecord:
    geo = _Geometry(field, start, options.horizon, options.target_set, options.track_range)
    if options.mode == "count":
        return _count_replica(geo, options.replica_seed, options.horizon, options.particle_cap)
    out = _particle_batch(geo, np.array([options.replica_seed], dtype=np.uint64), options.horizon, options.particle_cap)
    return TrajectoryRecord(
        geo.start, "particle", options.replica_seed, out["N"][0], out["F"][0], out["T"][0],
        None if out["M"] is None else out["M"][0], None if out["hits"] is None else out["hits"][0],
    )


def replica_seeds(master_seed: int, replicas: int) -> np.ndarray:
    return np.array([derive_replica_seed(master_seed, i) for i in range(replicas)], dtype=np.uint64)


def simulate_many(field: TrapField, start: Sequence[int], options: SimOptions, replicas: int, master_seed: int) -> Ensemble:
    """Run replicas 0..replicas-1; ``options.replica_seed`` is ignored."""
    if replicas < 1:
        raise ConfigError("replicas must be >= 1")
    geo = _Geometry(field, start, options.horizon, options.target_set, options.track_range)
    seeds = replica_seeds(master_seed, replicas)
    n = options.horizon
    if options.mode == "count":
        recs = [_count_replica(geo, int(s), n, options.particle_cap) for s in seeds]
        stack = lambda name: None if getattr(recs[0], name) is None else np.stack([getattr(r, name) for r in recs])
        return Ensemble(geo.start, "count", seeds, stack("N"), stack("F"), stack("T"), stack("M"), stack("hits"))
    # chunk so that a fully branching chunk stays bounded in memory
    chunk = max(1, min(replicas, _CHUNK_PARTICLES // max(1, min(options.particle_cap, 1 << min(n, 40)))))
    parts = [_particle_batch(geo, seeds[i:i + chunk], n, options.particle_cap) for i in range(0, replicas, chunk)]
    cat = lambda name: None if parts[0][name] is None else np.concatenate([p[name] for p in parts])
    return Ensemble(geo.start, "particle", seeds, cat("N"), cat("F"), cat("T"), cat("M"), cat("hits"))


# ---------------------------------------------------------------- survival


def survival_probability_exact(field: TrapField, start: Sequence[int], n: int) -> np.ndarray:
    """P(S_k) for k = 0..n from the extinction recursion.

    v_k(x) = (1/2d) sum_{z ~ x} ( [z trap] + [z vacant] v_{k-1}(z)^2 ),
    v_0 = 0, where v_k(x) is the chance that the progeny of one particle
    at x is extinct within k steps.
    """
    geo = _Geometry(field, start, n)
    vac = np.pad(field.vacant, 1, constant_values=False)
    trap = (~vac).astype(np.float64)
    d = field.dimension
    v = np.zeros(vac.shape)
    centre = tuple(int(i) + 1 for i in geo.start_idx)
    out = np.empty(n + 1)
    out[0] = 1.0
    inner = tuple(slice(1, -1) for _ in range(d))
    for k in range(1, n + 1):
        w = np.where(vac, v * v, 0.0) + trap
        acc = np.zeros(tuple(s - 2 for s in vac.shape))
        for axis in range(d):
            for shift in (-1, 1):
                src = [slice(1, -1)] * d
                src[axis] = slice(1 + shift, vac.shape[axis] - 1 + shift)
                acc += w[tuple(src)]
        v = np.zeros(vac.shape)
        v[inner] = acc / (2 * d)
        out[k] = 1.0 - v[centre]
    return out


def lineage_depth(field: TrapField, start: Sequence[int], n: int, seed: int, _geo: _Geometry | None = None) -> int:
    """Deepest generation (capped at n) reached by the killed process.

    Depth-first search over the genealogy, stopping as soon as one line of
    descent reaches time n.  Each explored particle draws its own jump, so
    the returned depth D satisfies P(D >= k) = P(S_k) for every k <= n while
    typically exploring only a handful of particles per generation.  A
    particle jumps once and, on a vacant site, leaves two particles there.
    """
    geo = _geo or _Geometry(field, start, n)
    vac = geo.vac.tobytes()
    offs = [int(o) for o in geo.offsets]
    rng = generator(seed)
    two_d = 2 * geo.d
    buf: list[int] = []
    bi = 0
    stack = [(geo.start_flat, 0)]
    best = 0
    while stack:
        pos, t = stack.pop()
        if t > best:
            best = t
            if best >= n:
                return n
        if bi == len(buf):
            buf = rng.integers(0, two_d, size=1024).tolist()
            bi = 0
        z = pos + offs[buf[bi]]
        bi += 1
        if vac[z]:
            stack.append((z, t + 1))
            stack.append((z, t + 1))
    return best


@dataclass(frozen=True)
class SurvivalEstimate:
    horizon: int
    replicas: int
    survivors: int

    @property
    def probability(self) -> float:
        return self.survivors / self.replicas

    @property
    def se(self) -> float:
        p = self.probability
        return math.sqrt(p * (1 - p) / self.replicas)


def survival_study(
    field: TrapField, start: Sequence[int], horizons: Sequence[int], replicas: int, master_seed: int
) -> list[SurvivalEstimate]:
    """Estimate P(S_k) at several horizons from one set of replicas."""
    n = max(horizons)
    geo = _Geometry(field, start, n)
    depths = np.array(
        [lineage_depth(field, start, n, derive_replica_seed(master_seed, i), geo) for i in range(replicas)]
    )
    return [SurvivalEstimate(h, replicas, int(np.count_nonzero(depths >= h))) for h in horizons]


@dataclass(frozen=True)
class ConditionedResult:
    horizon: int
    replicas: int
    accepted: np.ndarray
    records: list

    @property
    def acceptance_rate(self) -> float:
        return self.accepted.size / self.replicas

    @property
    def se(self) -> float:
        p = self.acceptance_rate
        return math.sqrt(p * (1 - p) / self.replicas)


def simulate_conditioned(
    field: TrapField,
    start: Sequence[int],
    n: int,
    replicas: int,
    master_seed: int,
    mode: str = "count",
    with_records: bool = True,
    options: SimOptions | None = None,
) -> ConditionedResult:
    """Keep the replicas alive at time n (survival to n stands in for
    ultimate survival).  Without records the lineage search decides S_n,
    which stays cheap at horizons where full populations are huge."""
    if with_records:
        opts = options or SimOptions(horizon=n, mode=mode)
        opts = replace(opts, horizon=n, mode=mode)
        ens = simulate_many(field, start, opts, replicas, master_seed)
        accepted = np.flatnonzero(ens.N[:, n] >= 1)
        records = [ens.record(int(i)) for i in accepted]
    else:
        geo = _Geometry(field, start, n)
        depths = np.array(
            [lineage_depth(field, start, n, derive_replica_seed(master_seed, i), geo) for i in range(replicas)]
        )
        accepted = np.flatnonzero(depths >= n)
        records = []
    if accepted.size == 0:
        raise NoSurvivorsError(f"no replica out of {replicas} survived to time {n}; try more replicas")
    return ConditionedResult(n, replicas, accepted, records)


# ---------------------------------------------------------------- free BRW


def _free_box_check(mask: np.ndarray, start_idx: Sequence[int], n: int) -> None:
    for c, s in zip(start_idx, mask.shape):
        if c - n < 0 or c + n >= s:
            raise OutOfBoxError(f"target box too small for {n} free steps from the start")


def two_colored_counts(target, start: Sequence[int], n: int, replicas: int, seed: int) -> np.ndarray:
    """Blue-particle counts N_n^B of a free BRW coloured by ``target``.

    ``target`` is a TrapField (its traps form the set A) or a boolean mask
    over a box centred at the origin.  A particle is blue while its ancestral
    line has avoided A.
    """
    if n > 25:
        raise ConfigError("free BRW simulation is exact only up to n = 25")
    mask = target.traps if isinstance(target, TrapField) else np.asarray(target, dtype=bool)
    L = (mask.shape[0] - 1) // 2
    start_idx = [int(c) + L for c in start]
    _free_box_check(mask, start_idx, n)
    flat = mask.ravel()
    offs = flat_offsets(mask.shape)
    start_flat = int(np.ravel_multi_index(start_idx, mask.shape))
    rng = generator(seed)
    out = np.empty(replicas, dtype=np.int64)
    chunk = max(1, _CHUNK_PARTICLES >> n)
    two_d = 2 * mask.ndim
    for lo in range(0, replicas, chunk):
        m = min(chunk, replicas - lo)
        pos = np.full((m, 1), start_flat, dtype=np.int64)
        blue = np.full((m, 1), not flat[start_flat])
        for _ in range(n):
            pos = pos + offs[rng.integers(0, two_d, size=pos.shape)]
            blue = blue & ~flat[pos]
            pos = np.repeat(pos, 2, axis=1)
            blue = np.repeat(blue, 2, axis=1)
        out[lo:lo + m] = blue.sum(axis=1)
    return out


def two_colored_simulate(target, n: int, rng: np.random.Generator, start: Sequence[int] | None = None) -> tuple[int, int]:
    """One replica: (total free mass 2^n, blue count N_n^B)."""
    mask = target.traps if isinstance(target, TrapField) else np.asarray(target, dtype=bool)
    start = (0,) * mask.ndim if start is None else start
    seed = int(rng.integers(0, 2**63))
    return 2 ** n, int(two_colored_counts(mask, start, n, 1, seed)[0])


BRANCHING_ORDERS = ("move-split", "split-move")


def _check_order(order: str) -> None:
    if order not in BRANCHING_ORDERS:
        raise ConfigError(f"order must be one of {BRANCHING_ORDERS}, got {order!r}")


def _radius(r_schedule: float | Callable[[int], float], n: int) -> float:
    return float(r_schedule(n) if callable(r_schedule) else r_schedule)


def confinement_flags(d: int, radius: float, n: int, replicas: int, seed: int, order: str = "move-split") -> np.ndarray:
    """For each replica, whether each of the 2^n particles of a free BRW kept
    its ancestral line inside the closed ball B(0, radius) up to time n.

    Particle j's binary expansion (n bits, first split most significant)
    is its path through the genealogy.  ``order`` is "move-split" (jump,
    then split at the landing site, as in the trapped model) or
    "split-move" (split first, the two offspring jump independently).
    """
    _check_order(order)
    if n > 25:
        raise ConfigError("free BRW simulation is exact only up to n = 25")
    rng = generator(seed)
    r2 = radius * radius
    units = np.array([u for i in range(d) for u in (np.eye(d, dtype=np.int64)[i], -np.eye(d, dtype=np.int64)[i])])
    out = np.empty((replicas, 2 ** n), dtype=bool)
    chunk = max(1, _CHUNK_PARTICLES >> n)
    for lo in range(0, replicas, chunk):
        m = min(chunk, replicas - lo)
        pos = np.zeros((m, 1, d), dtype=np.int64)
        inside = np.ones((m, 1), dtype=bool)
        for _ in range(n):
            if order == "split-move":
                pos = np.repeat(pos, 2, axis=1)
                inside = np.repeat(inside, 2, axis=1)
            pos = pos + units[rng.integers(0, 2 * d, size=pos.shape[:2])]
            inside = inside & ((pos * pos).sum(axis=2) <= r2)
            if order == "move-split":
                pos = np.repeat(pos, 2, axis=1)
                inside = np.repeat(inside, 2, axis=1)
        out[lo:lo + m] = inside
    return out


def confined_counts(
    d: int, r_schedule: float | Callable[[int], float], n: int, replicas: int, seed: int, order: str = "move-split"
) -> np.ndarray:
    """Y_n for independent free BRWs: particles whose ancestral lines stayed in
    B(0, r) with r constant or r = r_schedule(n)."""
    _check_order(order)
    if n > 25:
        raise ConfigError("free BRW simulation is exact only up to n = 25")
    radius = _radius(r_schedule, n)
    rng = generator(seed)
    r2 = radius * radius
    units = np.array([u for i in range(d) for u in (np.eye(d, dtype=np.int64)[i], -np.eye(d, dtype=np.int64)[i])])
    pos = np.zeros((replicas, d), dtype=np.int64)
    rep = np.arange(replicas)
    for _ in range(n):
        if order == "split-move":
            pos = np.repeat(pos, 2, axis=0)
            rep = np.repeat(rep, 2)
        pos = pos + units[rng.integers(0, 2 * d, size=rep.size)]
        keep = (pos * pos).sum(axis=1) <= r2
        pos, rep = pos[keep], rep[keep]
        if order == "move-split":
            pos = np.repeat(pos, 2, axis=0)
            rep = np.repeat(rep, 2)
    return np.bincount(rep, minlength=replicas).astype(np.int64)


def confined_count(
    d: int, r_schedule: float | Callable[[int], float], n: int, rng: np.random.Generator, order: str = "move-split"
) -> int:
    return int(confined_counts(d, r_schedule, n, 1, int(rng.integers(0, 2**63)), order)[0])


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class MassSummary:
    replicas: int
    horizon: int
    mean: float
    se: float
    degenerate: bool
    survival_frequency: float
    exponents: np.ndarray


def mass_statistics(records: Sequence[TrajectoryRecord] | Ensemble) -> MassSummary:
    """Mean and standard error of N_n, survival frequency and log(N_n)/n of survivors."""
    if isinstance(records, Ensemble):
        final = records.N[:, -1]
        n = records.N.shape[1] - 1
    else:
        if len(records) == 0:
            raise ValueError("mass_statistics needs at least one record")
        final = np.array([int(r.N[-1]) for r in records], dtype=np.int64)
        n = records[0].horizon
    R = final.size
    if R == 0:
        raise ValueError("mass_statistics needs at least one record")
    x = final.astype(np.float64)
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    alive = final[final >= 1]
    exps = np.log(alive.astype(np.float64)) / n if n > 0 else np.zeros(alive.size)
    return MassSummary(R, n, mean, se, R == 1 or se == 0.0, alive.size / R, exps)


# ---------------------------------------------------------------- clearing hits


@dataclass(frozen=True)
class HitEstimate:
    horizon: int
    accepted: int
    misses: int

    @property
    def probability(self) -> float:
        return self.misses / self.accepted

    @property
    def se(self) -> float:
        p = self.probability
        return math.sqrt(p * (1 - p) / self.accepted)


def estimate_clearing_hit(
    field: TrapField,
    labeling,
    n: int,
    scales,
    replicas: int,
    master_seed: int,
    start: Sequence[int] | None = None,
    mode: str = "count",
) -> HitEstimate:
    """Among replicas alive at n, the fraction whose range missed the target
    set of clearing centres in [-An, An]^d (the event E_n given S_n)."""
    from .clearings import phi_mask

    start = (0,) * field.dimension if start is None else tuple(start)
    target = phi_mask(field, labeling, n, scales)
    opts = SimOptions(horizon=n, mode=mode, target_set=target)
    ens = simulate_many(field, start, opts, replicas, master_seed)
    alive = ens.N[:, n] >= 1
    if not alive.any():
        raise NoSurvivorsError(f"no replica out of {replicas} survived to time {n}")
    misses = int(np.count_nonzero(alive & ~ens.hits[:, n]))
    return HitEstimate(n, int(alive.sum()), misses)
