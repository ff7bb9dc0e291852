"""Exact quenched oracles for a single simple symmetric random walk.

All ball computations use the closed lattice ball {z : |z - c| <= r}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, ConvergenceError
from ._kernels import killed_walk_log_survival
from .lattice import TrapField, neighbor_offsets, required_radius

BOUNDARY_MODES = ("exact", "absorbing")


@dataclass(frozen=True)
class SurvivalTable:
    """q_k = P_x(X_1, ..., X_k all vacant) for k = 0..n.

    ``log_q`` is exact in the log domain (the running distribution is
    renormalised every step and the factor ``step_factors[k-1]`` =
    q_k / q_{k-1} is recorded); ``q`` may underflow to 0 for large k.
    """

    start: tuple[int, ...]
    horizon: int
    mode: str
    log_q: np.ndarray
    step_factors: np.ndarray

    @property
    def q(self) -> np.ndarray:
        return np.exp(self.log_q)

    @property
    def extinct_at(self) -> int | None:
        """First k with q_k = 0, if the walk is certainly killed by then."""
        dead = np.flatnonzero(np.isneginf(self.log_q))
        return int(dead[0]) if dead.size else None


def survival_probability_dp(field: TrapField, x: Sequence[int], n: int, boundary_mode: str = "exact") -> SurvivalTable:
    """Survival of a walk started at vacant ``x`` among the field's traps.

    ``exact`` needs L >= |x|_inf + n so the walk never meets the box edge and
    the values equal those on Z^d.  ``absorbing`` treats everything outside
    the box as a trap and returns lower bounds.
    """
    if boundary_mode not in BOUNDARY_MODES:
        raise ConfigError(f"boundary_mode must be one of {BOUNDARY_MODES}")
    if n < 0:
        raise ConfigError("n must be non-negative")
    x = tuple(int(c) for c in x)
    idx = field.array_index(x)
    if field.traps[idx]:
        raise ConfigError(f"start site {x} is a trap")
    need = required_radius(x, n)
    if boundary_mode == "exact" and field.box_radius < need:
        raise ConfigError(f"exact mode needs box radius L >= {need}, field has L = {field.box_radius}")

    vac = np.pad(field.vacant, 2, constant_values=False)
    centre = tuple(i + 2 for i in idx)
    log_q, factors = killed_walk_log_survival(vac, centre, n)
    return SurvivalTable(x, n, boundary_mode, log_q, factors)


def expected_mass(field: TrapField, x: Sequence[int], n: int, boundary_mode: str = "exact") -> float:
    """E[N_n] = 2^n q_n for the branching walk started at ``x``."""
    table = survival_probability_dp(field, x, n, boundary_mode)
    return math.ldexp(math.exp(table.log_q[n]), n) if np.isfinite(table.log_q[n]) else 0.0


def log_expected_mass(field: TrapField, x: Sequence[int], n: int, boundary_mode: str = "exact") -> float:
    table = survival_probability_dp(field, x, n, boundary_mode)
    return n * math.log(2.0) + float(table.log_q[n])


# ---------------------------------------------------------------- balls


@dataclass(frozen=True, eq=False)
class BallWalk:
    """The walk restricted to a closed lattice ball; leaving the ball kills."""

    dimension: int
    radius: float
    sites: np.ndarray
    transition: sparse.csr_matrix
    origin: int

    @property
    def size(self) -> int:
        return int(self.sites.shape[0])

    def exit_survival(self, n: int) -> np.ndarray:
        """u_k(x) = P_x(no exit through step k) for k = 0..n, shape (n+1, size)."""
        out = np.empty((n + 1, self.size))
        u = np.ones(self.size)
        out[0] = u
        for k in range(1, n + 1):
            u = self.transition @ u
            out[k] = u
        return out

    def occupation(self, n: int) -> np.ndarray:
        """g_k(x) = P_0(X_k = x, no exit through step k) for k = 0..n."""
        out = np.empty((n + 1, self.size))
        g = np.zeros(self.size)
        g[self.origin] = 1.0
        out[0] = g
        pt = self.transition.T.tocsr()
        for k in range(1, n + 1):
            g = pt @ g
            out[k] = g
        return out


def ball_offsets(dimension: int, radius: float) -> np.ndarray:
    """Integer vectors z with |z| <= radius, row-major order."""
    if radius < 0:
        return np.zeros((0, dimension), dtype=np.int64)
    R = int(math.floor(radius))
    axes = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([axes] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    keep = (grid.astype(np.float64) ** 2).sum(axis=1) <= radius * radius
    return grid[keep]


@lru_cache(maxsize=64)
def ball_walk(dimension: int, radius: float) -> BallWalk:
    sites = ball_offsets(dimension, radius)
    index = {tuple(s): i for i, s in enumerate(sites.tolist())}
    rows, cols = [], []
    for i, s in enumerate(sites.tolist()):
        for off in neighbor_offsets(dimension).tolist():
            j = index.get(tuple(a + b for a, b in zip(s, off)))
            if j is not None:
                rows.append(i)
                cols.append(j)
    P = sparse.csr_matrix(
        (np.full(len(rows), 1.0 / (2 * dimension)), (rows, cols)), shape=(len(sites), len(sites))
    )
    sites.flags.writeable = False
    return BallWalk(dimension, float(radius), sites, P, index[(0,) * dimension])


def confined_exit_prob(d: int, r: float, n: int) -> float:
    """p_n(r) = P_0(walk stays in the closed ball of radius r through step n)."""
    if r < 0 or n < 0:
        raise ConfigError("need r >= 0 and n >= 0")
    bw = ball_walk(d, float(r))
    return float(bw.exit_survival(n)[n, bw.origin])


def confined_exit_probs(d: int, r: float, n: int) -> np.ndarray:
    """p_k(r) for k = 0..n."""
    bw = ball_walk(d, float(r))
    return bw.exit_survival(n)[:, bw.origin].copy()


def confined_exit_probs_exact(d: int, r: float, n: int) -> list[Fraction]:
    """p_k(r), k = 0..n, in exact rational arithmetic."""
    bw = ball_walk(d, float(r))
    sites = [tuple(s) for s in bw.sites.tolist()]
    index = {s: i for i, s in enumerate(sites)}
    offs = neighbor_offsets(d).tolist()
    nbrs = [[index[t] for t in (tuple(a + b for a, b in zip(s, o)) for o in offs) if t in index] for s in sites]
    step = Fraction(1, 2 * d)
    u = [Fraction(1)] * len(sites)
    out = [u[bw.origin]]
    for _ in range(n):
        u = [step * sum((u[j] for j in nb), Fraction(0)) for nb in nbrs]
        out.append(u[bw.origin])
    return out


def confined_decay_rate(d: int, r: float, tol: float = 1e-12, max_iter: int = 2_000_000) -> float:
    """Top eigenvalue mu(r) of the ball-restricted one-step operator.

    Power iteration on the lazy operator (I + P) / 2, whose top eigenvalue
    (1 + mu) / 2 is separated from the image of -mu that the bipartite
    lattice forces on P itself.  Stops once the residual |Pv - mu v| of the
    unit iterate is at most ``10 * tol``; since P is symmetric this bounds
    the eigenvalue error by the same amount.
    """
    bw = ball_walk(d, float(r))
    P = bw.transition
    if P.nnz == 0:
        return 0.0
    v = np.ones(bw.size) / math.sqrt(bw.size)
    res_tol = 10.0 * tol
    res = math.inf
    for it in range(max_iter):
        pv = P @ v
        mu = float(v @ pv)
        if it % 32 == 0:
            res = float(np.linalg.norm(pv - mu * v))
            if res <= res_tol:
                return mu
        w = 0.5 * (v + pv)
        v = w / np.linalg.norm(w)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", res)


# ---------------------------------------------------------------- constants


def bessel_j0(x: float) -> float:
    """J_0 by its power series (accurate to ~1e-15 for |x| <= 5)."""
    term = 1.0
    total = 1.0
    q = -(x * x) / 4.0
    m = 0
    while True:
        m += 1
        term *= q / (m * m)
        total += term
        if abs(term) < 1e-18 * max(1.0, abs(total)):
            return total


def first_bessel_zero(lo: float = 2.0, hi: float = 3.0) -> float:
    """First positive zero of J_0 by bisection."""
    flo = bessel_j0(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = bessel_j0(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def lambda_d(d: int) -> float:
    """Principal Dirichlet eigenvalue of -(1/2d) Laplacian on the unit ball."""
    if d == 2:
        return first_bessel_zero() ** 2 / 4.0
    if d == 3:
        return math.pi ** 2 / 6.0
    raise ConfigError(f"lambda_d is implemented for d in {{2, 3}}, got {d}")


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class ModelConstants:
    d: int
    p: float
    lambda_d: float
    omega_d: float
    R0: float
    k_dp: float


def constants(d: int, p: float) -> ModelConstants:
    if not 0.0 < p < 1.0:
        raise ConfigError(f"p must lie in (0, 1), got {p}")
    lam = lambda_d(d)
    omega = unit_ball_volume(d)
    scale = omega * math.log(1.0 / p) / d
    k = lam * scale ** (2.0 / d)
    R0 = (1.0 / scale) ** (1.0 / d)
    if abs(R0 * R0 * k - lam) > 1e-12 * lam:
        raise ArithmeticError("R0^2 k(d,p) != lambda_d")
    return ModelConstants(d, p, lam, omega, R0, k)


@dataclass(frozen=True)
class RateSeries:
    n: np.ndarray
    e: np.ndarray
    truncated: bool


def quenched_rate_series(
    field: TrapField, n_max: int, start: Sequence[int] | None = None, boundary_mode: str = "exact"
) -> RateSeries:
    """e(n) = (log n)^{2/d} (log E[N_n] / n - log 2) = (log n)^{2/d} log q_n / n."""
    if start is None:
        start = (0,) * field.dimension
    table = survival_probability_dp(field, start, n_max, boundary_mode)
    ns = np.arange(2, n_max + 1)
    logq = table.log_q[2:]
    alive = np.isfinite(logq)
    truncated = not alive.all()
    ns, logq = ns[alive], logq[alive]
    e = np.log(ns) ** (2.0 / field.dimension) * logq / ns
    return RateSeries(ns, e, truncated)
