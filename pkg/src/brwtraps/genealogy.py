"""Pair genealogy of binary branching and second moments of confined counts.

Particles alive at time n are labelled by n-bit strings, bit t (most
significant first) recording the branch taken at the t-th split.  Two
distinct particles i, j have their most recent common ancestor at
generation k = n - bitlength(i xor j), so siblings sit at k = n - 1.

A pair with MRCA generation k shares s steps of walk, then the two lines
move independently: s = k when offspring disperse before jumping
("split-move"), s = k + 1 when the ancestor jumps and then splits
("move-split", the order of the trapped model).  Conditioning on the shared
endpoint gives the exact joint confinement probability

    P(A_i, A_j) = sum_k Q^n(k) sum_x g_s(x) u_{n-s}(x)^2,

with g the confined occupation measure and u the exit-survival function.
The product form p_n^2 J_n is its Cauchy-Schwarz lower bound in either
order.  Checks here default to "split-move", the genealogy in which the
ancestor's position at generation k is the branching point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import stats

from .brw import confined_counts, confinement_flags
from .errors import ConfigError
from .lattice import neighbor_offsets
from .rng import derive_replica_seed, generator
from .walk import ball_walk

DEFAULT_ORDER = "split-move"
MRCA_BRUTEFORCE_MAX = 12
PAIR_MC_MAX = 12


@dataclass(frozen=True)
class PairLaw:
    n: int
    exact: tuple[Fraction, ...]

    @property
    def values(self) -> np.ndarray:
        return np.array([float(q) for q in self.exact])


def qn_pmf(n: int) -> PairLaw:
    """Q^n(k) = 2^(-k-1) / (1 - 2^(-n)) for k = 0..n-1."""
    if n < 1:
        raise ConfigError("Q^n needs n >= 1 (a single particle has no pairs)")
    norm = 1 - Fraction(1, 2 ** n)
    return PairLaw(n, tuple(Fraction(1, 2 ** (k + 1)) / norm for k in range(n)))


def mrca_generation(i: int, j: int, n: int) -> int:
    if i == j:
        raise ValueError("a pair needs two distinct particles")
    return n - (i ^ j).bit_length()


def mrca_bruteforce(n: int) -> PairLaw:
    """Exact pmf of the MRCA generation by counting all ordered pairs."""
    if n < 1:
        raise ConfigError("need n >= 1")
    if n > MRCA_BRUTEFORCE_MAX:
        raise ConfigError(f"exhaustive enumeration is capped at n = {MRCA_BRUTEFORCE_MAX}")
    size = 2 ** n
    labels = np.arange(size, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for i in range(size):
        x = np.delete(labels ^ i, i)
        gen = n - (np.floor(np.log2(x)).astype(np.int64) + 1)
        counts += np.bincount(gen, minlength=n)
    total = size * (size - 1)
    return PairLaw(n, tuple(Fraction(int(c), total) for c in counts))


def sample_mrca(n: int, pairs: int, seed: int) -> np.ndarray:
    """MRCA generations of uniformly drawn ordered pairs of distinct particles."""
    if n < 1 or n > 62:
        raise ConfigError("need 1 <= n <= 62")
    rng = generator(seed)
    size = 2 ** n
    i = rng.integers(0, size, size=pairs, dtype=np.int64)
    j = rng.integers(0, size - 1, size=pairs, dtype=np.int64)
    j = j + (j >= i)
    x = (i ^ j).astype(np.uint64)
    bits = np.zeros(pairs, dtype=np.int64)
    while np.any(x):
        nz = x > 0
        bits[nz] += 1
        x = x >> np.uint64(1)
    return n - bits


@dataclass(frozen=True)
class ChiSquareResult:
    n: int
    pairs: int
    observed: np.ndarray
    expected: np.ndarray
    statistic: float
    p_value: float


def mrca_chisquare(n: int, pairs: int, seed: int) -> ChiSquareResult:
    ks = sample_mrca(n, pairs, seed)
    obs = np.bincount(ks, minlength=n).astype(np.float64)
    exp = qn_pmf(n).values * pairs
    # pool sparse tail cells so every expected count is at least 5
    o, e = list(obs), list(exp)
    while len(e) > 2 and e[-1] < 5:
        e[-2] += e.pop()
        o[-2] += o.pop()
    stat, pval = stats.chisquare(o, e)
    return ChiSquareResult(n, pairs, obs, exp, float(stat), float(pval))


# ---------------------------------------------------------------- confined tables


def _radius(r: float | Callable[[int], float], n: int) -> float:
    radius = float(r(n) if callable(r) else r)
    if radius < 0:
        raise ConfigError("radius must be non-negative")
    return radius


def _tables(d: int, radius: float, n: int) -> tuple[np.ndarray, np.ndarray, int]:
    bw = ball_walk(d, radius)
    return bw.occupation(n), bw.exit_survival(n), bw.origin


def _tables_exact(d: int, radius: float, n: int):
    bw = ball_walk(d, radius)
    sites = [tuple(s) for s in bw.sites.tolist()]
    index = {s: i for i, s in enumerate(sites)}
    offs = neighbor_offsets(d).tolist()
    nbrs = [[index[t] for t in (tuple(a + b for a, b in zip(s, o)) for o in offs) if t in index] for s in sites]
    step = Fraction(1, 2 * d)
    zero = Fraction(0)
    u = [Fraction(1)] * len(sites)
    us = [u]
    g = [zero] * len(sites)
    g[bw.origin] = Fraction(1)
    gs = [g]
    for _ in range(n):
        # the restricted walk is symmetric, so both recursions use the same neighbour lists
        u = [step * sum((u[j] for j in nb), zero) for nb in nbrs]
        g = [step * sum((g[j] for j in nb), zero) for nb in nbrs]
        us.append(u)
        gs.append(g)
    return gs, us, bw.origin


def markov_decomposition_error(d: int, r: float, n: int) -> float:
    """max over k of |p_n - sum_x g_k(x) u_{n-k}(x)|."""
    g, u, o = _tables(d, float(r), n)
    pn = u[n, o]
    return float(max(abs(pn - g[k] @ u[n - k]) for k in range(n + 1)))


def exact_pair_confinement(
    d: int, r: float | Callable[[int], float], n: int, exact: bool = False, order: str = DEFAULT_ORDER
):
    """Joint confinement probability of a uniform ordered pair at time n."""
    if n < 1:
        raise ConfigError("need n >= 1")
    radius = _radius(r, n)
    lag = _shared_lag(order)
    Q = qn_pmf(n).exact
    if exact:
        g, u, _ = _tables_exact(d, radius, n)
        return sum(
            (Q[k] * sum((gx * ux * ux for gx, ux in zip(g[k + lag], u[n - k - lag])), Fraction(0)) for k in range(n)),
            Fraction(0),
        )
    g, u, _ = _tables(d, radius, n)
    return float(sum(float(Q[k]) * (g[k + lag] @ (u[n - k - lag] ** 2)) for k in range(n)))


def _shared_lag(order: str) -> int:
    if order == "split-move":
        return 0
    if order == "move-split":
        return 1
    raise ConfigError(f"unknown branching order {order!r}")


def exact_confined_variance(
    d: int, r: float | Callable[[int], float], n: int, exact: bool = False, order: str = DEFAULT_ORDER
):
    """Var(Y_n) from the exact pair probability."""
    radius = _radius(r, n)
    if exact:
        g, u, o = _tables_exact(d, radius, n)
        pn = u[n][o]
    else:
        g, u, o = _tables(d, radius, n)
        pn = float(u[n, o])
    joint = exact_pair_confinement(d, radius, n, exact, order)
    size = 2 ** n
    return size * pn + size * (size - 1) * joint - (size * pn) ** 2


@dataclass(frozen=True)
class MomentReport:
    n: int
    radius: float
    p: np.ndarray
    split: int
    J: float
    J1: float
    J2: float
    bound: float
    identity_variance: float
    empirical_var: float | None = None
    empirical_se: float | None = None

    @property
    def p_n(self) -> float:
        return float(self.p[self.n])


def jn_terms(d: int, r: float | Callable[[int], float], n: int, exact: bool = False) -> MomentReport:
    """J_n = sum_k Q^n(k) / p_k with its split at floor(r) and the variance bound
    2^n p_n + 2^(2n) p_n^2 (J_n - 1).  For a schedule r(.), p_k means
    confinement in the ball of radius r(n) for every k.

    ``identity_variance`` is 2^n (p_n - p_n^2) + 2^n (2^n - 1) p_n^2 (J_n - 1),
    the variance implied by the product form of the pair probability.
    """
    if n < 1:
        raise ConfigError("need n >= 1")
    radius = _radius(r, n)
    Q = qn_pmf(n).exact
    if exact:
        _, u, o = _tables_exact(d, radius, n)
        p = [u[k][o] for k in range(n + 1)]
    else:
        bw = ball_walk(d, radius)
        p = list(bw.exit_survival(n)[:, bw.origin])
    bad = [k for k in range(n) if p[k] == 0]
    if bad:
        raise ConfigError(f"p_{bad[0]} = 0 at radius {radius}: J_n is infinite")
    split = int(math.floor(radius))
    one = Fraction(1) if exact else 1.0
    terms = [(Q[k] if exact else float(Q[k])) * one / p[k] for k in range(n)]
    J1 = sum(terms[: min(split, n - 1) + 1], 0 * one)
    J2 = sum(terms[split + 1:], 0 * one)
    J = J1 + J2
    size = 2 ** n
    pn = p[n]
    bound = size * pn + size * size * pn * pn * (J - 1)
    ident = size * (pn - pn * pn) + size * (size - 1) * pn * pn * (J - 1)
    return MomentReport(
        n, radius, np.array([float(x) for x in p]), split, float(J), float(J1), float(J2), float(bound), float(ident)
    )


# ---------------------------------------------------------------- Monte Carlo checks


@dataclass(frozen=True)
class PairCorrelationReport:
    n: int
    radius: float
    replicas: int
    empirical: float
    se: float
    product_form: float
    exact: float

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if abs(self.empirical - self.product_form) < 1e-12 else math.inf
        return (self.empirical - self.product_form) / self.se

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


def pair_correlation_check(
    d: int, r: float, n: int, replicas: int, seed: int, order: str = DEFAULT_ORDER
) -> PairCorrelationReport:
    """One uniform ordered pair per free BRW replica; compare the frequency of
    joint confinement with p_n^2 J_n."""
    if replicas < 1:
        raise ConfigError("replicas must be >= 1")
    if n < 1 or n > PAIR_MC_MAX:
        raise ConfigError(f"need 1 <= n <= {PAIR_MC_MAX}")
    radius = float(r)
    size = 2 ** n
    chunk = max(1, (1 << 22) // size)
    hits = 0
    rng = generator(derive_replica_seed(seed, 0))
    for c, lo in enumerate(range(0, replicas, chunk)):
        m = min(chunk, replicas - lo)
        flags = confinement_flags(d, radius, n, m, derive_replica_seed(seed, c + 1), order)
        i = rng.integers(0, size, size=m)
        j = rng.integers(0, size - 1, size=m)
        j = j + (j >= i)
        rows = np.arange(m)
        hits += int(np.count_nonzero(flags[rows, i] & flags[rows, j]))
    emp = hits / replicas
    se = math.sqrt(emp * (1 - emp) / replicas)
    if radius < 1:
        product, exact = 0.0, 0.0
    else:
        rep = jn_terms(d, radius, n)
        product = rep.p_n ** 2 * rep.J
        exact = exact_pair_confinement(d, radius, n, order=order)
    return PairCorrelationReport(n, radius, replicas, emp, se, product, exact)


@dataclass(frozen=True)
class VarianceReport:
    n: int
    radius: float
    replicas: int
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    bound: float
    exact_variance: float
    p_n: float

    @property
    def passed(self) -> bool:
        return self.variance <= self.bound + 3 * self.variance_se


def variance_bound_check(
    d: int, r: float | Callable[[int], float], n: int, replicas: int, seed: int, order: str = DEFAULT_ORDER
) -> VarianceReport:
    if replicas < 2:
        raise ConfigError("replicas must be >= 2")
    radius = _radius(r, n)
    y = confined_counts(d, radius, n, replicas, seed, order).astype(np.float64)
    mean = float(y.mean())
    var = float(y.var(ddof=1))
    m4 = float(((y - mean) ** 4).mean())
    var_se = math.sqrt(max(m4 - var * var, 0.0) / replicas)
    if radius < 1:
        # the first step always leaves a ball of radius < 1
        bound, exact, pn = 0.0, 0.0, 0.0
    else:
        rep = jn_terms(d, radius, n)
        bound, pn = rep.bound, rep.p_n
        exact = float(exact_confined_variance(d, radius, n, order=order))
    return VarianceReport(n, radius, replicas, mean, float(y.std(ddof=1) / math.sqrt(replicas)), var, var_se, bound, exact, pn)
