import math
from fractions import Fraction
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from brwtraps.errors import ConfigError
from brwtraps.genealogy import (
    exact_confined_variance,
    exact_pair_confinement,
    jn_terms,
    markov_decomposition_error,
    mrca_bruteforce,
    mrca_chisquare,
    mrca_generation,
    pair_correlation_check,
    qn_pmf,
    sample_mrca,
    variance_bound_check,
)
from brwtraps.walk import confined_exit_probs_exact

from oracles import ball_confinement_paths


def tree_mrca(n):
    """MRCA generations by walking explicit ancestor lists of a depth-n binary tree."""
    leaves = [tuple(bits) for bits in np.ndindex(*(2,) * n)]
    counts = [0] * n
    for a, b in permutations(leaves, 2):
        k = next(i for i in range(n) if a[i] != b[i])
        counts[k] += 1
    total = len(leaves) * (len(leaves) - 1)
    return [Fraction(c, total) for c in counts]


def test_qn_examples():
    assert qn_pmf(1).exact == (Fraction(1),)
    assert qn_pmf(2).exact == (Fraction(2, 3), Fraction(1, 3))
    assert qn_pmf(3).exact == (Fraction(4, 7), Fraction(2, 7), Fraction(1, 7))
    with pytest.raises(ConfigError):
        qn_pmf(0)


def test_qn_normalised_and_geometric():
    for n in range(1, 65):
        q = qn_pmf(n).exact
        assert sum(q) == 1
        assert all(q[k] == 2 * q[k + 1] for k in range(n - 1))
    assert qn_pmf(10).values.sum() == pytest.approx(1.0, abs=1e-15)


def test_bruteforce_matches_formula_and_tree():
    assert mrca_bruteforce(1).exact == (Fraction(1),)
    b2 = mrca_bruteforce(2).exact
    assert [x * 12 for x in b2] == [8, 4]
    for n in range(1, 13):
        assert mrca_bruteforce(n).exact == qn_pmf(n).exact
    for n in range(1, 7):
        assert tuple(tree_mrca(n)) == qn_pmf(n).exact
    with pytest.raises(ConfigError):
        mrca_bruteforce(13)


def test_mrca_generation_convention():
    assert mrca_generation(0, 1, 5) == 4  # siblings: MRCA one generation back
    assert mrca_generation(0, 16, 5) == 0  # different halves: the root
    with pytest.raises(ValueError):
        mrca_generation(3, 3, 4)


@given(st.integers(1, 40), st.data())
def test_mrca_generation_symmetric_and_in_support(n, data):
    i = data.draw(st.integers(0, 2**n - 1))
    j = data.draw(st.integers(0, 2**n - 1).filter(lambda v: v != i))
    k = mrca_generation(i, j, n)
    assert k == mrca_generation(j, i, n)
    assert 0 <= k <= n - 1
    assert i >> (n - k) == j >> (n - k)


def test_sampler_and_chisquare():
    ks = sample_mrca(10, 50_000, 1)
    assert ks.min() >= 0 and ks.max() <= 9
    res = mrca_chisquare(10, 100_000, 12345)
    assert res.p_value > 0.01
    assert res.observed.sum() == 100_000


def test_markov_decomposition():
    for r, n in [(1.5, 10), (2.5, 30), (4.2, 50)]:
        assert markov_decomposition_error(2, r, n) <= 1e-12
    assert markov_decomposition_error(3, 2.0, 20) <= 1e-12


def test_jn_unconstrained():
    rep = jn_terms(2, 9.0, 8, exact=True)
    assert rep.J == 1.0 and rep.p_n == 1.0
    assert rep.identity_variance == 0.0
    assert rep.bound == 2**8 and rep.bound >= 0


def test_jn_hand_value():
    p = confined_exit_probs_exact(2, 1.5, 3)
    assert p[:3] == [1, 1, Fraction(3, 4)] and p[3] == ball_confinement_paths(2, 1.5, 3)
    Q = qn_pmf(3).exact
    direct = sum(Q[k] / p[k] for k in range(3))
    assert direct == Fraction(22, 21)
    rep = jn_terms(2, 1.5, 3, exact=True)
    assert rep.J == float(direct)
    assert rep.J1 + rep.J2 == pytest.approx(rep.J, abs=1e-15)
    assert rep.split == 1 and rep.J1 == float(Q[0] + Q[1])
    flt = jn_terms(2, 1.5, 3)
    assert flt.J == pytest.approx(rep.J, rel=1e-14)


@given(st.floats(1.0, 6.0), st.integers(1, 14))
def test_jn_at_least_one(r, n):
    rep = jn_terms(2, r, n)
    assert rep.J >= 1 - 1e-14 and rep.bound >= 0
    assert rep.J1 + rep.J2 == pytest.approx(rep.J)


def test_jn_schedule_and_zero_probability():
    rep = jn_terms(2, lambda n: 0.5 * n, 6)
    assert rep.radius == 3.0
    with pytest.raises(ConfigError, match="infinite"):
        jn_terms(2, 0.5, 3)


def test_exact_pair_value_and_product_form_gap():
    exact = exact_pair_confinement(2, 1.5, 3, exact=True)
    assert exact == Fraction(15, 56)
    rep = jn_terms(2, 1.5, 3, exact=True)
    assert rep.p_n**2 * rep.J == pytest.approx(11 / 42)
    assert float(exact) > rep.p_n**2 * rep.J
    assert exact_pair_confinement(2, 1.5, 3, exact=True, order="move-split") == Fraction(9, 28)


def explicit_pair_enumeration(d, r, n):
    """Joint confinement of a uniform ordered pair, summing over all
    split-then-move genealogies: after the MRCA at generation k, each
    line walks n - k steps on its own."""
    from oracles import unit_steps

    steps = unit_steps(d)
    inside = lambda x: sum(c * c for c in x) <= r * r

    def paths(x, m):
        if m == 0:
            yield x
            return
        for s in steps:
            y = tuple(a + b for a, b in zip(x, s))
            if inside(y):
                yield from paths(y, m - 1)

    w = Fraction(1, 2 * d)
    Q = qn_pmf(n).exact
    total = Fraction(0)
    for k in range(n):
        ends = {}
        for x in paths((0,) * d, k):
            ends[x] = ends.get(x, 0) + 1
        for x, c in ends.items():
            tail = sum(1 for _ in paths(x, n - k))
            total += Q[k] * c * w**k * (tail * w ** (n - k)) ** 2
    return total


@pytest.mark.parametrize("r,n", [(1.5, 3), (1.5, 4), (2.5, 4)])
def test_exact_pair_matches_enumeration(r, n):
    assert exact_pair_confinement(2, r, n, exact=True) == explicit_pair_enumeration(2, r, n)


def test_exact_variance_hand_values():
    assert exact_confined_variance(2, 1.5, 3, exact=True) == 3
    assert exact_confined_variance(2, 9.0, 5, exact=True) == 0
    assert float(exact_confined_variance(2, 2.5, 5)) == pytest.approx(21.64, abs=0.01)


def test_pair_correlation_trivial_radii():
    big = pair_correlation_check(2, 5.0, 3, 2000, 1)
    assert big.empirical == 1.0 and big.product_form == 1.0 and big.passed
    small = pair_correlation_check(2, 0.5, 3, 2000, 1)
    assert small.empirical == 0.0 and small.passed
    with pytest.raises(ConfigError):
        pair_correlation_check(2, 1.5, 3, 0, 1)


def test_pair_correlation_matches_exact_value():
    # the Monte Carlo targets the exact joint probability; p_n^2 J_n is a lower bound
    rep = pair_correlation_check(2, 1.5, 3, 100_000, 7)
    assert abs(rep.empirical - rep.exact) <= 3 * rep.se
    assert rep.exact == pytest.approx(15 / 56)


@pytest.mark.parametrize("r,n", [(1.5, 3), (2.5, 5)])
def test_variance_bound_holds(r, n):
    rep = variance_bound_check(2, r, n, 100_000, 3)
    assert rep.passed
    assert abs(rep.variance - rep.exact_variance) <= 4 * rep.variance_se
    assert abs(rep.mean - 2**n * rep.p_n) <= 3 * rep.mean_se


def test_variance_trivial():
    rep = variance_bound_check(2, 9.0, 5, 200, 1)
    assert rep.variance == 0 and rep.passed
    with pytest.raises(ConfigError):
        variance_bound_check(2, 1.5, 3, 1, 1)


@pytest.mark.parametrize("r", [1.5, 2.5])
@pytest.mark.parametrize("n", [2, 5, 8])
def test_confined_mean_many_to_one(r, n):
    from brwtraps.brw import confined_counts

    y = confined_counts(2, r, n, 20_000, 100 * n + int(10 * r))
    pn = float(confined_exit_probs_exact(2, r, n)[n])
    assert abs(y.mean() - 2**n * pn) <= 3 * y.std(ddof=1) / math.sqrt(y.size) + 1e-12
