import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from brwtraps.brw import (
    PopulationState,
    SimOptions,
    confined_count,
    confined_counts,
    confinement_flags,
    estimate_clearing_hit,
    lineage_depth,
    mass_statistics,
    replica_seeds,
    simulate,
    simulate_conditioned,
    simulate_many,
    step,
    survival_probability_exact,
    survival_study,
    two_colored_counts,
    two_colored_simulate,
)
from brwtraps.clearings import scales
from brwtraps.errors import ConfigError, CountOverflowError, NoSurvivorsError, OutOfBoxError, ParticleCapError
from brwtraps.lattice import LatticeConfig, TrapField, generate_environment, uniform_field
from brwtraps.percolation import label_vacant_clusters
from brwtraps.rng import generator
from brwtraps.walk import confined_exit_prob, expected_mass

from oracles import extinction_by_generation, one_step_law


def one_trap_field(L=6):
    traps = np.zeros((2 * L + 1,) * 2, bool)
    traps[L + 1, L] = True
    return TrapField.from_traps(LatticeConfig(2, L, 0.5), traps)


def caged_field(L=4):
    traps = np.zeros((2 * L + 1,) * 2, bool)
    for di, dj in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        traps[L + di, L + dj] = True
    return TrapField.from_traps(LatticeConfig(2, L, 0.5), traps)


def tv(a, b):
    m = int(max(a.max(), b.max())) + 1
    return 0.5 * np.abs(np.bincount(a, minlength=m) / a.size - np.bincount(b, minlength=m) / b.size).sum()


@pytest.mark.parametrize("mode", ["particle", "count"])
def test_trap_free_mass_is_deterministic(mode):
    field = uniform_field(2, 12, trap=False)
    rec = simulate(field, (0, 0), SimOptions(horizon=10, mode=mode, replica_seed=5))
    assert rec.N.tolist() == [2**k for k in range(11)]
    assert rec.F[3] == 7 and rec.T[-1] == 0
    assert np.array_equal(rec.Sigma, rec.F + 1)


@pytest.mark.parametrize("mode", ["particle", "count"])
def test_horizon_zero(mode):
    rec = simulate(uniform_field(2, 2, trap=False), (0, 0), SimOptions(horizon=0, mode=mode))
    assert rec.N.tolist() == [1] and rec.F.tolist() == [0] and rec.T.tolist() == [0]
    assert rec.Sigma.tolist() == [1]


@pytest.mark.parametrize("mode", ["particle", "count"])
def test_caged_start_dies(mode):
    ens = simulate_many(caged_field(), (0, 0), SimOptions(horizon=1, mode=mode), 50, 3)
    assert (ens.N[:, 1] == 0).all() and (ens.T[:, 1] == 1).all()
    assert (ens.F[:, 1] == 0).all() and (ens.N[:, 1] + ens.T[:, 1] == 1).all()


def test_one_adjacent_trap_mean():
    field = one_trap_field()
    law = one_step_law(lambda x: not field.traps[x[0] + 6, x[1] + 6], (0, 0))
    exact_mean = float(sum(k * p for k, p in law.items()))
    assert exact_mean == 1.5
    ens = simulate_many(field, (0, 0), SimOptions(horizon=1), 100_000, 11)
    x = ens.N[:, 1]
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 1.5) <= 3 * se
    assert set(np.unique(x)) == {0, 2}


@pytest.mark.parametrize("mode", ["particle", "count"])
def test_many_to_one_on_golden_field(golden_field, mode):
    n, R = 12, 20_000 if mode == "particle" else 4_000
    ens = simulate_many(golden_field, (0, 0), SimOptions(horizon=n, mode=mode), R, 2024)
    x = ens.N[:, n].astype(float)
    se = x.std(ddof=1) / math.sqrt(R)
    assert abs(x.mean() - expected_mass(golden_field, (0, 0), n)) <= 3 * se


def test_accounting_and_vacancy(golden_field):
    for mode in ("particle", "count"):
        ens = simulate_many(golden_field, (0, 0), SimOptions(horizon=10, mode=mode), 300, 8)
        assert np.array_equal(ens.N + ens.T, ens.F + 1)
    rng = generator(4)
    state = PopulationState.initial(golden_field, (0, 0))
    for _ in range(8):
        if not state.alive:
            break
        state = step(state, golden_field, rng)
        for site in state.as_dict(golden_field):
            assert not golden_field.traps[golden_field.array_index(site)]
        assert state.total + state.trap_hits == state.fissions + 1


def test_step_errors(golden_field):
    dead = PopulationState(3, np.zeros(0, np.int64), np.zeros(0, np.int64))
    with pytest.raises(ConfigError):
        step(dead, golden_field, generator(0))
    with pytest.raises(ConfigError):
        step(PopulationState.initial(golden_field, (0, 0)), golden_field, generator(0), mode="fast")
    edge = uniform_field(2, 2, trap=False)
    state = PopulationState.initial(edge, (2, 0))
    with pytest.raises(OutOfBoxError):
        for _ in range(4):
            state = step(state, edge, generator(0))


def test_modes_agree_in_law():
    field = generate_environment(LatticeConfig(2, 6, 0.7, 42))
    a = simulate_many(field, (0, 0), SimOptions(horizon=4, mode="count"), 100_000, 1).N[:, 4]
    b = simulate_many(field, (0, 0), SimOptions(horizon=4, mode="particle"), 100_000, 2).N[:, 4]
    assert tv(a, b) <= 0.02


def test_replicas_independent_of_batching(golden_field):
    opts = SimOptions(horizon=9, track_range=True)
    ens = simulate_many(golden_field, (0, 0), opts, 40, 77)
    seeds = replica_seeds(77, 40)
    for i in (0, 17, 39):
        alone = simulate(golden_field, (0, 0), SimOptions(horizon=9, track_range=True, replica_seed=int(seeds[i])))
        assert alone == ens.record(i)


@pytest.mark.parametrize("mode", ["particle", "count"])
def test_determinism(golden_field, mode):
    opts = SimOptions(horizon=10, mode=mode, replica_seed=123, track_range=True)
    assert simulate(golden_field, (0, 0), opts) == simulate(golden_field, (0, 0), opts)
    other = simulate(golden_field, (0, 0), SimOptions(horizon=10, mode=mode, replica_seed=124, track_range=True))
    assert other.replica_seed != 123


def test_range_radius_monotone(golden_field):
    ens = simulate_many(golden_field, (0, 0), SimOptions(horizon=10, track_range=True), 200, 5)
    assert (np.diff(ens.M, axis=1) >= 0).all()
    assert (ens.M[:, 0] == 0).all()
    assert (ens.M <= np.arange(11)).all()


def test_particle_cap_carries_partial_record():
    field = uniform_field(2, 12, trap=False)
    with pytest.raises(ParticleCapError) as exc:
        simulate(field, (0, 0), SimOptions(horizon=10, particle_cap=100))
    rec = exc.value.record
    assert rec is not None and rec.N[5] == 32


def test_count_overflow_is_an_error():
    field = uniform_field(2, 70, trap=False)
    with pytest.raises(CountOverflowError):
        simulate(field, (0, 0), SimOptions(horizon=65, mode="count", particle_cap=2**63 - 1))


def test_box_and_start_checks(golden_field):
    with pytest.raises(OutOfBoxError):
        simulate(golden_field, (0, 0), SimOptions(horizon=13))
    trap = tuple(int(c) - 12 for c in np.argwhere(golden_field.traps)[0])
    with pytest.raises(ConfigError):
        simulate(golden_field, trap, SimOptions(horizon=2))
    for bad in [dict(horizon=-1), dict(horizon=2, mode="x"), dict(horizon=2, particle_cap=0)]:
        with pytest.raises(ConfigError):
            SimOptions(**bad)


def test_survival_dp_matches_recursive_oracle(golden_field):
    L = golden_field.box_radius
    at = lambda x: bool(golden_field.vacant[tuple(c + L for c in x)])
    exact = survival_probability_exact(golden_field, (0, 0), 8)
    for k in (1, 4, 8):
        assert exact[k] == pytest.approx(extinction_by_generation(at, (0, 0), k), abs=1e-13)


def test_survival_monte_carlo_matches_exact(golden_field):
    n, R = 10, 20_000
    exact = survival_probability_exact(golden_field, (0, 0), n)
    ens = simulate_many(golden_field, (0, 0), SimOptions(horizon=n), R, 9)
    emp = (ens.N[:, n] >= 1).mean()
    assert abs(emp - exact[n]) <= 3 * math.sqrt(exact[n] * (1 - exact[n]) / R)
    study = survival_study(golden_field, (0, 0), [5, 10], R, 10)
    for est in study:
        assert abs(est.probability - exact[est.horizon]) <= 3 * math.sqrt(exact[est.horizon] * (1 - exact[est.horizon]) / R)
        assert est.se > 0


def test_lineage_depth_law(golden_field):
    depths = np.array([lineage_depth(golden_field, (0, 0), 6, s) for s in range(5000)])
    exact = survival_probability_exact(golden_field, (0, 0), 6)
    emp = (depths >= 6).mean()
    assert abs(emp - exact[6]) <= 4 * math.sqrt(exact[6] * (1 - exact[6]) / 5000)
    assert depths.min() >= 0 and depths.max() <= 6


def test_conditioned_sampling(golden_field):
    free = simulate_conditioned(uniform_field(2, 8, trap=False), (0, 0), 6, 20, 1)
    assert free.acceptance_rate == 1.0 and len(free.records) == 20
    with pytest.raises(NoSurvivorsError, match="more replicas"):
        simulate_conditioned(caged_field(), (0, 0), 2, 50, 1)
    res = simulate_conditioned(golden_field, (0, 0), 8, 500, 3, mode="particle")
    assert all(r.N[8] >= 1 for r in res.records)
    quick = simulate_conditioned(golden_field, (0, 0), 8, 500, 3, with_records=False)
    assert quick.records == [] and 0 < quick.acceptance_rate <= 1


def test_two_colored_trivial_targets():
    empty = np.zeros((11, 11), bool)
    assert (two_colored_counts(empty, (0, 0), 5, 5, 0) == 32).all()
    full = np.ones((11, 11), bool)
    full[5, 5] = False
    assert (two_colored_counts(full, (0, 0), 3, 5, 0) == 0).all()
    assert two_colored_simulate(empty, 4, generator(1)) == (16, 16)
    with pytest.raises(ConfigError):
        two_colored_counts(empty, (0, 0), 26, 1, 0)
    with pytest.raises(OutOfBoxError):
        two_colored_counts(empty, (0, 0), 6, 1, 0)


def test_two_colored_matches_trapped_law(small_field):
    R = 100_000
    start = (0, 0) if not small_field.traps[3, 3] else None
    pad = np.pad(small_field.traps, 2, constant_values=True)  # 11x11, traps beyond the box
    a = two_colored_counts(pad, start, 5, R, 3)
    field = TrapField.from_traps(LatticeConfig(2, 5, 0.7), pad)
    b = simulate_many(field, start, SimOptions(horizon=5), R, 4).N[:, 5]
    assert tv(a, b) <= 0.02


def test_confined_counts_trivial_and_mean():
    assert (confined_counts(2, 7.0, 6, 10, 0) == 64).all()
    assert (confined_counts(2, 0.5, 3, 10, 0) == 0).all()
    assert confined_count(2, lambda n: n + 1.0, 5, generator(2)) == 32
    for order in ("move-split", "split-move"):
        y = confined_counts(2, 1.5, 2, 100_000, 7, order)
        mean = 4 * confined_exit_prob(2, 1.5, 2)
        assert mean == 3.0
        assert abs(y.mean() - mean) <= 3 * y.std(ddof=1) / math.sqrt(y.size)
    with pytest.raises(ConfigError):
        confined_counts(2, 1.5, 2, 5, 0, order="sideways")


def test_confinement_flags_agree_with_counts():
    flags = confinement_flags(2, 2.5, 6, 20_000, 1)
    counts = confined_counts(2, 2.5, 6, 20_000, 2)
    a, b = flags.sum(axis=1), counts
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    assert abs(a.mean() - b.mean()) <= 3 * math.hypot(sa, sb) / math.sqrt(20_000)


def test_mass_statistics():
    field = uniform_field(2, 11, trap=False)
    ens = simulate_many(field, (0, 0), SimOptions(horizon=10), 10_000, 0)
    s = mass_statistics(ens)
    assert s.mean == 1024 and s.se == 0 and s.survival_frequency == 1.0
    assert np.allclose(s.exponents, math.log(2))
    one = mass_statistics([ens.record(0)])
    assert one.mean == 1024 and one.se == 0 and one.degenerate
    assert mass_statistics([ens.record(0), ens.record(1)]).se == 0
    with pytest.raises(ValueError):
        mass_statistics([])


def test_clearing_hit_trivial_targets():
    field = uniform_field(2, 14, trap=False)
    sc = scales(4, 2, 0.9)
    est = estimate_clearing_hit(field, label_vacant_clusters(field), 4, sc, 50, 1)
    assert est.probability == 0.0 and est.accepted == 50  # the start is itself a clearing centre
    trapped = np.ones((29, 29), bool)
    trapped[11:18, 11:18] = False
    f2 = TrapField.from_traps(LatticeConfig(2, 14, 0.99), trapped)
    sc2 = scales(4, 2, 0.99)
    assert sc2.r_large > 3.5  # no such ball fits in the 7x7 vacant block
    est2 = estimate_clearing_hit(f2, label_vacant_clusters(f2), 4, sc2, 50, 1)
    assert est2.probability == 1.0


@given(st.integers(0, 2**32))
def test_accounting_property(seed):
    field = generate_environment(LatticeConfig(2, 8, 0.75, seed))
    if field.traps[8, 8]:
        return
    rec = simulate(field, (0, 0), SimOptions(horizon=8, mode="count", replica_seed=seed))
    assert np.array_equal(rec.N + rec.T, rec.F + 1)
    assert (np.diff(rec.F) >= 0).all() and (np.diff(rec.T) >= 0).all()
