"""Frozen values from expensive runs; regenerate with tests/regenerate_regression.py."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from brwtraps.clearings import radius_scaling_stats
from brwtraps.experiments import log_grid
from brwtraps.lattice import LatticeConfig, generate_environment
from brwtraps.percolation import estimate_psi, label_vacant_clusters
from brwtraps.verify import proxy_start
from brwtraps.walk import constants, quenched_rate_series

FROZEN = json.loads((Path(__file__).parent / "data" / "regression.json").read_text())


def test_psi_max_ratio_frozen():
    cfg = FROZEN["psi"]
    env = generate_environment(LatticeConfig(cfg["d"], cfg["L"], cfg["p"], cfg["seed"]))
    est = estimate_psi(env, label_vacant_clusters(env), cfg["pairs"], cfg["min_separation"], cfg["seed"])
    assert math.isfinite(est.max_ratio) and est.max_ratio >= 1
    assert est.pair_count == cfg["pairs"]
    assert est.max_ratio == cfg["max_ratio"]


def test_golden_rate_series_frozen():
    cfg = FROZEN["rate"]
    env = generate_environment(LatticeConfig(cfg["d"], cfg["L"], cfg["p"], cfg["seed"]))
    start = proxy_start(env)
    assert list(start) == cfg["start"]
    rs = quenched_rate_series(env, cfg["n_max"], start)
    assert not rs.truncated
    assert np.all(rs.e <= 0)
    ns = rs.n.tolist()
    got = [float(rs.e[ns.index(n)]) for n in log_grid(cfg["n_max"])]
    want = [cfg["series"][str(n)] for n in log_grid(cfg["n_max"])]
    assert got == pytest.approx(want, rel=1e-10)
    # decreasing trend, inside the acceptance window at the end
    assert all(b < a for a, b in zip(got, got[1:]))
    assert -3 * constants(2, cfg["p"]).k_dp <= got[-1] < 0


def test_radius_scaling_frozen():
    cfg = FROZEN["radius_scaling"]
    rows = radius_scaling_stats(cfg["d"], cfg["p"], cfg["rho"], cfg["samples"], cfg["seed"])
    assert [r.probability for r in rows] == cfg["probability"]
