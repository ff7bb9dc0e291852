"""Recompute tests/data/regression.json.  Run by hand only; the values are frozen on purpose."""

import json
from pathlib import Path

from brwtraps.clearings import radius_scaling_stats
from brwtraps.experiments import log_grid
from brwtraps.lattice import LatticeConfig, generate_environment
from brwtraps.percolation import estimate_psi, label_vacant_clusters
from brwtraps.verify import proxy_start
from brwtraps.walk import quenched_rate_series

OUT = Path(__file__).parent / "data" / "regression.json"

PSI = dict(d=2, L=200, p=0.7, seed=42, pairs=10_000, min_separation=20)
RATE = dict(d=2, L=2010, p=0.7, seed=42, n_max=2000)
SCALING = dict(d=2, p=0.7, rho=[10, 20, 40, 80], samples=40, seed=42)


def compute() -> dict:
    env = generate_environment(LatticeConfig(PSI["d"], PSI["L"], PSI["p"], PSI["seed"]))
    psi = estimate_psi(env, label_vacant_clusters(env), PSI["pairs"], PSI["min_separation"], PSI["seed"])

    env = generate_environment(LatticeConfig(RATE["d"], RATE["L"], RATE["p"], RATE["seed"]))
    start = proxy_start(env)
    rs = quenched_rate_series(env, RATE["n_max"], start)
    ns = rs.n.tolist()
    series = {str(n): float(rs.e[ns.index(n)]) for n in log_grid(RATE["n_max"]) if n in set(ns)}

    rows = radius_scaling_stats(SCALING["d"], SCALING["p"], SCALING["rho"], SCALING["samples"], SCALING["seed"])
    return dict(
        psi=dict(PSI, max_ratio=psi.max_ratio),
        rate=dict(RATE, start=list(start), truncated=rs.truncated, series=series),
        radius_scaling=dict(SCALING, probability=[r.probability for r in rows]),
    )


if __name__ == "__main__":
    OUT.write_text(json.dumps(compute(), indent=1) + "\n")
