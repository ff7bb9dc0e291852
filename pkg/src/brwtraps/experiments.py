"""Experiment configuration, result rows and the study drivers.

A config file is flat ``key = value`` text; ``#`` starts a comment.  Keys are
the field names of :class:`ExperimentSpec`; list values are comma
separated.  Command-line flags override file values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .brw import SimOptions, simulate_many, survival_study
from .clearings import radius_scaling_stats
from .errors import ConfigError
from .lattice import LatticeConfig, TrapField, generate_environment
from .percolation import infinite_cluster_proxy, label_vacant_clusters
from .walk import constants, survival_probability_dp

DP_MEMORY_LIMIT = 3 * 2**30


@dataclass(frozen=True)
class ExperimentSpec:
    command: str = "verify"
    d: int = 2
    L: int | None = None
    p: float = 0.7
    seed: int = 0
    start: tuple[int, ...] | None = None
    n: int = 100
    n_max: int = 2000
    mc_max: int = 32
    replicas: int = 200
    mode: str = "count"
    condition: str = "none"
    k2: float = 1.0
    A: float = 1.0
    theta: float = 0.5
    k3: float | None = None
    horizons: tuple[int, ...] = (50, 100)
    rho_values: tuple[float, ...] = (50.0, 100.0, 200.0, 400.0)
    samples: int = 200
    profile: str = "quick"
    out_dir: str = "out"

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ConfigError(f"d must be 2 or 3, got {self.d}")
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if self.k2 <= 0 or self.A <= 0:
            raise ConfigError("k2 and A must be positive")
        if self.mode not in ("particle", "count"):
            raise ConfigError(f"mode must be particle or count, got {self.mode!r}")
        if self.profile not in ("quick", "full"):
            raise ConfigError(f"profile must be quick or full, got {self.profile!r}")
        if self.start is not None and len(self.start) != self.d:
            raise ConfigError("start must have d coordinates")
        limit = self.theta * constants(self.d, self.p).k_dp
        if self.k3 is not None and not 0.0 < self.k3 < limit:
            raise ConfigError(f"k3 must satisfy 0 < k3 < theta*k(d,p) = {limit:.6g}, got {self.k3}")

    @property
    def k3_value(self) -> float:
        if self.k3 is not None:
            return self.k3
        return 0.5 * self.theta * constants(self.d, self.p).k_dp

    @property
    def origin(self) -> tuple[int, ...]:
        return self.start if self.start is not None else (0,) * self.d

    def spec_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "out_dir"}
        text = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(ExperimentSpec)}
    if name not in kinds:
        raise ConfigError(f"unknown spec key {name!r}")
    kind = str(kinds[name])
    raw = raw.strip()
    try:
        if raw.lower() == "none" and "None" in kind:
            return None
        if kind.startswith("tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind.startswith("tuple[float"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_spec_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_spec(path: str | Path | None = None, **overrides) -> ExperimentSpec:
    values = parse_spec_text(Path(path).read_text()) if path is not None else {}
    for key, value in overrides.items():
        if value is None:
            continue
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return ExperimentSpec(**values)


def alpha_n(n: int, k3: float, d: int) -> int:
    """floor(exp(k3 n / (log n)^(2/d)))."""
    return int(math.floor(math.exp(k3 * n / math.log(n) ** (2.0 / d))))


# ---------------------------------------------------------------- result rows


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    seed: int
    n: int
    statistic: str
    value: float
    se: float | None = None
    note: str = ""


CSV_HEADER = ("experiment", "seed", "n", "statistic", "value", "se", "note", "spec_hash", "code_version")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_rows(path: str | Path, rows: Iterable[ResultRow], spec: ExperimentSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = spec.spec_hash()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.experiment, r.seed, r.n, r.statistic, _fmt(r.value), _fmt(r.se), r.note, h, __version__])
    return path


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


# ---------------------------------------------------------------- environments


def spec_environment(spec: ExperimentSpec, radius: int | None = None) -> TrapField:
    L = radius if radius is not None else (spec.L if spec.L is not None else spec.n)
    return generate_environment(LatticeConfig(spec.d, L, spec.p, spec.seed))


def start_in_proxy(field: TrapField, start: Sequence[int]) -> bool:
    lab = label_vacant_clusters(field)
    proxy = infinite_cluster_proxy(lab)
    return proxy is not None and lab.label_of(field, start) == proxy


def dp_memory_estimate(d: int, n: int) -> int:
    """Bytes held by the survival DP on a box of radius n (two float grids plus mask)."""
    return (2 * n + 3) ** d * 17


def log_grid(n_max: int, n_min: int = 2) -> list[int]:
    """2^j and rounded 2^(j + 1/2) between n_min and n_max, plus n_max."""
    out = set()
    j = 1
    while 2 ** j <= n_max:
        out.add(2 ** j)
        mid = int(round(2 ** (j + 0.5)))
        if mid <= n_max:
            out.add(mid)
        j += 1
    out.add(n_max)
    return sorted(x for x in out if x >= n_min)


# ---------------------------------------------------------------- drivers


def run_lln_diagnostic(spec: ExperimentSpec, write: bool = True) -> list[ResultRow]:
    """DP exponent e(n) = (log n)^(2/d) log q_n / n, a Monte Carlo scaled
    exponent (log n)^(2/d) (log N_n / n - log 2) over survivors for small n,
    and the reference -k(d, p), on a log-spaced grid of n."""
    n_max = spec.n_max
    need = dp_memory_estimate(spec.d, n_max)
    if need > DP_MEMORY_LIMIT:
        raise ConfigError(f"DP to n_max={n_max} in d={spec.d} needs about {need / 2**30:.1f} GiB")
    start = spec.origin
    field = spec_environment(spec, radius=max(n_max + max(abs(c) for c in start), spec.L or 0))
    if not start_in_proxy(field, start):
        warnings.warn(f"start {start} is not in the proxy infinite cluster", stacklevel=2)
    table = survival_probability_dp(field, start, n_max)
    ref = -constants(spec.d, spec.p).k_dp
    rows = []
    mc_n = [n for n in log_grid(n_max) if n <= spec.mc_max]
    ens = None
    if mc_n:
        ens = simulate_many(field, start, SimOptions(horizon=max(mc_n), mode="count", particle_cap=2**62), spec.replicas, spec.seed)
    for n in log_grid(n_max):
        scale = math.log(n) ** (2.0 / spec.d)
        lq = float(table.log_q[n])
        rows.append(ResultRow("lln", spec.seed, n, "e_dp", scale * lq / n if math.isfinite(lq) else -math.inf))
        if ens is not None and n <= spec.mc_max:
            alive = ens.N[:, n][ens.N[:, n] >= 1]
            if alive.size:
                x = scale * (np.log(alive.astype(np.float64)) / n - math.log(2))
                se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
                rows.append(ResultRow("lln", spec.seed, n, "mc_scaled_exponent", float(x.mean()), se, f"survivors={alive.size}"))
        rows.append(ResultRow("lln", spec.seed, n, "reference", ref, None, "-k(d,p); limit not reachable at these n"))
    if write:
        write_rows(Path(spec.out_dir) / "lln_diagnostic.csv", rows, spec)
    return rows


def run_survival_study(spec: ExperimentSpec, write: bool = True, field: TrapField | None = None) -> list[ResultRow]:
    horizons = tuple(sorted(spec.horizons))
    field = field or spec_environment(spec, radius=max(spec.L or 0, max(horizons)))
    start = spec.origin
    if field.traps[field.array_index(start)]:
        raise ConfigError(f"start {start} is a trap")
    est = survival_study(field, start, horizons, spec.replicas, spec.seed)
    rows = [ResultRow("survival", spec.seed, e.horizon, "P_S", e.probability, e.se, f"replicas={e.replicas}") for e in est]
    if len(est) >= 2:
        a, b = est[-2], est[-1]
        comb = math.sqrt(a.se ** 2 + b.se ** 2)
        z = abs(a.probability - b.probability) / comb if comb > 0 else 0.0
        rows.append(ResultRow("survival", spec.seed, b.horizon, "horizon_gap_z", z, None, f"{a.horizon} vs {b.horizon}"))
    if write:
        write_rows(Path(spec.out_dir) / "survival_study.csv", rows, spec)
    return rows


def monotone_within(values: Sequence[float], ses: Sequence[float], k: float = 2.0) -> bool:
    """Non-decreasing up to k combined standard errors between neighbours."""
    return all(
        values[i + 1] >= values[i] - k * math.hypot(ses[i], ses[i + 1]) for i in range(len(values) - 1)
    )


def run_clearing_study(spec: ExperimentSpec, write: bool = True) -> list[ResultRow]:
    stats = radius_scaling_stats(spec.d, spec.p, spec.rho_values, spec.samples, spec.seed)
    rows = [
        ResultRow("clearing", spec.seed, int(s.rho), "P_clearing", s.probability, s.se, f"radius={s.radius!r} samples={s.samples}")
        for s in stats
    ]
    ok = monotone_within([s.probability for s in stats], [s.se for s in stats])
    rows.append(ResultRow("clearing", spec.seed, 0, "monotone_2se", float(ok)))
    if write:
        write_rows(Path(spec.out_dir) / "clearing_study.csv", rows, spec)
    return rows
