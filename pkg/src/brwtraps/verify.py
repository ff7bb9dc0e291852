"""The verification battery.

Each check returns a :class:`CheckResult`; failures are collected, never
short-circuited.  ``quick`` shrinks replica counts and horizons where a
criterion allows it; ``full`` runs every criterion at its stated size.
Reports carry no timings or timestamps so repeated runs are byte-identical.
"""

from __future__ import annotations

import filecmp
import itertools
import json
import math
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg, special

from . import __version__
from .brw import SimOptions, simulate_many, survival_study, two_colored_counts
from .clearings import (
    ball_sites,
    is_clearing,
    lemma1_half_side,
    lemma1_radius,
    lemma1_scan,
    phi_set,
    radius_scaling_stats,
    scales,
)
from .experiments import (
    ExperimentSpec,
    log_grid,
    monotone_within,
    run_lln_diagnostic,
    run_survival_study,
    write_table,
)
from .genealogy import (
    markov_decomposition_error,
    mrca_bruteforce,
    mrca_chisquare,
    pair_correlation_check,
    qn_pmf,
    variance_bound_check,
)
from .lattice import LatticeConfig, TrapField, environment_bytes, generate_environment, parse_environment
from .percolation import estimate_psi, infinite_cluster_proxy, label_vacant_clusters
from .rng import derive_replica_seed, generator
from .walk import (
    ball_walk,
    confined_decay_rate,
    confined_exit_probs,
    constants,
    lambda_d,
    quenched_rate_series,
    survival_probability_dp,
)

PROFILES = {
    "quick": dict(
        m2o_replicas=2000, chi_pairs=100_000, eig_radii=(20, 40, 80), acct_replicas=1000, tv_replicas=20_000,
        tv_limit=0.05, pair_replicas=100_000, var_replicas=100_000, surv_replicas=2000, rho_samples=20,
        oracle_fields=5, lln_n=200, lln_envs=2,
    ),
    "full": dict(
        m2o_replicas=20_000, chi_pairs=100_000, eig_radii=(20, 40, 80), acct_replicas=10_000, tv_replicas=100_000,
        tv_limit=0.02, pair_replicas=100_000, var_replicas=100_000, surv_replicas=10_000, rho_samples=200,
        oracle_fields=20, lln_n=2000, lln_envs=5,
    ),
}

GOLDEN_ENV = LatticeConfig(2, 12, 0.7, 42)
GOLDEN_SMALL_ENV = LatticeConfig(2, 3, 0.7, 42)


@dataclass
class CheckResult:
    name: str
    criterion: int | None
    passed: bool
    metrics: dict = field(default_factory=dict)
    detail: str = ""


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def _seed(master: int, *path: int) -> int:
    s = master
    for i in path:
        s = derive_replica_seed(s, i)
    return s


def proxy_start(field: TrapField, labeling=None) -> tuple[int, ...] | None:
    """The proxy-cluster site closest to the origin (ties lexicographic)."""
    lab = labeling or label_vacant_clusters(field)
    proxy = infinite_cluster_proxy(lab)
    if proxy is None:
        return None
    idx = np.argwhere(lab.labels == proxy) - field.box_radius
    key = np.lexsort(tuple(idx[:, i] for i in reversed(range(idx.shape[1]))) + ((idx * idx).sum(axis=1),))
    return tuple(int(c) for c in idx[key[0]])


def _seeded_envs(master: int, count: int, d: int, L: int, p: float, need_proxy_origin: bool, tag: int):
    """First ``count`` seeds (in derivation order) whose origin is vacant, or
    in the proxy cluster when required."""
    out, i = [], 0
    origin = (0,) * d
    while len(out) < count:
        seed = _seed(master, tag, i)
        i += 1
        env = generate_environment(LatticeConfig(d, L, p, seed), warn=False)
        if env.traps[env.array_index(origin)]:
            continue
        if need_proxy_origin:
            lab = label_vacant_clusters(env)
            if lab.label_of(env, origin) != infinite_cluster_proxy(lab):
                continue
        out.append((seed, env))
    return out


# ---------------------------------------------------------------- criteria


def check_many_to_one(cfg: dict, master: int) -> CheckResult:
    n, R = 12, cfg["m2o_replicas"]
    rows, ok = [], True
    for seed, env in _seeded_envs(master, 5, 2, 40, 0.7, False, 1):
        ens = simulate_many(env, (0, 0), SimOptions(horizon=n, mode="particle"), R, seed)
        x = ens.N[:, n].astype(np.float64)
        se = float(x.std(ddof=1) / math.sqrt(R))
        target = 2.0 ** n * float(survival_probability_dp(env, (0, 0), n).q[n])
        z = abs(float(x.mean()) - target) / se if se > 0 else (0.0 if x.mean() == target else math.inf)
        ok &= z <= 3.0
        rows.append(dict(seed=seed, mean=float(x.mean()), se=se, expected=target, z=z))
    return CheckResult("many_to_one", 1, ok, dict(replicas=R, n=n, environments=rows))


def check_pair_law(cfg: dict, master: int) -> CheckResult:
    exact = all(qn_pmf(n).exact == mrca_bruteforce(n).exact for n in range(1, 13))
    chi = mrca_chisquare(10, cfg["chi_pairs"], _seed(master, 2))
    return CheckResult(
        "pair_law", 2, exact and chi.p_value > 0.01,
        dict(exact_equal_n1_12=exact, chi2=chi.statistic, p_value=chi.p_value, pairs=chi.pairs),
    )


def _dense_mu(d: int, r: float) -> float:
    bw = ball_walk(d, r)
    return float(linalg.eigvalsh(bw.transition.toarray())[-1])


def check_spectral(cfg: dict, master: int) -> CheckResult:
    n, r = 2000, 10.0
    p = confined_exit_probs(2, r, n)
    mu = confined_decay_rate(2, r)
    gap = abs(-math.log(p[n]) / n + math.log(mu))
    two_step = abs((math.log(p[n]) - math.log(p[n - 2])) / 2 - math.log(mu))
    mu15, dense15 = confined_decay_rate(2, 1.5), _dense_mu(2, 1.5)
    dense_ok = abs(mu15 - dense15) <= 1e-10
    return CheckResult(
        "spectral_consistency", 3, gap <= 1e-6 and dense_ok,
        dict(mu_10=mu, log_rate_gap=gap, two_step_ratio_gap=two_step, mu_1_5=mu15, mu_1_5_dense=dense15,
             sites_1_5=ball_walk(2, 1.5).size),
        "the n=2000 gap carries the eigenvector prefactor log(c)/n; the two-step ratio removes it",
    )


def check_continuum(cfg: dict, master: int) -> CheckResult:
    lam = lambda_d(2)
    radii = cfg["eig_radii"]
    vals = [r * r * -math.log(confined_decay_rate(2, float(r))) for r in radii]
    dist = [abs(v - lam) for v in vals]
    approaching = all(a > b for a, b in zip(dist, dist[1:]))
    within = dist[-1] / lam <= 0.10
    return CheckResult(
        "continuum_eigenvalue", 4, approaching and within,
        dict(radii=list(radii), scaled=vals, distance=dist, lambda_2=lam,
             values_increasing=all(a < b for a, b in zip(vals, vals[1:])), rel_error_last=dist[-1] / lam),
        "convergence read as the distance to lambda_2 strictly decreasing",
    )


def check_constants(cfg: dict, master: int) -> CheckResult:
    rng = generator(_seed(master, 5))
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 4))
        p = float(rng.uniform(0.05, 0.99))
        c = constants(d, p)
        worst = max(worst, abs(c.R0 ** 2 * c.k_dp - c.lambda_d) / c.lambda_d)
    j = float(special.jn_zeros(0, 1)[0])
    k_ref = j * j / 4 * (math.pi * math.log(1 / 0.7) / 2)
    k = constants(2, 0.7).k_dp
    ok = worst <= 5e-13 and abs(k - 0.8100) <= 0.0005 and abs(k - k_ref) <= 1e-12
    return CheckResult("constants", 5, ok, dict(max_rel_error=worst, k_2_07=k, k_2_07_reference=k_ref))


def check_accounting(cfg: dict, master: int) -> CheckResult:
    R, n = cfg["acct_replicas"], 12
    env = _seeded_envs(master, 1, 2, 30, 0.7, False, 6)[0][1]
    out, ok = {}, True
    for mode in ("particle", "count"):
        ens = simulate_many(env, (0, 0), SimOptions(horizon=n, mode=mode), R, _seed(master, 6, 99))
        good = np.all(ens.N + ens.T == ens.F + 1, axis=1)
        frac = float(good.mean())
        ok &= frac == 1.0
        out[mode] = frac
    return CheckResult("accounting_identity", 6, ok, dict(replicas=R, n=n, fraction_ok=out))


def _tv(a: np.ndarray, b: np.ndarray) -> float:
    m = int(max(a.max(), b.max())) + 1
    pa = np.bincount(a, minlength=m) / a.size
    pb = np.bincount(b, minlength=m) / b.size
    return 0.5 * float(np.abs(pa - pb).sum())


def check_two_colored(cfg: dict, master: int) -> CheckResult:
    R, n = cfg["tv_replicas"], 5
    env = _seeded_envs(master, 1, 2, 6, 0.7, False, 7)[0][1]
    trapped = simulate_many(env, (0, 0), SimOptions(horizon=n, mode="particle"), R, _seed(master, 7, 1)).N[:, n]
    blue = two_colored_counts(env, (0, 0), n, R, _seed(master, 7, 2))
    tv = _tv(trapped, blue)
    return CheckResult("two_colored", 7, tv <= cfg["tv_limit"], dict(replicas=R, tv=tv, limit=cfg["tv_limit"]))


def check_variance(cfg: dict, master: int) -> CheckResult:
    markov = max(markov_decomposition_error(2, r, n) for r in (1.5, 2.5, 10.0) for n in range(1, 51))
    pair = pair_correlation_check(2, 1.5, 3, cfg["pair_replicas"], _seed(master, 8, 1))
    var = [variance_bound_check(2, r, n, cfg["var_replicas"], _seed(master, 8, 2 + i)) for i, (r, n) in enumerate(((1.5, 3), (2.5, 5)))]
    ok = markov <= 1e-12 and pair.passed and all(v.passed for v in var)
    return CheckResult(
        "variance_machinery", 8, ok,
        dict(
            markov_max_error=markov,
            pair=dict(empirical=pair.empirical, se=pair.se, product_form=pair.product_form, exact=pair.exact, z=pair.z,
                      passed=pair.passed),
            variance=[dict(radius=v.radius, n=v.n, empirical=v.variance, se=v.variance_se, bound=v.bound,
                           exact=v.exact_variance, passed=v.passed) for v in var],
        ),
        "p_n^2 J_n is a lower bound of the exact pair probability; the exact value is reported alongside",
    )


def check_survival(cfg: dict, master: int) -> CheckResult:
    env = generate_environment(LatticeConfig(2, 100, 0.8, 42))
    start = proxy_start(env)
    est = survival_study(env, start, (50, 100), cfg["surv_replicas"], _seed(master, 9))
    a, b = est
    comb = math.hypot(a.se, b.se)
    diff = abs(a.probability - b.probability)
    ok = b.probability > 0 and diff <= 3 * comb
    return CheckResult(
        "survival_positivity", 9, ok,
        dict(start=list(start), P50=a.probability, P100=b.probability, se50=a.se, se100=b.se, diff=diff, replicas=a.replicas),
    )


def _lemma1_oracle(env: TrapField, labeling, n: int, x: tuple[int, ...]):
    """Visit centres by distance to x (ties lexicographic) and test each ball directly."""
    r = lemma1_radius(n, env.dimension, env.config.vacancy_prob)
    reach = int(math.floor(lemma1_half_side(n, env.dimension, env.config.vacancy_prob))) - int(math.floor(r))
    if reach < 0:
        return None
    axes = np.meshgrid(*[np.arange(-reach, reach + 1)] * env.dimension, indexing="ij")
    off = np.stack([a.ravel() for a in axes], axis=1)
    order = np.lexsort(tuple(off[:, i] for i in reversed(range(env.dimension))) + ((off * off).sum(axis=1),))
    for o in off[order]:
        c = tuple(int(a) + int(b) for a, b in zip(x, o))
        if is_clearing(env, c, r, require_accessible=True, labeling=labeling):
            return c
    return None


def _phi_oracle(env: TrapField, sc) -> set:
    half = sc.half_width
    return {
        c for c in itertools.product(range(-half, half + 1), repeat=env.dimension)
        if all(env.vacant[tuple(np.array(s) + env.box_radius)] for s in ball_sites(c, sc.r_large))
    }


def check_clearing_scaling(cfg: dict, master: int) -> CheckResult:
    rows = radius_scaling_stats(2, 0.7, (50, 100, 200, 400), cfg["rho_samples"], _seed(master, 10))
    mono = monotone_within([r.probability for r in rows], [r.se for r in rows])
    n = 6
    a = int(math.floor(lemma1_half_side(n, 2, 0.8)))
    centers = [(0, 0), (5, -3), (-7, 2)]
    agree = 0
    for i in range(cfg["oracle_fields"]):
        env = generate_environment(LatticeConfig(2, a + 8, 0.8, _seed(master, 10, 1, i)))
        lab = label_vacant_clusters(env)
        scan = lemma1_scan(env, lab, n, centers)
        same = all(v.witness == _lemma1_oracle(env, lab, n, v.center) for v in scan)
        small = generate_environment(LatticeConfig(2, 14, 0.8, _seed(master, 10, 2, i)))
        sc = scales(40, 2, 0.8, A=0.25)
        same &= phi_set(small, None, 40, sc) == _phi_oracle(small, sc)
        agree += bool(same)
    ok = mono and agree == cfg["oracle_fields"]
    return CheckResult(
        "clearing_scaling", 10, ok,
        dict(rho=[r.rho for r in rows], probability=[r.probability for r in rows], se=[r.se for r in rows],
             monotone_2se=mono, oracle_fields=cfg["oracle_fields"], oracle_agree=agree),
    )


def check_lln_trend(cfg: dict, master: int) -> CheckResult:
    n_max = cfg["lln_n"]
    k = constants(2, 0.7).k_dp
    envs = _seeded_envs(master, cfg["lln_envs"], 2, n_max, 0.7, True, 11)
    rows, ok = [], True
    for seed, env in envs:
        e = quenched_rate_series(env, n_max)
        hi = quenched_rate_series(generate_environment(LatticeConfig(2, n_max, 0.99, seed)), n_max)
        nonpos = bool(np.all(e.e <= 0)) and not e.truncated
        last = float(e.e[-1])
        in_window = -3 * k <= last < 0
        dominated = bool(np.all(hi.e >= e.e))
        ok &= nonpos and in_window and dominated
        rows.append(dict(seed=seed, e_last=last, nonpositive=nonpos, in_window=in_window, p099_dominates=dominated))
    return CheckResult("lln_trend", 11, ok, dict(n_max=n_max, window=[-3 * k, 0.0], environments=rows))


def _determinism_probe(out: Path, master: int) -> None:
    lln_seed = _seeded_envs(master, 1, 2, 64, 0.7, True, 12)[0][0]
    spec = ExperimentSpec(command="lln-diagnostic", n_max=64, mc_max=16, replicas=50, seed=lln_seed, out_dir=str(out))
    run_lln_diagnostic(spec)
    surv_seed = _seeded_envs(master, 1, 2, 40, 0.8, False, 13)[0][0]
    run_survival_study(replace(spec, p=0.8, horizons=(20, 40), replicas=200, L=40, seed=surv_seed))
    env = generate_environment(GOLDEN_ENV)
    ens = simulate_many(env, (0, 0), SimOptions(horizon=8, mode="particle", track_range=True), 50, master)
    write_table(out / "records.csv", ("replica", "N", "F", "T", "M"),
                [(i, int(ens.N[i, -1]), int(ens.F[i, -1]), int(ens.T[i, -1]), float(ens.M[i, -1])) for i in range(50)])


def check_determinism(cfg: dict, master: int) -> CheckResult:
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        _determinism_probe(a, master)
        _determinism_probe(b, master)
        names = sorted(p.name for p in a.iterdir())
        same = [filecmp.cmp(a / f, b / f, shallow=False) for f in names]
    return CheckResult("determinism", 12, all(same) and len(names) > 0, dict(files=names, identical=same))


# ---------------------------------------------------------------- goldens


def golden_values() -> dict:
    env = generate_environment(GOLDEN_ENV)
    psi_env = generate_environment(LatticeConfig(2, 30, 0.7, 42))
    psi = estimate_psi(psi_env, label_vacant_clusters(psi_env), 200, 10, 42)
    rate_env = generate_environment(LatticeConfig(2, 210, 0.7, 42))
    rate_start = proxy_start(rate_env)
    rs = quenched_rate_series(rate_env, 200, rate_start)
    grid = [n for n in log_grid(200) if n in set(rs.n.tolist())]
    rows = radius_scaling_stats(2, 0.7, (10, 20, 40), 20, 42)
    return dict(
        environment=dict(d=2, L=12, p=0.7, seed=42),
        q_origin=survival_probability_dp(env, (0, 0), 10).q.tolist(),
        psi_max_ratio=psi.max_ratio,
        rate_start=list(rate_start),
        rate_series={str(n): float(rs.e[rs.n.tolist().index(n)]) for n in grid},
        radius_scaling=[r.probability for r in rows],
    )


def default_golden_dir() -> Path:
    return Path(str(resources.files("brwtraps") / "data"))


def _close(a, b, tol=1e-9) -> bool:
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(_close(a[k], b[k], tol) for k in a)
    if isinstance(a, list):
        return isinstance(b, list) and len(a) == len(b) and all(_close(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, float) or isinstance(b, float):
        return math.isclose(float(a), float(b), rel_tol=tol, abs_tol=tol)
    return a == b


def check_golden(golden_dir: Path | None = None) -> CheckResult:
    gdir = Path(golden_dir) if golden_dir is not None else default_golden_dir()
    problems = []
    for name, cfg in (("golden_env.brwt", GOLDEN_ENV), ("golden_env_L3.brwt", GOLDEN_SMALL_ENV)):
        try:
            stored = parse_environment((gdir / name).read_bytes())
            if environment_bytes(stored) != environment_bytes(generate_environment(cfg)):
                problems.append(f"{name} differs from regeneration")
        except Exception as exc:  # a corrupt golden is a failed check, not a crash
            problems.append(f"{name}: {exc}")
    try:
        want = json.loads((gdir / "golden.json").read_text())
        got = _clean(golden_values())
        for key in sorted(set(want) | set(got)):
            if not _close(want.get(key), got.get(key)):
                problems.append(f"{key} differs")
    except Exception as exc:
        problems.append(f"golden.json: {exc}")
    return CheckResult("golden_files", None, not problems, dict(problems=problems))


def write_goldens(golden_dir: Path) -> None:
    golden_dir.mkdir(parents=True, exist_ok=True)
    (golden_dir / "golden_env.brwt").write_bytes(environment_bytes(generate_environment(GOLDEN_ENV)))
    (golden_dir / "golden_env_L3.brwt").write_bytes(environment_bytes(generate_environment(GOLDEN_SMALL_ENV)))
    (golden_dir / "golden.json").write_text(json.dumps(_clean(golden_values()), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- suite


CRITERIA: dict[int, Callable[[dict, int], CheckResult]] = {
    1: check_many_to_one,
    2: check_pair_law,
    3: check_spectral,
    4: check_continuum,
    5: check_constants,
    6: check_accounting,
    7: check_two_colored,
    8: check_variance,
    9: check_survival,
    10: check_clearing_scaling,
    11: check_lln_trend,
    12: check_determinism,
}


@dataclass
class VerifyReport:
    profile: str
    seed: int
    spec_hash: str
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self) -> str:
        body = dict(
            code_version=__version__, profile=self.profile, seed=self.seed, spec_hash=self.spec_hash, passed=self.passed,
            checks=[dict(name=r.name, criterion=r.criterion, passed=r.passed, metrics=r.metrics, detail=r.detail)
                    for r in self.results],
        )
        return json.dumps(_clean(body), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        paths = [out / "report.json"]
        paths.append(write_table(out / "checks.csv", ("criterion", "name", "passed", "spec_hash", "code_version"),
                                 [(r.criterion if r.criterion is not None else "", r.name, int(r.passed), self.spec_hash, __version__)
                                  for r in self.results]))
        flat = []
        for r in self.results:
            for key, value in _flatten(_clean(r.metrics)):
                flat.append((r.name, key, value))
        paths.append(write_table(out / "metrics.csv", ("check", "metric", "value"), flat))
        return paths


def _flatten(x, prefix=""):
    if isinstance(x, dict):
        for k in sorted(x):
            yield from _flatten(x[k], f"{prefix}.{k}" if prefix else k)
    elif isinstance(x, list) and any(isinstance(v, (dict, list)) for v in x):
        for i, v in enumerate(x):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, json.dumps(x)


def run_verify(spec: ExperimentSpec, criteria=None, golden_dir: Path | None = None, progress=None) -> VerifyReport:
    cfg = PROFILES[spec.profile]
    results = []
    for c in criteria or sorted(CRITERIA):
        try:
            res = CRITERIA[c](cfg, spec.seed)
        except Exception as exc:
            res = CheckResult(CRITERIA[c].__name__.removeprefix("check_"), c, False, {}, f"error: {type(exc).__name__}: {exc}")
        results.append(res)
        if progress:
            progress(res)
    g = check_golden(golden_dir)
    results.append(g)
    if progress:
        progress(g)
    return VerifyReport(spec.profile, spec.seed, spec.spec_hash(), results)
