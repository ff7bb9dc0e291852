"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .brw import SimOptions, mass_statistics, simulate_many
from .clearings import huge_clearing_scan, large_clearing_scan, lemma1_scan, phi_mask, scales
from .errors import ConfigError, FormatError, NoSurvivorsError, OutOfBoxError
from .experiments import (
    ExperimentSpec,
    load_spec,
    run_clearing_study,
    run_lln_diagnostic,
    run_survival_study,
)
from .genealogy import jn_terms, mrca_bruteforce, mrca_chisquare, qn_pmf, variance_bound_check, exact_confined_variance
from .lattice import LatticeConfig, generate_environment, load_environment, save_environment
from .percolation import estimate_psi, label_vacant_clusters, vacant_fraction
from .walk import constants, survival_probability_dp

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _centers(text: str) -> list[tuple[int, ...]]:
    return [_ints(part) for part in text.split(";") if part.strip()]


# ---------------------------------------------------------------- output


def _emit(args, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    if getattr(args, "out", None):
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _spec(args) -> ExperimentSpec:
    keys = ("d", "L", "p", "seed", "start", "n", "n_max", "mc_max", "replicas", "mode", "k2", "A", "theta", "k3",
            "horizons", "rho_values", "samples", "profile", "out_dir", "condition")
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return load_spec(getattr(args, "config", None), command=args.command, **overrides)


def _field(args, spec: ExperimentSpec, horizon: int = 0):
    if getattr(args, "env", None):
        return load_environment(args.env)
    L = spec.L if spec.L is not None else horizon + max((abs(c) for c in spec.origin), default=0)
    if L < 1:
        raise ConfigError("box radius L must be given (--L) or implied by --n")
    return generate_environment(LatticeConfig(spec.d, L, spec.p, spec.seed))


# ---------------------------------------------------------------- commands


def cmd_gen_env(args) -> int:
    spec = _spec(args)
    if spec.L is None:
        raise ConfigError("gen-env needs --L")
    field = generate_environment(LatticeConfig(spec.d, spec.L, spec.p, spec.seed))
    save_environment(field, args.out_file)
    print(f"wrote {args.out_file}: d={spec.d} L={spec.L} p={spec.p} seed={spec.seed} traps={field.trap_count()}")
    return EXIT_OK


def cmd_percolate(args) -> int:
    spec = _spec(args)
    field = _field(args, spec)
    lab = label_vacant_clusters(field)
    largest = int(lab.sizes.max()) if lab.cluster_count else 0
    _emit(args, ("cluster_count", "largest_size", "spans_box", "vacant_fraction"),
          [(lab.cluster_count, largest, int(lab.spans_box), vacant_fraction(field))])
    return EXIT_OK


def cmd_psi(args) -> int:
    spec = _spec(args)
    field = _field(args, spec)
    est = estimate_psi(field, label_vacant_clusters(field), args.samples, args.min_separation, spec.seed)
    rows = []
    for (x, y), l1, chem, ratio in zip(est.pairs, est.l1, est.chem, est.ratios):
        rows.append((" ".join(map(str, x)), " ".join(map(str, y)), int(l1), int(chem), float(ratio)))
    _emit(args, ("x", "y", "l1", "chem", "ratio"), rows)
    print(f"# pairs={est.pair_count} max_ratio={est.max_ratio!r}", file=sys.stderr)
    return EXIT_OK


def cmd_clearings(args) -> int:
    spec = _spec(args)
    field = _field(args, spec)
    lab = label_vacant_clusters(field)
    d = field.dimension
    coords = [f"x{i}" for i in range(d)]
    if args.radius_kind == "large":
        rows = [(*c.center, c.radius, int(c.accessible)) for c in large_clearing_scan(field, lab, spec.n, spec.k2, spec.A)]
    elif args.radius_kind == "huge":
        hit = huge_clearing_scan(field, lab, spec.n, spec.A)
        rows = [] if hit is None else [(*hit.center, hit.radius, int(hit.accessible))]
    else:
        centers = args.centers or [(0,) * d]
        rows = [(*v.witness, v.radius, 1) for v in lemma1_scan(field, lab, spec.n, centers) if v.found]
    _emit(args, (*coords, "radius", "accessible"), rows)
    return EXIT_OK


def cmd_dp_survival(args) -> int:
    spec = _spec(args)
    field = _field(args, spec, spec.n)
    table = survival_probability_dp(field, spec.origin, spec.n, args.boundary)
    _emit(args, ("k", "q_k"), [(k, float(q)) for k, q in enumerate(table.q)])
    return EXIT_OK


def cmd_constants(args) -> int:
    c = constants(args.d, args.p)
    _emit(args, ("name", "value"), [
        ("d", c.d), ("p", c.p), ("lambda_d", c.lambda_d), ("omega_d", c.omega_d), ("R0", c.R0), ("k_dp", c.k_dp),
        ("R0_sq_times_k", c.R0 ** 2 * c.k_dp),
    ])
    return EXIT_OK


def cmd_brw_sim(args) -> int:
    spec = _spec(args)
    need = spec.n
    if args.target_set == "phi":
        sc = scales(spec.n, spec.d, spec.p, spec.k2, spec.A)
        need = max(need, sc.half_width + int(math.floor(max(sc.r_large, 0.0))) - max(abs(c) for c in spec.origin))
    field = _field(args, spec, need)
    target = None
    if args.target_set == "phi":
        sc = scales(spec.n, field.dimension, field.config.vacancy_prob, spec.k2, spec.A)
        target = phi_mask(field, None, spec.n, sc)
    opts = SimOptions(horizon=spec.n, mode=spec.mode, target_set=target, track_range=True, particle_cap=args.particle_cap)
    ens = simulate_many(field, spec.origin, opts, spec.replicas, spec.seed)
    keep = np.arange(ens.replicas)
    if spec.condition == "survival":
        keep = np.flatnonzero(ens.N[:, spec.n] >= 1)
        if keep.size == 0:
            raise NoSurvivorsError(f"no replica out of {ens.replicas} survived to time {spec.n}")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "replicas.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("replica", "replica_seed", "N", "F", "T", "Sigma", "M", "hit", "survived"))
        for i in keep:
            r = ens.record(int(i))
            w.writerow((int(i), r.replica_seed, int(r.N[-1]), int(r.F[-1]), int(r.T[-1]), int(r.Sigma[-1]),
                        repr(float(r.M[-1])), "" if r.hits is None else int(r.hits[-1]), int(r.N[-1] >= 1)))
    stats = mass_statistics([ens.record(int(i)) for i in keep])
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("replicas", "accepted", "n", "mean_N", "se_N", "survival_frequency", "mean_log_N_over_n"))
        mean_exp = float(stats.exponents.mean()) if stats.exponents.size else float("nan")
        w.writerow((ens.replicas, keep.size, spec.n, repr(stats.mean), repr(stats.se),
                    repr(float((ens.N[:, spec.n] >= 1).mean())), repr(mean_exp)))
    print(f"wrote {out / 'replicas.csv'} and {out / 'summary.csv'}")
    return EXIT_OK


def cmd_qn_check(args) -> int:
    n = args.n
    law = qn_pmf(n)
    if args.check_mode == "exact":
        brute = mrca_bruteforce(n)
        _emit(args, ("k", "Q_exact", "Q", "bruteforce"),
              [(k, str(q), float(q), str(b)) for k, (q, b) in enumerate(zip(law.exact, brute.exact))])
        return EXIT_OK if law.exact == brute.exact else EXIT_CHECK
    res = mrca_chisquare(n, args.pairs, args.seed if args.seed is not None else 0)
    _emit(args, ("k", "Q", "expected", "observed"),
          [(k, float(q), float(e), int(o)) for k, (q, e, o) in enumerate(zip(law.exact, res.expected, res.observed))])
    print(f"# chi2={res.statistic!r} p_value={res.p_value!r}", file=sys.stderr)
    return EXIT_OK if res.p_value > 0.01 else EXIT_CHECK


def cmd_moments(args) -> int:
    rep = jn_terms(args.d, args.r, args.n)
    rows = [("n", rep.n), ("radius", rep.radius), ("split", rep.split), ("p_n", rep.p_n), ("J", rep.J), ("J1", rep.J1),
            ("J2", rep.J2), ("bound", rep.bound), ("identity_variance", rep.identity_variance),
            ("exact_variance", float(exact_confined_variance(args.d, args.r, args.n, order=args.order)))]
    code = EXIT_OK
    if args.replicas:
        v = variance_bound_check(args.d, args.r, args.n, args.replicas, args.seed or 0, args.order)
        rows += [("empirical_mean", v.mean), ("empirical_mean_se", v.mean_se), ("empirical_var", v.variance),
                 ("empirical_var_se", v.variance_se), ("bound_holds", int(v.passed))]
        code = EXIT_OK if v.passed else EXIT_CHECK
    _emit(args, ("quantity", "value"), [(k, float(x) if isinstance(x, (float, np.floating)) else x) for k, x in rows])
    return code


def cmd_lln(args) -> int:
    spec = _spec(args)
    run_lln_diagnostic(spec)
    print(f"wrote {Path(spec.out_dir) / 'lln_diagnostic.csv'}")
    return EXIT_OK


def cmd_survival_study(args) -> int:
    spec = _spec(args)
    field = load_environment(args.env) if args.env else None
    run_survival_study(spec, field=field)
    print(f"wrote {Path(spec.out_dir) / 'survival_study.csv'}")
    return EXIT_OK


def cmd_clearing_study(args) -> int:
    spec = _spec(args)
    rows = run_clearing_study(spec)
    print(f"wrote {Path(spec.out_dir) / 'clearing_study.csv'}")
    return EXIT_OK if rows[-1].value == 1.0 else EXIT_CHECK


def cmd_verify(args) -> int:
    from .verify import run_verify

    spec = _spec(args)
    criteria = list(args.criteria) if args.criteria else None
    if criteria and any(c < 1 or c > 12 for c in criteria):
        raise ConfigError("criteria must lie in 1..12")

    def progress(res):
        tag = f"criterion {res.criterion}" if res.criterion is not None else "extra"
        print(f"{'PASS' if res.passed else 'FAIL'}  {tag:<13} {res.name}", flush=True)

    report = run_verify(spec, criteria, Path(args.golden_dir) if args.golden_dir else None, progress)
    report.write(spec.out_dir)
    print(f"report written to {spec.out_dir}")
    return EXIT_OK if report.passed else EXIT_CHECK


# ---------------------------------------------------------------- parser


def _env_flags(p, with_env=True):
    if with_env:
        p.add_argument("--env", help="environment file (otherwise generated from d, L, p, seed)")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--d", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brwtraps", description="Branching random walks among Bernoulli hard traps.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="generate and save a trap field")
    _env_flags(p, with_env=False)
    p.add_argument("--out", dest="out_file", required=True)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("percolate", help="vacant-cluster summary")
    _env_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_percolate)

    p = sub.add_parser("psi", help="chemical-distance ratio samples")
    _env_flags(p)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--min-separation", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_psi)

    p = sub.add_parser("clearings", help="clearing scans")
    _env_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k2", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--radius-kind", choices=("large", "huge", "lemma1"), default="large")
    p.add_argument("--centers", type=_centers, help="lemma1 cube centres, e.g. '0,0;5,-3'")
    p.add_argument("--out")
    p.set_defaults(func=cmd_clearings)

    p = sub.add_parser("dp-survival", help="exact walk survival q_k")
    _env_flags(p)
    p.add_argument("--start", type=_ints)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", dest="boundary", choices=("exact", "absorbing"), default="exact")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dp_survival)

    p = sub.add_parser("constants", help="lambda_d, omega_d, R0, k(d,p)")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("brw-sim", help="Monte Carlo of the trapped BRW")
    _env_flags(p)
    p.add_argument("--start", type=_ints)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicas", type=int)
    p.add_argument("--mode", choices=("particle", "count"))
    p.add_argument("--condition", choices=("none", "survival"))
    p.add_argument("--target-set", choices=("phi", "none"), default="none")
    p.add_argument("--k2", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--particle-cap", type=int, default=10_000_000)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_brw_sim)

    p = sub.add_parser("qn-check", help="MRCA pair law checks")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", dest="check_mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--pairs", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_qn_check)

    p = sub.add_parser("moments", help="J_n, variance bound and optional Monte Carlo")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicas", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--order", choices=("split-move", "move-split"), default="split-move")
    p.add_argument("--out")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("lln-diagnostic", help="DP and Monte Carlo growth exponents")
    _env_flags(p, with_env=False)
    p.add_argument("--start", type=_ints)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--mc-max", dest="mc_max", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--k3", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_lln)

    p = sub.add_parser("survival-study", help="P(S_k) at several horizons")
    _env_flags(p)
    p.add_argument("--start", type=_ints)
    p.add_argument("--horizons", type=_ints)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_survival_study)

    p = sub.add_parser("clearing-study", help="clearing probability versus rho")
    _env_flags(p, with_env=False)
    p.add_argument("--rho-values", dest="rho_values", type=_floats)
    p.add_argument("--samples", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_clearing_study)

    p = sub.add_parser("verify", help="run the acceptance battery")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=("quick", "full"))
    p.add_argument("--criteria", type=_ints, help="subset, e.g. 1,2,5")
    p.add_argument("--golden-dir")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (ConfigError, FormatError, OutOfBoxError, FileNotFoundError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoSurvivorsError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
