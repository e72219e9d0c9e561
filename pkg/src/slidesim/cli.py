"""Command-line front end: ``slidesim {gen,solve,sweep,certify,bench}``.

Exit codes: 0 success, 1 certification failure, 2 input error, 3 solver
non-convergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channel import ChannelError
from .harness import (
    AXES,
    ConfigError,
    ScenarioConfig,
    SweepSpec,
    aggregate,
    ensure_catalog,
    generate_scenario,
    generate_small_scenario,
    load_config,
    random_p2_instance,
    rows_to_csv,
    run_sweep,
    stats_to_csv,
)
from .layer_solver import InfeasibleBudgetError, SolverError, solve_p2
from .oracle import BRANCH_AND_BOUND, OracleConfig, OracleError, OracleInfeasible, exhaustive_p1, grid_p2
from .profiles import ProfileError, default_catalog_path, default_devices_path, load_devices
from .scenario import load_scenario
from .scheduler import METHODS, SchedulerConfig, solve, solve_slide

log = logging.getLogger("slidesim")

EXIT_OK, EXIT_CERT, EXIT_INPUT, EXIT_NONCONV = 0, 1, 2, 3
P2_REL_TOL = 1e-3


class InputError(Exception):
    pass


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _sched_cfg(args) -> SchedulerConfig:
    if args.eps <= 0:
        raise InputError("--eps must be > 0")
    return SchedulerConfig(eps=args.eps, jobs=max(1, args.jobs),
                           redistribute_leftover=getattr(args, "redistribute", False))


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    if not path.parent.exists():
        raise InputError(f"output directory does not exist: {path.parent}")
    path.write_text(text)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


# --------------------------------------------------------------------------
# gen

def _scenario_config(args) -> ScenarioConfig:
    cfg = load_config(_require_file(args.config, "config")) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_gen(args) -> int:
    cfg = _scenario_config(args)
    catalog = ensure_catalog(_require_file(args.catalog, "catalog"))
    devices = load_devices(_require_file(args.devices, "device file"))
    scn = generate_scenario(cfg, catalog, devices)
    if args.out is None:
        raise InputError("gen needs --out")
    _write(args.out, scn.to_json())
    print(f"K={cfg.num_users} B={cfg.bandwidth_hz / 1e6:g}MHz theta={cfg.nano_fraction:g} "
          f"beta={cfg.energy_scale:g} seed={cfg.seed} -> {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# solve

def cmd_solve(args) -> int:
    if not args.config:
        raise InputError("solve needs --config pointing at a scenario file")
    scn = load_scenario(_require_file(args.config, "scenario"))
    methods = METHODS if args.method == "all" else (args.method,)
    cfg = _sched_cfg(args)
    timing = not args.no_timing
    results = []
    unconverged = False
    for m in methods:
        res = solve(scn, m, cfg)
        unconverged |= not res.converged
        results.append(res)
        print(f"{m}: throughput {res.throughput}/{res.num_users} "
              f"(served ratio {res.served_ratio:.4f})")
    if args.out:
        payload = {"seed": scn.seed, "scenario_sha256": scn.digest(), "eps": cfg.eps,
                   "results": [r.to_dict(timing) for r in results]}
        _write(args.out, json.dumps(payload, indent=1, sort_keys=True) + "\n")
    if args.strict and unconverged:
        log.error("some per-layer solves did not reach the requested duality gap")
        return EXIT_NONCONV
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep

def _parse_values(axis: str, text: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if axis in ("mobility", "precision"):
        return tuple(parts)
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise InputError(f"--values: {exc}") from exc
    return tuple(int(v) if axis == "num_users" else v for v in vals)


def _sweep_inputs(args):
    base = ScenarioConfig()
    spec_raw = {}
    if args.config:
        raw = json.loads(_require_file(args.config, "sweep config").read_text())
        base = ScenarioConfig.from_dict(raw.get("base", {}))
        spec_raw = {k: raw[k] for k in ("axis", "values", "trials", "methods") if k in raw}
    axis = args.axis or spec_raw.get("axis")
    if axis is None:
        raise InputError(f"sweep needs an axis (one of {', '.join(AXES)})")
    values = _parse_values(axis, args.values) if args.values else tuple(spec_raw.get("values", ()))
    trials = args.trials if args.trials is not None else int(spec_raw.get("trials", 20))
    methods = tuple(args.methods.split(",")) if args.methods else tuple(spec_raw.get("methods", ("slide", "dai")))
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    return SweepSpec(axis, values, trials, methods), base


def cmd_sweep(args) -> int:
    spec, base = _sweep_inputs(args)
    catalog = ensure_catalog(_require_file(args.catalog, "catalog"))
    devices = load_devices(_require_file(args.devices, "device file"))
    rows = run_sweep(spec, base, catalog, devices, replace(_sched_cfg(args), jobs=1),
                     jobs=max(1, args.jobs))
    timing = not args.no_timing
    header = {"seed": base.seed, "config_sha256": base.digest(), "axis": spec.axis,
              "trials": spec.trials_per_point}
    stats = aggregate(rows)
    if args.out:
        _write(args.out, rows_to_csv(rows, header, timing))
        out = Path(args.out)
        _write(out.with_name(out.stem + ".summary.csv"), stats_to_csv(stats, timing))
    for s in stats:
        print(f"{s.axis}={s.value} {s.method}: served {s.served_ratio_mean:.4f} "
              f"+- {s.served_ratio_std:.4f} over {s.trials - s.errors} trials"
              + (f" ({s.errors} errors)" if s.errors else ""))
    return EXIT_OK


# --------------------------------------------------------------------------
# certify

def _certify_p1(args_tuple):
    seed, max_users, max_models, eps = args_tuple
    rng = np.random.default_rng([seed, 11])
    k, i = int(rng.integers(1, max_users + 1)), int(rng.integers(1, max_models + 1))
    scn = generate_small_scenario(seed, k, i)
    sched = SchedulerConfig(eps=eps)
    ocfg = OracleConfig(max_users=max_users, max_models=max_models)
    greedy = solve_slide(scn, sched).throughput
    oracle = exhaustive_p1(scn, ocfg, sched).throughput
    return {"seed": seed, "num_users": k, "num_models": i, "greedy": greedy, "oracle": oracle}


def _certify_p2(seed):
    user, model, y, bs, ch = random_p2_instance(seed)
    res = solve_p2(user, model, y, bs, ch)
    try:
        _, grid = grid_p2(user, model, y, bs, ch)
    except OracleInfeasible:
        return {"seed": seed, "rel_gap": None, "case": res.case_tag}
    return {"seed": seed, "rel_gap": (res.e2e_latency_s - grid) / grid, "case": res.case_tag,
            "layers": model.num_layers}


def _pmap(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_certify(args) -> int:
    trials = args.trials if args.trials is not None else 50
    if trials < 0 or args.p2_trials < 0:
        raise InputError("trial counts must be >= 0")
    if not 1 <= args.max_users <= 6 or not 1 <= args.max_models <= 6:
        raise InputError("--max-users and --max-models must lie in [1, 6]")
    seed = args.seed if args.seed is not None else 0
    seeds = np.random.SeedSequence(seed).generate_state(trials + args.p2_trials) if trials + args.p2_trials else []
    p1_seeds = [int(s) for s in seeds[:trials]]
    p2_seeds = [int(s) for s in seeds[trials:]]
    jobs = max(1, args.jobs)
    p1 = _pmap(_certify_p1, [(s, args.max_users, args.max_models, args.eps) for s in p1_seeds], jobs)
    p2 = _pmap(_certify_p2, p2_seeds, jobs)
    mismatches = [r for r in p1 if r["greedy"] != r["oracle"]]
    gaps = [r["rel_gap"] for r in p2 if r["rel_gap"] is not None]
    worst = max(gaps) if gaps else 0.0
    p2_bad = [r for r in p2 if r["rel_gap"] is not None and r["rel_gap"] > P2_REL_TOL]
    report = {
        "seed": seed,
        "p1": {"trials": len(p1), "agree": len(p1) - len(mismatches), "mismatches": mismatches},
        "p2": {"trials": len(p2), "compared": len(gaps), "max_rel_gap": worst,
               "tolerance": P2_REL_TOL, "violations": p2_bad},
    }
    if args.out:
        _write(args.out, json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"P1 throughput agreement: {report['p1']['agree']}/{len(p1)}")
    print(f"P2 grid comparison: {len(gaps)} instances, worst relative gap {worst:.3e}")
    return EXIT_CERT if mismatches or p2_bad else EXIT_OK


# --------------------------------------------------------------------------
# bench

def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if not vals or min(vals) < 1:
        raise InputError("values must be positive integers")
    return vals


def cmd_bench(args) -> int:
    ks, is_ = _int_list(args.k_values), _int_list(args.i_values)
    if max(ks) > 6 or max(is_) > 6:
        raise InputError("bench is limited to K, I <= 6")
    seed = args.seed if args.seed is not None else 0
    sched = SchedulerConfig(eps=args.eps)
    ocfg = OracleConfig()
    lines = [f"# seed={seed} repeats={args.repeats}",
             "k,i,repeats,greedy_s,bnb_s,speedup,throughput_match"]
    for k in ks:
        for i in is_:
            tg = tb = 0.0
            match = True
            for r in range(args.repeats):
                scn = generate_small_scenario(seed * 1000 + r, k, i, full_compat=True)
                t = time.perf_counter()
                g = solve_slide(scn, sched)
                tg += time.perf_counter() - t
                t = time.perf_counter()
                b = exhaustive_p1(scn, ocfg, sched, mode=BRANCH_AND_BOUND, cache=False)
                tb += time.perf_counter() - t
                match &= g.throughput == b.throughput
            speedup = tb / tg if tg > 0 else math.inf
            print(f"K={k} I={i}: greedy {tg:.4f}s  B&B {tb:.4f}s  speedup {speedup:.1f}x")
            if args.no_timing:
                tg = tb = speedup = 0.0
            lines.append(f"{k},{i},{args.repeats},{tg:.6f},{tb:.6f},{speedup:.2f},{int(match)}")
    if args.out:
        _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config or scenario file, depending on the subcommand")
    common.add_argument("--out", help="output path ('-' for stdout)")
    common.add_argument("--seed", type=int, help="override the seed")
    common.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes")
    common.add_argument("--eps", type=float, default=1e-4, help="bisection tolerance on the bandwidth share")
    common.add_argument("--no-timing", action="store_true",
                        help="omit wall-clock fields so outputs are byte-reproducible")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="slidesim", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a scenario file")
    g.add_argument("--catalog", default=str(default_catalog_path()))
    g.add_argument("--devices", default=str(default_devices_path()))
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", parents=[common], help="schedule one scenario")
    s.add_argument("--method", default="slide", choices=METHODS + ("all",))
    s.add_argument("--strict", action="store_true", help="exit 3 if a per-layer solve did not converge")
    s.add_argument("--redistribute", action="store_true", help="give leftover bandwidth to served users")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over one axis")
    w.add_argument("--axis", choices=AXES)
    w.add_argument("--values", help="comma-separated axis values (bandwidth in MHz)")
    w.add_argument("--trials", type=int)
    w.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    w.add_argument("--catalog", default=str(default_catalog_path()))
    w.add_argument("--devices", default=str(default_devices_path()))
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("certify", parents=[common], help="compare fast solvers with the oracles")
    c.add_argument("--trials", type=int, help="random scheduling instances (default 50)")
    c.add_argument("--p2-trials", type=int, default=200, help="random per-layer instances")
    c.add_argument("--max-users", type=int, default=4)
    c.add_argument("--max-models", type=int, default=4)
    c.set_defaults(func=cmd_certify)

    b = sub.add_parser("bench", parents=[common], help="time greedy vs branch and bound")
    b.add_argument("--k-values", default="1,2,3,4,5,6")
    b.add_argument("--i-values", default="6")
    b.add_argument("--repeats", type=int, default=3)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError, ProfileError, ChannelError, OracleError, SolverError,
            InfeasibleBudgetError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
