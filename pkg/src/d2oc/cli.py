"""``d2oc`` command line: simulate, bench and verify."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import TIMING_BOUNDARY, fit_slopes, run_bench, write_bench_csv
from .config import ConfigError, load_config
from .density import write_field_csv
from .lti import ContractError
from .swarm import BACKENDS, run_sim
from .verify import run_checks

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    exp = load_config(args.config)
    swarm = exp.swarm
    if args.seed is not None:
        swarm = replace(swarm, seed=args.seed)
    if args.backend is not None:
        swarm = replace(swarm, solver_backend=args.backend)
    if getattr(args, "parallel", False):
        swarm = replace(swarm, parallel=True)
    return swarm, exp.bench


def cmd_simulate(args) -> int:
    cfg, _ = _load(args)
    out = _out_dir(args)
    write_field_csv(cfg.build_field(), out / "field_initial.csv")
    trace = run_sim(cfg)
    trace.write_jsonl(out / "trace.jsonl")
    trace.write_summary_csv(out / "summary.csv")
    write_field_csv(trace.final_field, out / "field.csv")
    cov = trace.coverage()
    final = float(cov[-1]) if len(cov) else 1.0 - trace.final_field.total_mass / trace.final_field.initial_mass
    lines = [
        f"backend: {cfg.solver_backend}",
        f"agents: {cfg.n_agents}  horizon: {cfg.horizon}  seed: {cfg.seed}",
        f"steps: {trace.n_steps}",
        f"final coverage: {final:.4f}",
        f"target {cfg.coverage_target:.4f} reached: {trace.reached}",
        f"mean solve time: {trace.mean_solve_ms():.4f} ms",
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if trace.reached else EXIT_CHECK


def cmd_bench(args) -> int:
    swarm, bench = _load(args)
    if args.backend is not None:
        bench = replace(bench, backends=(args.backend,))
    if args.seed is not None:
        bench = replace(bench, seed=args.seed)
    if args.reps is not None:
        bench = replace(bench, reps=args.reps)
    out = _out_dir(args)
    records = run_bench(bench, swarm, progress=lambda r: print(
        f"{r.backend:>16} T={r.T:<3d} mean {r.mean_ms:9.4f} ms  std {r.std_ms:8.4f} ms"))
    slopes = fit_slopes(records)
    write_bench_csv(records, out / "bench.csv", slopes)
    lines = [f"# {TIMING_BOUNDARY}", f"# reps per point: {bench.reps}"]
    lines += [f"slope {name}: {s:.3f}" for name, s in slopes.items()]
    by_key = {(r.backend, r.T): r for r in records}
    T_max = max(bench.horizons)
    if ("full_kkt", T_max) in by_key and ("condensed", T_max) in by_key:
        full, cond = by_key["full_kkt", T_max], by_key["condensed", T_max]
        lines.append(f"speedup at T={T_max}: {full.mean_ms / cond.mean_ms:.2f}x")
        lines.append(f"jitter at T={T_max}: full {full.std_ms / full.mean_ms:.4f}, "
                     f"condensed {cond.std_ms / cond.mean_ms:.4f} (std/mean)")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_verify(args) -> int:
    out = _out_dir(args)
    results = run_checks(seed=args.seed or 0, perturb_h=args.perturb_h)
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in results]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d2oc", description="Density-driven coverage control toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="experiment file (INI), or 'default' for the bundled setup")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the random seed")

    p = sub.add_parser("simulate", help="run the coverage mission")
    common(p)
    p.add_argument("--backend", choices=BACKENDS, default=None)
    p.add_argument("--parallel", action="store_true", help="fan out per-agent solves over threads")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="horizon sweep timing")
    common(p)
    p.add_argument("--backend", choices=BACKENDS, default=None, help="time a single backend")
    p.add_argument("--reps", type=int, default=None, help="override repetitions per point")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the oracle cross-checks")
    common(p, config=False)
    p.add_argument("--perturb-h", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
