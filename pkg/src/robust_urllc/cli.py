"""Command line entry point: ``robust-urllc {gen,solve,sweep,probe,oracle}``."""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import harness
from .model import check_feasible
from .oracle import exhaustive_solve
from .sca import MAX_ITER, TOL, run
from .scenario import ScenarioConfig, generate_instance, uniform_config

log = logging.getLogger("robust_urllc")


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides the file)")
    p.add_argument("--out", type=Path, default=None, help="output file or directory")
    p.add_argument("--tol", type=float, default=TOL, help="SCA stopping tolerance in watts")
    p.add_argument("--max-iter", type=int, default=MAX_ITER, help="SCA iteration cap")
    p.add_argument("--preset", choices=harness.PRESETS, default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-urllc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a ScenarioConfig (or SweepSpec) template")
    _common(p)
    p.add_argument("--sweep", action="store_true", help="write a SweepSpec instead")

    p = sub.add_parser("solve", help="solve one instance, write schedule and report")
    _common(p)
    p.add_argument("config", type=Path, nargs="?", help="ScenarioConfig JSON")

    p = sub.add_parser("sweep", help="Monte-Carlo sweep, write CSV, plot script and PNG")
    _common(p)
    p.add_argument("spec", type=Path, nargs="?", help="SweepSpec JSON")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--paper-scale", action="store_true", help="M = 64 and 100 trials")
    p.add_argument("--no-png", action="store_true")

    p = sub.add_parser("probe", help="convergence trace of one SCA solve")
    _common(p)
    p.add_argument("config", type=Path, nargs="?", help="ScenarioConfig JSON")
    p.add_argument("--no-png", action="store_true")

    p = sub.add_parser("oracle", help="compare SCA against exhaustive search on a tiny instance")
    _common(p)
    p.add_argument("config", type=Path, nargs="?", help="ScenarioConfig JSON")
    return ap


def _load_config(path, seed):
    cfg = ScenarioConfig.load(path)
    return cfg if seed is None else cfg.with_seed(seed)


def cmd_gen(args):
    seed = args.seed or 0
    if args.preset:
        pre = harness.preset(args.preset, seed=seed)
        out = args.out or Path(f"{args.preset}")
        out.mkdir(parents=True, exist_ok=True)
        if pre.probe is not None:
            pre.probe.save(out / "config.json")
        for i, (label, spec) in enumerate(pre.sweeps):
            spec.save(out / f"sweep_{i}.json")
        print(f"wrote {args.preset} inputs to {out}")
        return 0
    cfg = harness.template_config(seed)
    out = args.out or Path("sweep.json" if args.sweep else "scenario.json")
    if args.sweep:
        harness.SweepSpec(cfg, "payload_B", [10.0, 20.0, 30.0], 20, args.tol, args.max_iter).save(out)
    else:
        cfg.save(out)
    print(f"wrote {out}")
    return 0


def cmd_solve(args):
    if args.config is None:
        print("solve needs a ScenarioConfig file (see `gen`)", file=sys.stderr)
        return 2
    cfg = _load_config(args.config, args.seed)
    inst = generate_instance(cfg)
    out = run(inst, tol=args.tol, max_iter=args.max_iter)
    rep = check_feasible(inst, out.schedule)
    report = {"status": out.status, "p_tot_w": out.p_tot if math.isfinite(out.p_tot) else None,
              "relaxed_p_tot_w": out.relaxed_p_tot if math.isfinite(out.relaxed_p_tot) else None,
              "iterations": out.iterations, "feasible": rep.feasible,
              "per_user_rate_bits": rep.per_user_rate, "per_user_rate_exact_bits": rep.per_user_rate_exact,
              "violations": [list(map(str, v)) for v in rep.violated]}
    out_dir = args.out or Path("solve_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    out.schedule.save(out_dir / "schedule.json")
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    probe = harness.ProbeResult(out.trace, out.status, out.p_tot)
    harness.emit_probe(probe, out_dir)
    print(f"status={out.status} p_tot={out.p_tot:.6g} W iterations={out.iterations} -> {out_dir}")
    return 0 if out.status == "converged" else 1


def cmd_sweep(args):
    out_dir = args.out or Path("sweep_out")
    if args.preset:
        pre = harness.preset(args.preset, paper_scale=args.paper_scale, trials=args.trials,
                             seed=args.seed or 0)
        if pre.probe is not None:
            print(f"{args.preset} is a convergence probe; use `probe --preset {args.preset}`", file=sys.stderr)
            return 2
        curves = []
        for i, (label, spec) in enumerate(pre.sweeps):
            spec.tol, spec.max_iter = args.tol, args.max_iter
            res = harness.run_sweep(spec, workers=args.workers)
            harness.emit(res, out_dir / f"curve_{i}", png=not args.no_png)
            curves.append((label, res))
            _print_rows(label, res)
        if not args.no_png:
            from .plotting import plot_sweeps
            plot_sweeps(curves, out_dir / f"{args.preset}.png", title=pre.notes)
        return 0
    if args.spec is None:
        print("sweep needs a SweepSpec file or --preset", file=sys.stderr)
        return 2
    spec = harness.SweepSpec.load(args.spec)
    if args.seed is not None:
        spec.base = spec.base.with_seed(args.seed)
    if args.trials is not None:
        spec.trials = args.trials
    spec.tol, spec.max_iter = args.tol, args.max_iter
    res = harness.run_sweep(spec, workers=args.workers)
    harness.emit(res, out_dir, png=not args.no_png)
    _print_rows(spec.swept_parameter, res)
    return 0


def _print_rows(label, res):
    print(f"# {label}")
    print(harness.sweep_csv_text(res), end="")


def cmd_probe(args):
    seed = args.seed or 0
    if args.preset:
        pre = harness.preset(args.preset, seed=seed)
        if pre.probe is None:
            print(f"{args.preset} is a sweep; use `sweep --preset {args.preset}`", file=sys.stderr)
            return 2
        cfg = pre.probe
    elif args.config is not None:
        cfg = _load_config(args.config, args.seed)
    else:
        cfg = harness.desk_probe_config(seed)
    probe = harness.run_convergence_probe(cfg, tol=args.tol, max_iter=args.max_iter)
    out_dir = args.out or Path("probe_out")
    harness.emit_probe(probe, out_dir, png=not args.no_png)
    print(f"status={probe.status} iterations={len(probe.rows)} p_tot={probe.p_tot:.6g} W -> {out_dir}")
    return 0 if probe.status == "converged" else 1


def cmd_oracle(args):
    if args.config is not None:
        cfg = _load_config(args.config, args.seed)
    else:
        cfg = uniform_config(2, 2, [2, 2], payload_bits=10.0, error_prob=1e-3, distance_m=100.0,
                             rng_seed=args.seed or 0)
    inst = generate_instance(cfg)
    orc = exhaustive_solve(inst)
    out = run(inst, tol=args.tol, max_iter=args.max_iter)
    gap = (out.p_tot - orc.best_p_tot) / orc.best_p_tot if orc.feasible_found and orc.best_p_tot > 0 else math.nan
    res = {"oracle_p_tot_w": orc.best_p_tot if orc.feasible_found else None,
           "assignments_searched": orc.assignments_searched, "sca_status": out.status,
           "sca_p_tot_w": out.p_tot if math.isfinite(out.p_tot) else None,
           "relative_gap": gap if math.isfinite(gap) else None}
    text = json.dumps(res, indent=2)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n")
    print(text)
    return 0


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "sweep": cmd_sweep, "probe": cmd_probe, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
