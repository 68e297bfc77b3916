"""Command-line entry points: run experiments, validate results, trace runs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .channel import NetworkConfig
from .harness import (
    SCALE_PRESETS,
    SCHEMES,
    ExperimentSpec,
    run_experiment,
    save_schedules,
    summarize,
    validate_saved_run,
    write_completions_csv,
    write_percentiles_csv,
    write_trace_csv,
)
from .session_opt import initial_point, sca_solve


def _build_spec(args) -> ExperimentSpec:
    if args.config:
        spec = ExperimentSpec.from_json(Path(args.config).read_text())
    else:
        preset = SCALE_PRESETS[args.scale]
        spec = ExperimentSpec(
            config=NetworkConfig.from_powers_watts(M=preset["M"], K=preset["K"]),
            trials=preset["trials"],
        )
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.trials is not None:
        spec.trials = args.trials
    if args.schemes:
        spec.schemes = tuple(s.strip() for s in args.schemes.split(","))
        spec.__post_init__()
    return spec


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment spec JSON (see README for the schema)")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--trials", type=int, default=None, help="trial count override")
    p.add_argument(
        "--schemes",
        help=f"comma-separated subset of {','.join(SCHEMES)}",
    )
    p.add_argument(
        "--scale",
        choices=sorted(SCALE_PRESETS),
        default="desk",
        help="preset used when no --config is given",
    )
    p.add_argument("--out", default="results", help="output directory")


def cmd_run(args) -> int:
    spec = _build_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(spec)
    (out / "spec.json").write_text(spec.to_json())
    write_completions_csv(report, out / "completions.csv")
    write_percentiles_csv(summarize(report), out / "percentiles.csv")
    save_schedules(report, out / "schedules.json")
    n_fail = len(report.failures)
    print(f"wrote {out}/completions.csv ({len(report.rows)} rows, {n_fail} scheme failures)")
    for (trial, scheme), msg in sorted(report.failures.items()):
        print(f"  failed: trial {trial} {scheme}: {msg}", file=sys.stderr)
    table = summarize(report)
    for scheme in spec.schemes:
        p90 = table.pooled[scheme][90]
        print(f"  {scheme:10s} 90th-percentile completion: {p90:.6g} s")
    return 0


def cmd_validate(args) -> int:
    results = validate_saved_run(args.out)
    worst = 0.0
    bad = 0
    for trial, residuals in sorted(results.items()):
        passed = residuals.pop("passed") > 0
        mx = max(residuals.values())
        worst = max(worst, mx)
        flag = "ok" if passed else "FAIL"
        if not passed:
            bad += 1
        print(f"trial {trial}: {flag} (max residual {mx:.3e})")
    print(f"{len(results)} schedules checked, {bad} failed, worst residual {worst:.3e}")
    return 1 if bad else 0


def cmd_trace(args) -> int:
    spec = _build_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .harness import drop_ues

    profiles = drop_ues(spec, args.trial)
    result = sca_solve(profiles, spec.config, spec.session_params, spec.master_seed)
    write_trace_csv(result.records, out / "trace.csv")
    print(
        f"wrote {out}/trace.csv ({len(result.records)} records, converged={result.converged}, "
        f"V1={result.V1:.3e}, V2={result.V2:.3e})"
    )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sessionmimo",
        description="Session-based downlink scheduling experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a Monte Carlo experiment")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="re-check schedules saved by `run`")
    p_val.add_argument("--out", default="results", help="directory written by `run`")
    p_val.set_defaults(func=cmd_validate)

    p_tr = sub.add_parser("trace", help="trace one session-optimizer run")
    _add_common(p_tr)
    p_tr.add_argument("--trial", type=int, default=0, help="trial index to trace")
    p_tr.set_defaults(func=cmd_trace)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
