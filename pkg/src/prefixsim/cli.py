"""Command-line interface: trace generation, sweeps, comparisons, analysis.

Subcommands:
  generate  -- write a trace file from a workload config
  run       -- execute an experiment spec (policy x qps x seed sweep)
  compare   -- delta table between two result sets
  knee      -- service-knee report from a results CSV
  analyze   -- closed-form queueing calculator
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analytics import (
    PolicyParams,
    QueueParams,
    SweepPoint,
    admission_wait,
    calibrate_prefill_rate,
    crossover,
    knee_report,
    mean_service,
    reuse_gap_to_full,
    service_gap,
    stability_expansion,
)
from .experiment import (
    ExperimentSpec,
    ExperimentSpecError,
    WorkloadSpec,
    compare,
    read_results_csv,
    run_experiment,
)
from .workload import TraceFormatError, generate_trace, save_trace


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixsim",
        description="Serving simulator for segmented prompts with prefix-reuse scheduling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a trace file")
    p_gen.add_argument("--config", type=Path, help="workload config JSON")
    p_gen.add_argument("--out", type=Path, required=True, help="output trace path")
    p_gen.add_argument("--qps", type=float, default=40.0)
    p_gen.add_argument("--seed", type=int, default=0)

    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("--config", type=Path, required=True, help="experiment spec JSON")
    p_run.add_argument("--out", type=Path, required=True, help="output directory")
    p_run.add_argument("--policy", action="append", help="override policy list")
    p_run.add_argument("--qps", type=_float_list, help="override qps list, e.g. 20,30,40")
    p_run.add_argument("--seed", type=_int_list, help="override seed list")
    p_run.add_argument("--workers", type=int, default=1, help="parallel runs")

    p_cmp = sub.add_parser("compare", help="delta table between two result CSVs")
    p_cmp.add_argument("results_a", type=Path)
    p_cmp.add_argument("results_b", type=Path)
    p_cmp.add_argument("--policy-a", help="filter side A to one policy")
    p_cmp.add_argument("--policy-b", help="filter side B to one policy")

    p_knee = sub.add_parser("knee", help="service-knee report from a results CSV")
    p_knee.add_argument("results", type=Path)
    p_knee.add_argument("--policy", required=True)
    p_knee.add_argument("--prompt-tokens", type=float, required=True)
    p_knee.add_argument(
        "--prefill-rate",
        type=float,
        help="effective per-request prefill tokens/s (calibrated from the top point if omitted)",
    )
    p_knee.add_argument("--out", type=Path, help="also write CSV report here")

    p_an = sub.add_parser("analyze", help="closed-form queueing calculator")
    p_an.add_argument(
        "--op",
        required=True,
        choices=[
            "mean-service",
            "service-gap",
            "stability-expansion",
            "reuse-gap",
            "admission-wait",
            "crossover",
            "calibrate",
        ],
    )
    p_an.add_argument("--prompt-tokens", type=float)
    p_an.add_argument("--reuse-tokens", type=float)
    p_an.add_argument("--wave-size", type=float)
    p_an.add_argument("--prefill-rate", type=float)
    p_an.add_argument("--hit-rate", type=float)
    p_an.add_argument("--mu", type=float)
    p_an.add_argument("--h-baseline", type=float)
    p_an.add_argument("--delta-h", type=float)
    p_an.add_argument("--delta-h-reuse", type=float)
    p_an.add_argument("--arrival-rate", type=float)
    p_an.add_argument("--cs2", type=float, default=1.0)
    p_an.add_argument("--window", type=float, default=0.05)
    return parser


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _cmd_generate(args: argparse.Namespace) -> int:
    doc = json.loads(args.config.read_text()) if args.config else {}
    wl = WorkloadSpec(**doc.get("workload", doc))
    trace = generate_trace(wl.config(args.qps, args.seed), wl.catalog())
    with args.out.open("w") as fh:
        save_trace(trace, fh)
    print(f"wrote {len(trace.requests)} requests to {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    doc = json.loads(args.config.read_text())
    spec = ExperimentSpec.from_json(doc)
    overrides = {}
    if args.policy:
        overrides["policies"] = tuple(args.policy)
    if args.qps:
        overrides["qps"] = args.qps
    if args.seed:
        overrides["seeds"] = args.seed
    if overrides:
        spec = ExperimentSpec(
            workload=spec.workload,
            sim=spec.sim,
            policies=overrides.get("policies", spec.policies),
            qps=overrides.get("qps", spec.qps),
            seeds=overrides.get("seeds", spec.seeds),
            cold_quotas=spec.cold_quotas,
        )
    rows = run_experiment(spec, args.out, workers=args.workers)
    print(f"wrote {len(rows)} result rows to {args.out / 'results.csv'}")
    errors = args.out / "errors.json"
    if errors.exists():
        print(f"some runs failed; see {errors}", file=sys.stderr)
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    rows_a = read_results_csv(args.results_a)
    rows_b = read_results_csv(args.results_b)
    if args.policy_a:
        rows_a = [r for r in rows_a if r["policy"] == args.policy_a]
    if args.policy_b:
        rows_b = [r for r in rows_b if r["policy"] == args.policy_b]
    deltas = compare(rows_a, rows_b)
    print(f"{'qps':>8} {'q_cold':>7} {'p99_delta_pct':>14} {'hit_gap_pp':>11} {'seeds':>6}")
    for d in deltas:
        print(
            f"{d['qps']:8.2f} {d['q_cold']:7d} {d['p99_delta_pct']:14.2f} "
            f"{d['hit_rate_gap_pp']:11.2f} {d['seeds']:6d}"
        )
    return 0


def _cmd_knee(args: argparse.Namespace) -> int:
    rows = [r for r in read_results_csv(args.results) if r["policy"] == args.policy]
    if not rows:
        print(f"no rows for policy {args.policy}", file=sys.stderr)
        return 1
    groups: dict[float, list[dict]] = {}
    for row in rows:
        groups.setdefault(row["qps"], []).append(row)
    points = []
    for qps, grp in sorted(groups.items()):
        mean = lambda c: sum(r[c] for r in grp) / len(grp)  # noqa: E731
        points.append(
            SweepPoint(
                offered_qps=qps,
                throughput=mean("throughput"),
                p99_ttft=mean("p99"),
                hit_rate=mean("hit_rate"),
                mean_wave_size=mean("mean_wave_size"),
            )
        )
    report = knee_report(points, args.prompt_tokens, args.prefill_rate)
    print(report.to_text(), end="")
    if args.out:
        args.out.write_text(report.to_csv())
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    def require(*names: str) -> None:
        missing = [n for n in names if getattr(args, n) is None]
        if missing:
            raise SystemExit(
                f"--op {args.op} requires: " + ", ".join(f"--{n.replace('_', '-')}" for n in missing)
            )

    if args.op == "mean-service":
        require("prompt_tokens", "wave_size", "prefill_rate", "hit_rate")
        params = PolicyParams(
            prompt_tokens=args.prompt_tokens,
            reuse_tokens=args.reuse_tokens or 0.0,
            mean_wave_size=args.wave_size,
            prefill_rate_eff=args.prefill_rate,
            hit_rate=args.hit_rate,
        )
        s_wave, mu = mean_service(params)
        print(f"E[S_wave] = {s_wave:.6f} s")
        print(f"mu = {mu:.4f} req/s")
    elif args.op == "service-gap":
        require("mu", "h_baseline", "delta_h")
        gap = service_gap(args.mu, args.h_baseline, args.delta_h)
        print(f"service-rate gap = {gap:.4f} req/s")
    elif args.op == "stability-expansion":
        require("wave_size", "prefill_rate", "prompt_tokens", "h_baseline", "delta_h")
        exp = stability_expansion(
            args.wave_size, args.prefill_rate, args.prompt_tokens, args.h_baseline, args.delta_h
        )
        print(f"stability expansion = {exp:.4f} req/s")
    elif args.op == "reuse-gap":
        require("delta_h_reuse", "reuse_tokens", "prompt_tokens")
        print(
            f"full-prompt delta_h = "
            f"{reuse_gap_to_full(args.delta_h_reuse, args.reuse_tokens, args.prompt_tokens):.6f}"
        )
    elif args.op == "admission-wait":
        require("mu", "arrival_rate")
        wait = admission_wait(
            args.mu,
            QueueParams(
                arrival_rate=args.arrival_rate,
                service_cv2=args.cs2,
                window_s=args.window,
            ),
        )
        print(f"E[W_admit] = {wait:.6f} s")
    elif args.op == "crossover":
        require("mu", "wave_size")
        rho_star, lam_star = crossover(args.mu, args.wave_size, args.cs2)
        print(f"rho* = {rho_star:.6f}")
        print(f"lambda* = {lam_star:.4f} req/s")
    elif args.op == "calibrate":
        require("mu", "wave_size", "prompt_tokens", "hit_rate")
        rate = calibrate_prefill_rate(args.mu, args.wave_size, args.prompt_tokens, args.hit_rate)
        print(f"effective prefill rate = {rate:.4f} tokens/s/request")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "generate": _cmd_generate,
        "run": _cmd_run,
        "compare": _cmd_compare,
        "knee": _cmd_knee,
        "analyze": _cmd_analyze,
    }[args.command]
    try:
        return handler(args)
    except (ExperimentSpecError, TraceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
