"""Policy x load x seed sweep runner with deterministic CSV/JSONL outputs.

A single JSON spec describes the workload, the simulator configuration, and
the sweep axes.  Every run is a pure function of the spec, so reruns (parallel
or not) produce byte-identical files.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .analytics import SweepPoint, knee_report
from .engine import RunMetrics, SimConfig, run_simulation
from .kvcache import CacheConfig, CachePolicy
from .scheduler import PriorityWeights, SchedulerConfig
from .workload import SegmentCatalog, WorkloadConfig, generate_trace

RESULT_COLUMNS = [
    "policy",
    "qps",
    "q_cold",
    "seed",
    "p50",
    "p90",
    "p95",
    "p99",
    "throughput",
    "hit_rate",
    "reuse_hit_rate",
    "mean_wave_size",
]


class ExperimentSpecError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    num_segments: int = 981
    chunk_tokens: int = 128
    hot_segments: int = 20
    sys_prefix_tokens: int = 28
    num_requests: int = 2048
    k: int = 5
    r_hot: float = 0.7
    zipf_alpha: float = 1.2
    suffix_tokens: int = 100
    reorderable: bool = True

    def catalog(self) -> SegmentCatalog:
        return SegmentCatalog(
            num_segments=self.num_segments,
            chunk_tokens=self.chunk_tokens,
            hot_set=tuple(range(self.hot_segments)),
            sys_prefix_tokens=self.sys_prefix_tokens,
        )

    def config(self, qps: float, seed: int) -> WorkloadConfig:
        return WorkloadConfig(
            qps=qps,
            num_requests=self.num_requests,
            k=self.k,
            r_hot=self.r_hot,
            zipf_alpha=self.zipf_alpha,
            suffix_tokens=self.suffix_tokens,
            reorderable=self.reorderable,
            seed=seed,
        )

    @property
    def mean_prompt_tokens(self) -> int:
        return self.sys_prefix_tokens + self.k * self.chunk_tokens + self.suffix_tokens


@dataclass(frozen=True)
class SimSpec:
    prefill_rate: float = 10_000.0
    decode_rate: float = 40_000.0
    output_tokens: int = 32
    decode_attenuation: bool = False
    capacity_tokens: int = 32_000
    protect_budget: int = 20
    window_s: float = 0.05
    dispatch_budget: int = 8
    front_width: int = 3
    signature_size: int = 1
    w_g: float = 1.0
    w_a: float = 1e6
    w_n: float = 1e5

    def config(self, policy: CachePolicy, q_cold: int) -> SimConfig:
        return SimConfig(
            prefill_rate=self.prefill_rate,
            decode_rate=self.decode_rate,
            output_tokens=self.output_tokens,
            decode_attenuation_enabled=self.decode_attenuation,
            cache=CacheConfig(
                capacity_tokens=self.capacity_tokens,
                policy=policy,
                protect_budget=self.protect_budget,
            ),
            scheduler=SchedulerConfig(
                window_s=self.window_s,
                dispatch_budget=self.dispatch_budget,
                cold_quota=q_cold,
                front_width=self.front_width,
                signature_size=self.signature_size,
                weights=PriorityWeights(w_g=self.w_g, w_a=self.w_a, w_n=self.w_n),
            ),
        )


@dataclass(frozen=True)
class ExperimentSpec:
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    sim: SimSpec = field(default_factory=SimSpec)
    policies: tuple[str, ...] = ("DART", "LRU", "LRU_ACTIVE", "LFU")
    qps: tuple[float, ...] = (40.0,)
    seeds: tuple[int, ...] = (1,)
    cold_quotas: tuple[int, ...] = (2,)

    def __post_init__(self) -> None:
        if not self.policies or not self.qps or not self.seeds or not self.cold_quotas:
            raise ExperimentSpecError("policies, qps, and seeds must be nonempty")
        for p in self.policies:
            try:
                CachePolicy(p)
            except ValueError:
                raise ExperimentSpecError(f"unknown policy {p!r}") from None

    @staticmethod
    def from_json(doc: Mapping[str, Any]) -> "ExperimentSpec":
        try:
            return ExperimentSpec(
                workload=WorkloadSpec(**doc.get("workload", {})),
                sim=SimSpec(**doc.get("sim", {})),
                policies=tuple(doc.get("policies", ("DART", "LRU", "LRU_ACTIVE", "LFU"))),
                qps=tuple(doc.get("qps", (40.0,))),
                seeds=tuple(doc.get("seeds", (1,))),
                cold_quotas=tuple(doc.get("cold_quotas", (2,))),
            )
        except TypeError as exc:
            raise ExperimentSpecError(f"bad experiment spec: {exc}") from exc

    def run_keys(self) -> list[tuple[str, float, int, int]]:
        return [
            (policy, qps, q_cold, seed)
            for policy in self.policies
            for qps in self.qps
            for q_cold in self.cold_quotas
            for seed in self.seeds
        ]


def execute_run(
    spec: ExperimentSpec, policy: str, qps: float, q_cold: int, seed: int
) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """One simulation run; returns the summary row and per-request records."""
    trace = generate_trace(spec.workload.config(qps, seed), spec.workload.catalog())
    result = run_simulation(trace, spec.sim.config(CachePolicy(policy), q_cold))
    row = _metrics_row(policy, qps, q_cold, seed, result.run)
    per_request = [
        {
            "id": m.request_id,
            "arrival": m.arrival,
            "admit": m.admit,
            "prefill_end": m.prefill_end,
            "first_token": m.first_token,
            "completion": m.completion,
            "ttft": m.ttft,
            "hit_tokens": m.hit_tokens,
            "eff_tokens": m.eff_tokens,
            "path_tokens": m.path_tokens,
        }
        for m in result.requests
    ]
    return row, per_request


def _metrics_row(
    policy: str, qps: float, q_cold: int, seed: int, run: RunMetrics
) -> dict[str, Any]:
    return {
        "policy": policy,
        "qps": qps,
        "q_cold": q_cold,
        "seed": seed,
        "p50": run.p50,
        "p90": run.p90,
        "p95": run.p95,
        "p99": run.p99,
        "throughput": run.throughput,
        "hit_rate": run.hit_rate,
        "reuse_hit_rate": run.reuse_hit_rate,
        "mean_wave_size": run.mean_wave_size,
    }


def _run_worker(args: tuple) -> tuple[tuple, Any, Any]:
    spec, key = args
    try:
        row, per_request = execute_run(spec, *key)
    except Exception as exc:  # noqa: BLE001 - per-run isolation
        return key, None, f"{type(exc).__name__}: {exc}"
    return key, row, per_request


def run_experiment(
    spec: ExperimentSpec, out_dir: str | Path, workers: int = 1
) -> list[dict[str, Any]]:
    """Execute the sweep and write results.csv, summaries, and knee reports.

    Individual run failures are recorded in errors.json and the sweep
    continues.  Returns the successful result rows (sorted by run key).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "requests").mkdir(exist_ok=True)
    (out / "spec_echo.json").write_text(
        json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n"
    )

    keys = spec.run_keys()
    rows: dict[tuple, dict[str, Any]] = {}
    errors: dict[str, str] = {}
    per_request_map: dict[tuple, list[dict[str, Any]]] = {}

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, row, payload in pool.map(
                _run_worker, [(spec, key) for key in keys]
            ):
                if row is None:
                    errors[_run_name(key)] = payload
                    continue
                rows[key] = row
                per_request_map[key] = payload
    else:
        for key in keys:
            try:
                row, per_request = execute_run(spec, *key)
            except Exception as exc:  # noqa: BLE001 - per-run isolation
                errors[_run_name(key)] = f"{type(exc).__name__}: {exc}"
                continue
            rows[key] = row
            per_request_map[key] = per_request

    ordered = sorted(rows)
    for key in ordered:
        name = _run_name(key)
        with (out / "requests" / f"{name}.jsonl").open("w") as fh:
            for rec in per_request_map[key]:
                fh.write(json.dumps(rec) + "\n")

    result_rows = [rows[k] for k in ordered]
    write_results_csv(out / "results.csv", result_rows)
    for policy in spec.policies:
        policy_rows = [r for r in result_rows if r["policy"] == policy]
        if not policy_rows:
            continue
        (out / f"summary_{policy}.txt").write_text(_summary_table(policy, policy_rows))
        if len({r["qps"] for r in policy_rows}) >= 3:
            report = knee_report(
                _sweep_points(policy_rows),
                prompt_tokens=spec.workload.mean_prompt_tokens,
            )
            (out / f"knee_{policy}.txt").write_text(report.to_text())
            (out / f"knee_{policy}.csv").write_text(report.to_csv())
    if errors:
        (out / "errors.json").write_text(json.dumps(errors, indent=2, sort_keys=True) + "\n")
    return result_rows


def _run_name(key: tuple) -> str:
    policy, qps, q_cold, seed = key
    return f"{policy}_qps{qps:g}_cold{q_cold}_seed{seed}"


def write_results_csv(path: Path, rows: Sequence[Mapping[str, Any]]) -> None:
    lines = [",".join(RESULT_COLUMNS)]
    for row in rows:
        lines.append(",".join(_cell(row[c]) for c in RESULT_COLUMNS))
    path.write_text("\n".join(lines) + "\n")


def read_results_csv(path: str | Path) -> list[dict[str, Any]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split(",") != RESULT_COLUMNS:
        raise ExperimentSpecError(f"{path}: unexpected results schema")
    rows = []
    for line in lines[1:]:
        vals = line.split(",")
        row: dict[str, Any] = dict(zip(RESULT_COLUMNS, vals))
        row["qps"] = float(row["qps"])
        row["q_cold"] = int(row["q_cold"])
        row["seed"] = int(row["seed"])
        for c in RESULT_COLUMNS[4:]:
            row[c] = float(row[c])
        rows.append(row)
    return rows


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _summary_table(policy: str, rows: Sequence[Mapping[str, Any]]) -> str:
    lines = [
        f"policy: {policy}",
        f"{'qps':>8} {'q_cold':>7} {'p50':>9} {'p90':>9} {'p95':>9} {'p99':>9} "
        f"{'hit':>7} {'reuse_hit':>9}",
    ]
    groups: dict[tuple, list[Mapping[str, Any]]] = {}
    for row in rows:
        groups.setdefault((row["qps"], row["q_cold"]), []).append(row)
    for (qps, q_cold), grp in sorted(groups.items()):
        mean = lambda c: sum(r[c] for r in grp) / len(grp)  # noqa: E731
        lines.append(
            f"{qps:8.2f} {q_cold:7d} {mean('p50'):9.4f} {mean('p90'):9.4f} "
            f"{mean('p95'):9.4f} {mean('p99'):9.4f} {mean('hit_rate'):7.4f} "
            f"{mean('reuse_hit_rate'):9.4f}"
        )
    return "\n".join(lines) + "\n"


def _sweep_points(rows: Sequence[Mapping[str, Any]]) -> list[SweepPoint]:
    groups: dict[float, list[Mapping[str, Any]]] = {}
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
    return points


def compare(
    rows_a: Sequence[Mapping[str, Any]], rows_b: Sequence[Mapping[str, Any]]
) -> list[dict[str, Any]]:
    """Per-load deltas of A versus B, averaged over seeds.

    Reports the percentage change in P99 TTFT ((a-b)/b) and the absolute
    hit-rate gap in percentage points.  Requires matching (qps, q_cold, seed)
    keys on both sides.
    """
    index_a = {(r["qps"], r["q_cold"], r["seed"]): r for r in rows_a}
    index_b = {(r["qps"], r["q_cold"], r["seed"]): r for r in rows_b}
    unmatched = sorted(set(index_a) ^ set(index_b))
    if unmatched:
        raise ExperimentSpecError(f"unmatched run keys: {unmatched}")
    groups: dict[tuple, list[tuple[Mapping[str, Any], Mapping[str, Any]]]] = {}
    for key in sorted(index_a):
        groups.setdefault(key[:2], []).append((index_a[key], index_b[key]))
    deltas = []
    for (qps, q_cold), pairs in sorted(groups.items()):
        p99_pct = sum((a["p99"] - b["p99"]) / b["p99"] * 100.0 for a, b in pairs) / len(pairs)
        hit_pp = sum((a["hit_rate"] - b["hit_rate"]) * 100.0 for a, b in pairs) / len(pairs)
        deltas.append(
            {
                "qps": qps,
                "q_cold": q_cold,
                "p99_delta_pct": p99_pct,
                "hit_rate_gap_pp": hit_pp,
                "seeds": len(pairs),
            }
        )
    return deltas
