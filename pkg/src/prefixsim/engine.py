"""Deterministic discrete-event simulator for wave-based prefill serving.

The event loop advances in fixed scheduling windows.  At each boundary it
applies decode completions, buffers arrivals, and -- when the prefill server is
idle -- runs one scheduling round, reserves cache capacity for the dispatch
batch, and launches a single prefill wave.  All wave members finish prefill
together; decode overlaps subsequent waves and only feeds back into prefill
when attenuation is enabled.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .kvcache import (
    Anchor,
    CacheConfig,
    CachePolicy,
    CapacityError,
    NodeKind,
    RadixCache,
    RadixNode,
)
from .scheduler import SchedulerConfig, count_segments, schedule_round
from .workload import Request, Trace, serialize_tokens


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    prefill_rate: float  # aggregate tokens/s across the wave
    decode_rate: float  # aggregate tokens/s across in-flight decodes
    cache: CacheConfig
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    output_tokens: int = 32
    decode_attenuation_enabled: bool = False

    def __post_init__(self) -> None:
        if self.prefill_rate <= 0 or self.decode_rate <= 0:
            raise ValueError("prefill_rate and decode_rate must be > 0")
        if self.output_tokens < 1:
            raise ValueError("output_tokens must be >= 1")


@dataclass
class RequestMetrics:
    request_id: int
    arrival: float
    admit: float
    prefill_end: float
    first_token: float
    completion: float
    hit_tokens: int
    eff_tokens: int
    path_tokens: int
    reuse_hit_tokens: int
    sys_len: int
    reuse_len: int

    @property
    def ttft(self) -> float:
        return self.first_token - self.arrival

    @property
    def w_admit(self) -> float:
        return self.admit - self.arrival

    @property
    def t_prefill(self) -> float:
        return self.prefill_end - self.admit

    @property
    def t_first_token(self) -> float:
        return self.first_token - self.prefill_end


@dataclass
class WaveRecord:
    wave_index: int
    members: list[int]
    launch_time: float
    duration: float
    uncached_tokens: int
    cached_tokens: int


@dataclass
class RunMetrics:
    p50: float
    p90: float
    p95: float
    p99: float
    throughput: float
    hit_rate: float
    reuse_hit_rate: float
    mean_wave_size: float
    completed: int
    mean_extend_tokens: float
    mean_prompt_tokens: float
    makespan: float


@dataclass
class SimResult:
    run: RunMetrics
    requests: list[RequestMetrics]
    waves: list[WaveRecord]


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: element at 1-based index ceil(p/100 * n)."""
    if not samples:
        raise ValueError("percentile of empty sample set")
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    ordered = sorted(samples)
    idx = math.ceil(p / 100 * len(ordered))
    return ordered[idx - 1]


def effective_prefill_rate(config: SimConfig, throughput_estimate: float) -> float:
    """Prefill rate after decode attenuation; R_pf when attenuation is off."""
    if not config.decode_attenuation_enabled:
        return config.prefill_rate
    alpha = throughput_estimate * config.output_tokens / config.decode_rate
    alpha = min(max(alpha, 0.0), 0.95)
    return config.prefill_rate * (1.0 - alpha)


AdmitProbe = Callable[[Request, list[int], int, RadixCache], None]

_MAX_WINDOWS = 50_000_000


def run_simulation(
    trace: Trace, config: SimConfig, admit_probe: AdmitProbe | None = None
) -> SimResult:
    """Replay a trace under one policy configuration.

    ``admit_probe`` (tests only) is invoked per admitted member with the
    serialized path and matched hit length before the path is inserted.
    """
    capacity = config.cache.capacity_tokens
    for req in trace.requests:
        if req.path_len > capacity:
            raise SimulationError(
                f"request {req.id} path ({req.path_len} tokens) exceeds "
                f"cache capacity ({capacity})"
            )

    cache = RadixCache(config.cache)
    window = config.scheduler.window_s
    arrivals = sorted(trace.requests, key=lambda r: (r.arrival_time, r.id))
    next_arrival = 0
    pending: list[Request] = []
    active: dict[int, Request] = {}
    completions: list[tuple[float, int, RadixNode]] = []
    metrics: dict[int, RequestMetrics] = {}
    waves: list[WaveRecord] = []
    completed = 0
    busy_until = 0.0
    total = len(trace.requests)
    k = 0

    while completed < total:
        k += 1
        if k > _MAX_WINDOWS:
            raise SimulationError("simulation failed to make progress")
        t = k * window

        while completions and completions[0][0] <= t + 1e-12:
            _, rid, leaf = heapq.heappop(completions)
            cache.release_path(leaf)
            del active[rid]
            completed += 1
        while next_arrival < total and arrivals[next_arrival].arrival_time <= t + 1e-12:
            pending.append(arrivals[next_arrival])
            next_arrival += 1

        if not pending or t + 1e-12 < busy_until:
            continue

        batch = schedule_round(pending, active.values(), config.scheduler, t)
        if not batch.members:
            continue

        if config.cache.policy is CachePolicy.DART:
            cache.set_protection(batch.priorities)
        elif config.cache.policy is CachePolicy.LRU_ACTIVE:
            active_counts = count_segments(list(active.values()) + batch.members)
            cache.note_active_segments(r for r, c in active_counts.items() if c > 0)

        admitted: list[tuple[Request, int, int, RadixNode]] = []
        for req in batch.members:
            hint = batch.hints[req.id]
            path = serialize_tokens(req, trace.catalog, hint.aligned_skeleton)
            hit, _ = cache.match_prefix(path)
            if admit_probe is not None:
                admit_probe(req, path, hit, cache)
            anchors = _build_anchors(req, hint.aligned_skeleton, hint.counter_snapshot)
            try:
                leaf = cache.insert_path(path, anchors)
            except CapacityError:
                # Batch too large for the residual budget: admit what fits and
                # leave the rest pending for the next round.
                break
            admitted.append((req, hit, len(path) - hit, leaf))

        if not admitted:
            continue

        admitted_ids = {req.id for req, _, _, _ in admitted}
        pending = [r for r in pending if r.id not in admitted_ids]

        uncached = sum(eff for _, _, eff, _ in admitted)
        cached = sum(hit for _, hit, _, _ in admitted)
        throughput_estimate = completed / t if t > 0 else 0.0
        rate = effective_prefill_rate(config, throughput_estimate)
        duration = uncached / rate
        wave_size = len(admitted)
        prefill_end = t + duration
        first_token = prefill_end + wave_size / config.decode_rate
        completion = first_token + (config.output_tokens - 1) * wave_size / config.decode_rate
        busy_until = prefill_end

        waves.append(
            WaveRecord(
                wave_index=len(waves),
                members=[req.id for req, _, _, _ in admitted],
                launch_time=t,
                duration=duration,
                uncached_tokens=uncached,
                cached_tokens=cached,
            )
        )
        for req, hit, eff, leaf in admitted:
            reuse_hit = min(max(hit - req.sys_len, 0), req.reuse_len)
            metrics[req.id] = RequestMetrics(
                request_id=req.id,
                arrival=req.arrival_time,
                admit=t,
                prefill_end=prefill_end,
                first_token=first_token,
                completion=completion,
                hit_tokens=hit,
                eff_tokens=eff,
                path_tokens=req.path_len,
                reuse_hit_tokens=reuse_hit,
                sys_len=req.sys_len,
                reuse_len=req.reuse_len,
            )
            active[req.id] = req
            heapq.heappush(completions, (completion, req.id, leaf))

    per_request = [metrics[r.id] for r in trace.requests]
    return SimResult(
        run=_summarize(per_request, waves),
        requests=per_request,
        waves=waves,
    )


def _build_anchors(
    request: Request,
    aligned_skeleton: Sequence[int],
    snapshots: dict[int, tuple[int, int, int]],
) -> list[Anchor]:
    anchors: list[Anchor] = []
    if request.sys_len > 0:
        anchors.append(Anchor(offset=request.sys_len, kind=NodeKind.SYSTEM))
    m = len(aligned_skeleton)
    chunk = request.reuse_len // m if m else 0
    depth = request.sys_len
    for seg in aligned_skeleton:
        depth += chunk
        anchors.append(
            Anchor(
                offset=depth,
                kind=NodeKind.REUSABLE,
                segment_id=seg,
                counter_snapshot=snapshots.get(seg, (0, 0, 0)),
            )
        )
    if request.suffix_len > 0:
        anchors.append(Anchor(offset=request.path_len, kind=NodeKind.PRIVATE))
    return anchors


def _summarize(per_request: list[RequestMetrics], waves: list[WaveRecord]) -> RunMetrics:
    ttfts = [m.ttft for m in per_request]
    total_hit = sum(m.hit_tokens for m in per_request)
    total_len = sum(m.path_tokens for m in per_request)
    total_reuse_hit = sum(m.reuse_hit_tokens for m in per_request)
    total_reuse = sum(m.reuse_len for m in per_request)
    makespan = max((m.completion for m in per_request), default=0.0)
    n = len(per_request)
    return RunMetrics(
        p50=percentile(ttfts, 50),
        p90=percentile(ttfts, 90),
        p95=percentile(ttfts, 95),
        p99=percentile(ttfts, 99),
        throughput=n / makespan if makespan > 0 else 0.0,
        hit_rate=total_hit / total_len if total_len else 0.0,
        reuse_hit_rate=total_reuse_hit / total_reuse if total_reuse else 0.0,
        mean_wave_size=n / len(waves) if waves else 0.0,
        completed=n,
        mean_extend_tokens=(
            sum(w.uncached_tokens for w in waves) / len(waves) if waves else 0.0
        ),
        mean_prompt_tokens=total_len / n if n else 0.0,
        makespan=makespan,
    )
