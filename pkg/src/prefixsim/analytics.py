"""Closed-form queueing analysis for wave-based prefill serving.

Service rates from hit-rate and wave-size parameters, the fixed-parameter
service-rate gap and stability expansion, an M/G/1-style admission-wait
approximation with a wave-alignment floor, the congestion crossover point, and
a knee report comparing measured sweeps against the analytic service rate.

All rates are requests/s; wave rates appear only through explicit division by
the mean wave size.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence


class AnalyticsDomainError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyParams:
    prompt_tokens: float  # mean prompt length L
    reuse_tokens: float  # mean reusable payload L_reuse
    mean_wave_size: float  # M-bar
    prefill_rate_eff: float  # effective per-request prefill tokens/s
    hit_rate: float  # full-prompt token hit rate h in [0, 1)

    def __post_init__(self) -> None:
        if not 0.0 <= self.hit_rate < 1.0:
            raise AnalyticsDomainError("hit_rate must be in [0, 1)")
        if self.reuse_tokens > self.prompt_tokens:
            raise AnalyticsDomainError("reuse_tokens must be <= prompt_tokens")
        if self.mean_wave_size < 1:
            raise AnalyticsDomainError("mean_wave_size must be >= 1")
        if self.prefill_rate_eff <= 0:
            raise AnalyticsDomainError("prefill_rate_eff must be > 0")


@dataclass(frozen=True)
class QueueParams:
    arrival_rate: float  # lambda, requests/s
    service_cv2: float = 1.0  # squared coefficient of variation c_s^2
    window_s: float = 0.05
    wait_floor_s: float = 0.0

    def __post_init__(self) -> None:
        if self.arrival_rate <= 0:
            raise AnalyticsDomainError("arrival_rate must be > 0")
        if self.service_cv2 < 0:
            raise AnalyticsDomainError("service_cv2 must be >= 0")


def mean_service(params: PolicyParams) -> tuple[float, float]:
    """(mean wave service time, request-level service rate mu).

    mu carries the wave-to-request conversion: each wave releases mean_wave_size
    completions after one wave duration.
    """
    s_wave = params.prompt_tokens * (1.0 - params.hit_rate) / params.prefill_rate_eff
    mu = params.mean_wave_size / s_wave
    return s_wave, mu


def service_ratio(p1: PolicyParams, p0: PolicyParams) -> float:
    """mu(p1)/mu(p0) factored into batching, throughput, length, and reuse terms."""
    return (
        (p1.mean_wave_size / p0.mean_wave_size)
        * (p1.prefill_rate_eff / p0.prefill_rate_eff)
        * (p0.prompt_tokens / p1.prompt_tokens)
        * ((1.0 - p0.hit_rate) / (1.0 - p1.hit_rate))
    )


def service_gap(mu_baseline: float, h_baseline: float, delta_h: float) -> float:
    """Service-rate gap from a hit-rate gap at fixed (L, M-bar, R_pf)."""
    if delta_h < 0:
        raise AnalyticsDomainError("delta_h must be >= 0")
    if h_baseline + delta_h >= 1.0:
        raise AnalyticsDomainError("h_baseline + delta_h must be < 1")
    return mu_baseline * delta_h / (1.0 - h_baseline - delta_h)


def stability_expansion(
    mean_wave_size: float,
    prefill_rate_eff: float,
    prompt_tokens: float,
    h_baseline: float,
    delta_h: float,
) -> float:
    """Expansion of the sustainable arrival rate from a hit-rate gap."""
    if delta_h < 0:
        raise AnalyticsDomainError("delta_h must be >= 0")
    if h_baseline + delta_h >= 1.0:
        raise AnalyticsDomainError("h_baseline + delta_h must be < 1")
    return (
        (mean_wave_size * prefill_rate_eff / prompt_tokens)
        * delta_h
        / ((1.0 - h_baseline - delta_h) * (1.0 - h_baseline))
    )


def reuse_gap_to_full(delta_h_reuse: float, reuse_tokens: float, prompt_tokens: float) -> float:
    """Convert a reusable-only hit-rate gap to the full-prompt token gap."""
    if not 0.0 <= delta_h_reuse <= 1.0:
        raise AnalyticsDomainError("delta_h_reuse must be in [0, 1]")
    if reuse_tokens > prompt_tokens:
        raise AnalyticsDomainError("reuse_tokens must be <= prompt_tokens")
    return delta_h_reuse * reuse_tokens / prompt_tokens


def admission_wait(mu: float, queue: QueueParams) -> float:
    """Expected admission wait: half-window floor plus the M/G/1 queue term."""
    rho = queue.arrival_rate / mu
    if rho >= 1.0:
        raise AnalyticsDomainError(f"unstable: rho = {rho:.4f} >= 1")
    return (
        0.5 * queue.window_s
        + queue.wait_floor_s
        + (rho / (1.0 - rho)) * ((1.0 + queue.service_cv2) / 2.0) / mu
    )


def crossover(mu: float, mean_wave_size: float, service_cv2: float = 1.0) -> tuple[float, float]:
    """Utilization and arrival rate where queueing delay overtakes prefill time.

    rho* = 2*M / (1 + c_s^2 + 2*M); lambda* = rho* * mu.
    """
    if mean_wave_size < 1:
        raise AnalyticsDomainError("mean_wave_size must be >= 1")
    rho_star = 2.0 * mean_wave_size / (1.0 + service_cv2 + 2.0 * mean_wave_size)
    return rho_star, rho_star * mu


def calibrate_prefill_rate(
    mu: float, mean_wave_size: float, prompt_tokens: float, hit_rate: float
) -> float:
    """Solve the service-rate identity for the effective per-request prefill rate."""
    if not 0.0 <= hit_rate < 1.0:
        raise AnalyticsDomainError("hit_rate must be in [0, 1)")
    return mu * prompt_tokens * (1.0 - hit_rate) / mean_wave_size


@dataclass(frozen=True)
class SweepPoint:
    offered_qps: float
    throughput: float
    p99_ttft: float
    hit_rate: float
    mean_wave_size: float


@dataclass
class KneeReport:
    points: list[SweepPoint]
    analytic_mu: float
    knee_offered: float | None
    plateau_throughput: float
    mu_relative_error: float

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(
            f"{'offered':>9} {'achieved':>9} {'p99_ttft':>9} {'hit':>7} {'M_bar':>7}\n"
        )
        for pt in self.points:
            buf.write(
                f"{pt.offered_qps:9.2f} {pt.throughput:9.2f} {pt.p99_ttft:9.3f} "
                f"{pt.hit_rate:7.4f} {pt.mean_wave_size:7.2f}\n"
            )
        buf.write(f"analytic mu: {self.analytic_mu:.3f} req/s\n")
        knee = "none" if self.knee_offered is None else f"{self.knee_offered:.2f} QPS"
        buf.write(f"empirical knee: {knee}\n")
        buf.write(
            f"plateau throughput: {self.plateau_throughput:.3f} req/s "
            f"(rel. error vs mu: {self.mu_relative_error:.3%})\n"
        )
        return buf.getvalue()

    def to_csv(self) -> str:
        lines = ["offered_qps,throughput,p99_ttft,hit_rate,mean_wave_size"]
        for pt in self.points:
            lines.append(
                f"{pt.offered_qps!r},{pt.throughput!r},{pt.p99_ttft!r},"
                f"{pt.hit_rate!r},{pt.mean_wave_size!r}"
            )
        return "\n".join(lines) + "\n"


def knee_report(
    sweep: Sequence[SweepPoint],
    prompt_tokens: float,
    prefill_rate_eff: float | None = None,
) -> KneeReport:
    """Locate the empirical service knee and compare against the analytic rate.

    The analytic mu uses the highest-load point's measured hit rate and wave
    size.  When ``prefill_rate_eff`` is omitted it is calibrated from that
    point's achieved throughput (self-consistency mode: the analytic mu then
    equals the top point's throughput and the reported error measures how flat
    the post-knee plateau is).
    """
    if len(sweep) < 3:
        raise AnalyticsDomainError("knee report requires >= 3 load points")
    points = sorted(sweep, key=lambda p: p.offered_qps)
    top = points[-1]
    if prefill_rate_eff is None:
        prefill_rate_eff = calibrate_prefill_rate(
            top.throughput, top.mean_wave_size, prompt_tokens, top.hit_rate
        )
    params = PolicyParams(
        prompt_tokens=prompt_tokens,
        reuse_tokens=0.0,
        mean_wave_size=top.mean_wave_size,
        prefill_rate_eff=prefill_rate_eff,
        hit_rate=top.hit_rate,
    )
    _, mu = mean_service(params)
    knee_offered = None
    for pt in points:
        if pt.throughput < 0.95 * pt.offered_qps:
            knee_offered = pt.offered_qps
            break
    if knee_offered is not None:
        post = [pt.throughput for pt in points if pt.offered_qps >= knee_offered]
    else:
        post = [points[-1].throughput]
    plateau = sum(post) / len(post)
    return KneeReport(
        points=points,
        analytic_mu=mu,
        knee_offered=knee_offered,
        plateau_throughput=plateau,
        mu_relative_error=abs(mu - plateau) / mu,
    )
