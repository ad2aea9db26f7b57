"""Windowed query-aware scheduling: counters, front alignment, bucket dispatch.

Each round freezes the pending set, scores reusable segments from queued /
active / candidate-batch counters, groups requests by an order-sensitive
signature, and fills a hot lane by bucket score plus a FIFO cold lane as a
starvation guard.  The round exports per-request hints (signature, rank,
counter snapshots, anchor offsets) and the dispatch-batch priority map used by
cache retention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .workload import Request


@dataclass(frozen=True)
class PriorityWeights:
    w_g: float = 1.0
    w_a: float = 1e6
    w_n: float = 1e5


@dataclass(frozen=True)
class SchedulerConfig:
    window_s: float = 0.05
    dispatch_budget: int = 64
    cold_quota: int = 2
    front_width: int = 3
    signature_size: int = 1
    weights: PriorityWeights = field(default_factory=PriorityWeights)
    alpha_size: float = 1.0
    beta_util: float = 0.5

    def __post_init__(self) -> None:
        if self.cold_quota > self.dispatch_budget:
            raise ValueError("cold_quota must be <= dispatch_budget")
        if self.signature_size < 1:
            raise ValueError("signature_size must be >= 1")
        if self.front_width < self.signature_size:
            raise ValueError("front_width must be >= signature_size")


@dataclass
class SegmentCounters:
    g: dict[int, int]
    a: dict[int, int]
    n: dict[int, int]


@dataclass
class Bucket:
    signature: tuple[int, ...]
    members: list[Request]
    creation_order: int


@dataclass
class DispatchHint:
    signature: tuple[int, ...]
    rank: int
    counter_snapshot: dict[int, tuple[int, int, int]]
    anchor_offsets: list[int]
    aligned_skeleton: list[int]


@dataclass
class DispatchBatch:
    hot: list[Request]
    cold: list[Request]
    hints: dict[int, DispatchHint]
    priorities: dict[int, float]
    counters: SegmentCounters
    bucket_scores: dict[tuple[int, ...], float] = field(default_factory=dict)

    @property
    def members(self) -> list[Request]:
        return self.hot + self.cold


def count_segments(requests: Iterable[Request]) -> dict[int, int]:
    """Per-segment request counts; each request contributes once per distinct segment."""
    counts: dict[int, int] = {}
    for req in requests:
        for r in set(req.skeleton):
            counts[r] = counts.get(r, 0) + 1
    return counts


def segment_priority(
    counters: SegmentCounters,
    weights: PriorityWeights,
    segment: int,
    reference_batch: Iterable[Request] | None = None,
) -> float:
    """w_g*g + w_a*a + w_n*n, with n counted against the reference batch."""
    n = 0
    if reference_batch is not None:
        n = sum(1 for req in reference_batch if segment in set(req.skeleton))
    return (
        weights.w_g * counters.g.get(segment, 0)
        + weights.w_a * counters.a.get(segment, 0)
        + weights.w_n * n
    )


def front_align(
    skeleton: Sequence[int],
    priorities: Callable[[int], float] | Mapping[int, float],
    f_front: int,
    reorderable: bool,
) -> list[int]:
    """Move the top-f_front segments by priority to the front.

    The fronted segments appear in descending priority order (ties by lower
    segment ID); the remaining segments keep their relative order.  Identity
    when the region is not reorderable.
    """
    if not reorderable or not skeleton:
        return list(skeleton)
    pri = priorities if callable(priorities) else lambda r: priorities.get(r, 0.0)
    ranked = sorted(range(len(skeleton)), key=lambda i: (-pri(skeleton[i]), skeleton[i]))
    front_idx = ranked[:f_front]
    front = [skeleton[i] for i in front_idx]
    chosen = set(front_idx)
    rest = [skeleton[i] for i in range(len(skeleton)) if i not in chosen]
    return front + rest


def make_signature(
    aligned: Sequence[int],
    priorities: Callable[[int], float] | Mapping[int, float],
    kappa: int,
) -> tuple[int, ...]:
    """Order-sensitive signature: top-kappa segments, emitted in service order."""
    if not aligned:
        return ()
    pri = priorities if callable(priorities) else lambda r: priorities.get(r, 0.0)
    ranked = sorted(range(len(aligned)), key=lambda i: (-pri(aligned[i]), aligned[i]))
    chosen = set(ranked[:kappa])
    return tuple(aligned[i] for i in range(len(aligned)) if i in chosen)


def bucket_score(
    bucket: Bucket,
    counters: SegmentCounters,
    weights: PriorityWeights,
    provisional_hot_batch: Sequence[Request],
    alpha_size: float = 1.0,
    beta_util: float = 0.5,
) -> float:
    """alpha*|T[b]| + beta*U(b) with U the mean member-segment priority."""
    if not bucket.members:
        raise ValueError("bucket score undefined for an empty bucket")
    segs: set[int] = set()
    for req in bucket.members:
        segs.update(req.skeleton)
    n_b = count_segments(provisional_hot_batch)
    counters_b = SegmentCounters(g=counters.g, a=counters.a, n=n_b)
    if segs:
        util = sum(
            weights.w_g * counters.g.get(r, 0)
            + weights.w_a * counters.a.get(r, 0)
            + weights.w_n * n_b.get(r, 0)
            for r in segs
        ) / len(segs)
    else:
        util = 0.0
    return alpha_size * len(bucket.members) + beta_util * util


def export_anchor_offsets(request: Request) -> list[int]:
    """Serialized-prompt offsets at end-of-system, each segment end, suffix end.

    Strictly increasing; the trailing offset equals the path length.
    """
    m = len(request.skeleton)
    chunk = request.reuse_len // m if m else 0
    offsets = [request.sys_len]
    for j in range(1, m + 1):
        offsets.append(request.sys_len + j * chunk)
    offsets.append(request.sys_len + request.reuse_len + request.suffix_len)
    out: list[int] = []
    for off in offsets:
        if off > 0 and (not out or off > out[-1]):
            out.append(off)
    return out


def schedule_round(
    pending: Sequence[Request],
    active_set: Iterable[Request],
    config: SchedulerConfig,
    now: float,
) -> DispatchBatch:
    """One scheduling round over a frozen pending snapshot.

    Counters -> base priorities -> front alignment -> signatures -> buckets ->
    bucket scores -> hot-lane scan -> FIFO cold lane -> dispatch priorities and
    exported hints.  Deterministic given (pending, active_set, config).
    """
    w = config.weights
    g = count_segments(pending)
    a = count_segments(active_set)

    def pri0(r: int) -> float:
        return w.w_g * g.get(r, 0) + w.w_a * a.get(r, 0)

    buckets: dict[tuple[int, ...], Bucket] = {}
    aligned_by_id: dict[int, list[int]] = {}
    rank_by_id: dict[int, int] = {}
    for req in pending:
        aligned = front_align(req.skeleton, pri0, config.front_width, req.reorderable)
        aligned_by_id[req.id] = aligned
        sig = make_signature(aligned, pri0, config.signature_size)
        bucket = buckets.get(sig)
        if bucket is None:
            bucket = Bucket(signature=sig, members=[], creation_order=len(buckets))
            buckets[sig] = bucket
        rank_by_id[req.id] = len(bucket.members)
        bucket.members.append(req)

    hot_capacity = config.dispatch_budget - config.cold_quota
    counters = SegmentCounters(g=g, a=a, n={})
    scores: dict[tuple[int, ...], float] = {}
    for sig, bucket in buckets.items():
        provisional = bucket.members[:hot_capacity]
        scores[sig] = bucket_score(
            bucket, counters, w, provisional, config.alpha_size, config.beta_util
        )

    ordered = sorted(buckets.values(), key=lambda b: (-scores[b.signature], b.creation_order))
    hot: list[Request] = []
    for bucket in ordered:
        if len(hot) >= hot_capacity:
            break
        take = hot_capacity - len(hot)
        hot.extend(bucket.members[:take])

    selected = {req.id for req in hot}
    leftovers = [req for req in pending if req.id not in selected]
    leftovers.sort(key=lambda r: (r.arrival_time, r.id))
    cold = leftovers[: config.cold_quota]

    dispatch = hot + cold
    n_disp = count_segments(dispatch)
    counters.n = n_disp
    domain = set(g) | set(a) | set(n_disp)
    priorities = {r: pri0(r) + w.w_n * n_disp.get(r, 0) for r in sorted(domain)}

    hints: dict[int, DispatchHint] = {}
    for req in dispatch:
        aligned = aligned_by_id[req.id]
        snapshot = {
            r: (g.get(r, 0), a.get(r, 0), n_disp.get(r, 0)) for r in set(req.skeleton)
        }
        hints[req.id] = DispatchHint(
            signature=make_signature(aligned, pri0, config.signature_size),
            rank=rank_by_id[req.id],
            counter_snapshot=snapshot,
            anchor_offsets=export_anchor_offsets(req),
            aligned_skeleton=aligned,
        )
    return DispatchBatch(
        hot=hot,
        cold=cold,
        hints=hints,
        priorities=priorities,
        counters=counters,
        bucket_scores=scores,
    )
