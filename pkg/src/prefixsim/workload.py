"""Segmented-prompt trace generation: Poisson arrivals, Zipf hotspots, token paths.

Requests are skeletons of reusable-segment IDs plus a private suffix.  Token
paths are synthesized from disjoint integer ranges so that two requests share
an exact token prefix iff their skeletons agree on an ordered prefix -- no
tokenizer involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import IO, Iterator, Sequence

import numpy as np

# Disjoint token-ID ranges.  System tokens live in [0, SEGMENT_TOKEN_BASE),
# segment r occupies [SEGMENT_TOKEN_BASE + r*chunk, ...), and suffix tokens are
# keyed by request ID so they never collide across requests.
SEGMENT_TOKEN_BASE = 1_000_000
SUFFIX_TOKEN_BASE = 2_000_000_000


class WorkloadConfigError(ValueError):
    """Raised for inconsistent catalog/config combinations."""


class TraceFormatError(ValueError):
    """Raised when a trace file fails to parse or validate."""


@dataclass(frozen=True)
class SegmentCatalog:
    num_segments: int
    chunk_tokens: int
    hot_set: tuple[int, ...]
    sys_prefix_tokens: int = 0

    def __post_init__(self) -> None:
        if self.chunk_tokens < 1:
            raise WorkloadConfigError("chunk_tokens must be >= 1")
        if self.sys_prefix_tokens < 0:
            raise WorkloadConfigError("sys_prefix_tokens must be >= 0")
        hot = tuple(self.hot_set)
        if len(set(hot)) != len(hot):
            raise WorkloadConfigError("hot_set IDs must be distinct")
        if any(h < 0 or h >= self.num_segments for h in hot):
            raise WorkloadConfigError("hot_set IDs must be < num_segments")
        object.__setattr__(self, "hot_set", hot)


@dataclass(frozen=True)
class WorkloadConfig:
    qps: float
    num_requests: int
    k: int
    r_hot: float
    zipf_alpha: float
    suffix_tokens: int = 100
    reorderable: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.qps <= 0:
            raise WorkloadConfigError("qps must be > 0")
        if not 0.0 <= self.r_hot <= 1.0:
            raise WorkloadConfigError("r_hot must be in [0, 1]")
        if self.k < 1:
            raise WorkloadConfigError("k must be >= 1")
        if self.zipf_alpha <= 0:
            raise WorkloadConfigError("zipf_alpha must be > 0")
        if self.suffix_tokens < 0:
            raise WorkloadConfigError("suffix_tokens must be >= 0")


@dataclass
class Request:
    id: int
    arrival_time: float
    skeleton: list[int]
    reorderable: bool
    token_path: list[int]
    sys_len: int
    reuse_len: int
    suffix_len: int

    @property
    def path_len(self) -> int:
        return self.sys_len + self.reuse_len + self.suffix_len


@dataclass
class Trace:
    catalog: SegmentCatalog
    requests: list[Request]
    config: WorkloadConfig | None = None


@lru_cache(maxsize=128)
def _zipf_cdf(n: int, alpha: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    weights = ranks ** (-alpha)
    return np.cumsum(weights / weights.sum())


def zipf_sample(rng: np.random.Generator, n: int, alpha: float) -> int:
    """Draw a rank in [0, n) with P(i) proportional to (i+1)^-alpha."""
    if n < 1:
        raise WorkloadConfigError("zipf_sample requires n >= 1")
    cdf = _zipf_cdf(n, float(alpha))
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), n - 1)


def zipf_sample_many(
    rng: np.random.Generator, n: int, alpha: float, size: int
) -> np.ndarray:
    """Vectorized variant of zipf_sample for marginal checks."""
    if n < 1:
        raise WorkloadConfigError("zipf_sample requires n >= 1")
    cdf = _zipf_cdf(n, float(alpha))
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, n - 1)


def validate_pair(catalog: SegmentCatalog, config: WorkloadConfig) -> None:
    if config.k > catalog.num_segments:
        raise WorkloadConfigError("k exceeds catalog size")
    cold_pool = catalog.num_segments - len(catalog.hot_set)
    if config.r_hot < 1.0 and config.k > cold_pool:
        raise WorkloadConfigError(
            f"k={config.k} exceeds cold segment pool ({cold_pool})"
        )


def serialize_skeleton(
    skeleton: Sequence[int],
    catalog: SegmentCatalog,
    request_id: int,
    suffix_tokens: int,
) -> list[int]:
    """Build the exact token path: sys prefix, segment chunks, private suffix.

    Segment r always serializes to the same chunk, so requests sharing an
    ordered skeleton prefix share an exact token prefix.
    """
    chunk = catalog.chunk_tokens
    path = list(range(catalog.sys_prefix_tokens))
    for r in skeleton:
        base = SEGMENT_TOKEN_BASE + r * chunk
        path.extend(range(base, base + chunk))
    base = SUFFIX_TOKEN_BASE + request_id * suffix_tokens
    path.extend(range(base, base + suffix_tokens))
    return path


def serialize_tokens(
    request: Request,
    catalog: SegmentCatalog,
    skeleton: Sequence[int] | None = None,
) -> list[int]:
    """Token path for a request; pass ``skeleton`` to serialize a reordering."""
    order = request.skeleton if skeleton is None else skeleton
    return serialize_skeleton(order, catalog, request.id, request.suffix_len)


def sample_request(
    rng: np.random.Generator,
    catalog: SegmentCatalog,
    config: WorkloadConfig,
    request_id: int,
    arrival_time: float,
) -> Request:
    """Sample one request skeleton.

    Hot requests (probability r_hot) place one Zipf-sampled hot segment in
    slot 0 and fill the rest uniformly without replacement from the full
    catalog; cold requests draw all slots from the non-hot pool.
    """
    validate_pair(catalog, config)
    hot_set = catalog.hot_set
    n = catalog.num_segments
    is_hot = rng.random() < config.r_hot
    if is_hot:
        first = hot_set[zipf_sample(rng, len(hot_set), config.zipf_alpha)]
        skeleton = [first]
        seen = {first}
        while len(skeleton) < config.k:
            c = int(rng.integers(n))
            if c not in seen:
                seen.add(c)
                skeleton.append(c)
    else:
        hot = set(hot_set)
        skeleton = []
        seen = set()
        while len(skeleton) < config.k:
            c = int(rng.integers(n))
            if c in hot or c in seen:
                continue
            seen.add(c)
            skeleton.append(c)
    path = serialize_skeleton(skeleton, catalog, request_id, config.suffix_tokens)
    return Request(
        id=request_id,
        arrival_time=arrival_time,
        skeleton=skeleton,
        reorderable=config.reorderable,
        token_path=path,
        sys_len=catalog.sys_prefix_tokens,
        reuse_len=len(skeleton) * catalog.chunk_tokens,
        suffix_len=config.suffix_tokens,
    )


def generate_trace(config: WorkloadConfig, catalog: SegmentCatalog) -> Trace:
    """Generate a trace with i.i.d. exponential arrival gaps (rate qps).

    Fully determined by ``config.seed``.
    """
    validate_pair(catalog, config)
    rng = np.random.default_rng(config.seed)
    gaps = rng.exponential(1.0 / config.qps, size=config.num_requests)
    arrivals = np.cumsum(gaps)
    requests = [
        sample_request(rng, catalog, config, i, float(arrivals[i]))
        for i in range(config.num_requests)
    ]
    return Trace(catalog=catalog, requests=requests, config=config)


def save_trace(trace: Trace, stream: IO[str]) -> None:
    """Write JSON-lines: one catalog header, then one line per request.

    Token paths are re-derived on load, never stored.
    """
    cat = trace.catalog
    header = {
        "catalog": {
            "num_segments": cat.num_segments,
            "chunk_tokens": cat.chunk_tokens,
            "hot_set": list(cat.hot_set),
            "sys_prefix_tokens": cat.sys_prefix_tokens,
        }
    }
    stream.write(json.dumps(header) + "\n")
    for req in trace.requests:
        rec = {
            "id": req.id,
            "arrival_time": req.arrival_time,
            "skeleton": req.skeleton,
            "suffix_tokens": req.suffix_len,
            "reorderable": req.reorderable,
        }
        stream.write(json.dumps(rec) + "\n")


def load_trace(stream: IO[str]) -> Trace:
    """Parse a JSON-lines trace file; re-derives token paths from skeletons."""
    lines = iter(enumerate(stream, start=1))
    try:
        lineno, header_line = next(lines)
    except StopIteration:
        raise TraceFormatError("empty trace file") from None
    header = _parse_line(header_line, lineno)
    if "catalog" not in header:
        raise TraceFormatError(f"line {lineno}: missing catalog header")
    c = header["catalog"]
    catalog = SegmentCatalog(
        num_segments=c["num_segments"],
        chunk_tokens=c["chunk_tokens"],
        hot_set=tuple(c["hot_set"]),
        sys_prefix_tokens=c["sys_prefix_tokens"],
    )
    requests: list[Request] = []
    seen_ids: set[int] = set()
    last_arrival = float("-inf")
    for lineno, line in lines:
        if not line.strip():
            continue
        rec = _parse_line(line, lineno)
        try:
            rid = rec["id"]
            arrival = float(rec["arrival_time"])
            skeleton = list(rec["skeleton"])
            suffix = int(rec["suffix_tokens"])
            reorderable = bool(rec["reorderable"])
        except (KeyError, TypeError) as exc:
            raise TraceFormatError(f"line {lineno}: bad request record: {exc}") from exc
        if rid in seen_ids:
            raise TraceFormatError(f"line {lineno}: duplicate request id {rid}")
        seen_ids.add(rid)
        if arrival < last_arrival:
            raise TraceFormatError(
                f"line {lineno}: arrival_time {arrival} decreases below {last_arrival}"
            )
        last_arrival = arrival
        if any(s < 0 or s >= catalog.num_segments for s in skeleton):
            raise TraceFormatError(f"line {lineno}: skeleton references unknown segment")
        path = serialize_skeleton(skeleton, catalog, rid, suffix)
        requests.append(
            Request(
                id=rid,
                arrival_time=arrival,
                skeleton=skeleton,
                reorderable=reorderable,
                token_path=path,
                sys_len=catalog.sys_prefix_tokens,
                reuse_len=len(skeleton) * catalog.chunk_tokens,
                suffix_len=suffix,
            )
        )
    return Trace(catalog=catalog, requests=requests, config=None)


def _parse_line(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"line {lineno}: malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise TraceFormatError(f"line {lineno}: expected a JSON object")
    return obj
