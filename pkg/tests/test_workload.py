"""Workload generator tests: Zipf marginals, arrival process, prefix structure."""

from __future__ import annotations

import io

import numpy as np
import pytest

from prefixsim.workload import (
    Request,
    SegmentCatalog,
    Trace,
    TraceFormatError,
    WorkloadConfig,
    WorkloadConfigError,
    generate_trace,
    load_trace,
    sample_request,
    save_trace,
    serialize_skeleton,
    serialize_tokens,
    zipf_sample,
    zipf_sample_many,
)


def _zipf_pmf(n: int, alpha: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-alpha)
    return w / w.sum()


def _lcp(a, b) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


CATALOG = SegmentCatalog(
    num_segments=981, chunk_tokens=128, hot_set=tuple(range(20)), sys_prefix_tokens=28
)
CONFIG = WorkloadConfig(
    qps=40.0, num_requests=256, k=5, r_hot=0.7, zipf_alpha=1.2, suffix_tokens=100, seed=3
)


class TestZipf:
    def test_two_ranks_alpha_one(self):
        # p(0) = 1/(1 + 1/2) = 2/3, p(1) = 1/3
        rng = np.random.default_rng(0)
        draws = zipf_sample_many(rng, 2, 1.0, 200_000)
        frac0 = np.mean(draws == 0)
        assert abs(frac0 - 2.0 / 3.0) < 0.005

    def test_single_rank_degenerate(self):
        rng = np.random.default_rng(0)
        assert all(zipf_sample(rng, 1, 1.2) == 0 for _ in range(10))

    def test_marginals_n20_alpha12(self):
        rng = np.random.default_rng(7)
        n, alpha = 20, 1.2
        draws = zipf_sample_many(rng, n, alpha, 1_000_000)
        counts = np.bincount(draws, minlength=n) / draws.size
        pmf = _zipf_pmf(n, alpha)
        assert abs(counts[0] - pmf[0]) < 0.01
        assert np.all(np.abs(counts[1:] - pmf[1:]) < 0.005)

    def test_scalar_matches_vector_distribution(self):
        rng = np.random.default_rng(11)
        draws = np.array([zipf_sample(rng, 5, 1.2) for _ in range(50_000)])
        pmf = _zipf_pmf(5, 1.2)
        counts = np.bincount(draws, minlength=5) / draws.size
        assert np.all(np.abs(counts - pmf) < 0.01)

    def test_rejects_empty_support(self):
        rng = np.random.default_rng(0)
        with pytest.raises(WorkloadConfigError):
            zipf_sample(rng, 0, 1.2)


class TestArrivals:
    def test_interarrival_mean(self):
        config = WorkloadConfig(
            qps=50.0, num_requests=20_000, k=1, r_hot=1.0, zipf_alpha=1.2, seed=5
        )
        catalog = SegmentCatalog(num_segments=10, chunk_tokens=8, hot_set=(0, 1))
        trace = generate_trace(config, catalog)
        arrivals = np.array([r.arrival_time for r in trace.requests])
        gaps = np.diff(np.concatenate([[0.0], arrivals]))
        assert abs(gaps.mean() - 0.02) < 0.002

    def test_counts_roughly_poisson(self):
        # index of dispersion of per-second counts should be near 1
        config = WorkloadConfig(
            qps=50.0, num_requests=20_000, k=1, r_hot=1.0, zipf_alpha=1.2, seed=5
        )
        catalog = SegmentCatalog(num_segments=10, chunk_tokens=8, hot_set=(0, 1))
        trace = generate_trace(config, catalog)
        arrivals = np.array([r.arrival_time for r in trace.requests])
        counts = np.bincount(arrivals[:-200].astype(int))
        ratio = counts.var() / counts.mean()
        assert 0.7 < ratio < 1.3

    def test_arrivals_strictly_increasing(self):
        trace = generate_trace(CONFIG, CATALOG)
        arrivals = [r.arrival_time for r in trace.requests]
        assert all(b > a for a, b in zip(arrivals, arrivals[1:]))


class TestSkeletons:
    def test_hot_fraction(self):
        config = WorkloadConfig(
            qps=40.0, num_requests=5000, k=5, r_hot=0.7, zipf_alpha=1.2, seed=9
        )
        trace = generate_trace(config, CATALOG)
        hot = set(CATALOG.hot_set)
        frac = sum(r.skeleton[0] in hot for r in trace.requests) / len(trace.requests)
        assert abs(frac - 0.7) < 0.03

    def test_cold_requests_avoid_hot_pool(self):
        config = WorkloadConfig(
            qps=40.0, num_requests=2000, k=5, r_hot=0.0, zipf_alpha=1.2, seed=2
        )
        trace = generate_trace(config, CATALOG)
        hot = set(CATALOG.hot_set)
        for r in trace.requests:
            assert not hot.intersection(r.skeleton)

    def test_no_duplicate_segments(self):
        trace = generate_trace(CONFIG, CATALOG)
        for r in trace.requests:
            assert len(set(r.skeleton)) == len(r.skeleton) == CONFIG.k

    def test_k_exceeding_cold_pool_rejected(self):
        catalog = SegmentCatalog(num_segments=6, chunk_tokens=8, hot_set=(0, 1, 2, 3))
        config = WorkloadConfig(qps=1.0, num_requests=1, k=3, r_hot=0.5, zipf_alpha=1.0)
        with pytest.raises(WorkloadConfigError):
            generate_trace(config, catalog)


class TestTokenPaths:
    def test_lengths(self):
        trace = generate_trace(CONFIG, CATALOG)
        for r in trace.requests:
            assert r.sys_len == 28
            assert r.reuse_len == 5 * 128
            assert r.suffix_len == 100
            assert len(r.token_path) == r.path_len == 28 + 640 + 100

    def test_shared_skeleton_prefix_gives_token_lcp(self):
        catalog = SegmentCatalog(num_segments=5, chunk_tokens=4, hot_set=(0,), sys_prefix_tokens=2)
        p1 = serialize_skeleton([0, 1], catalog, request_id=1, suffix_tokens=3)
        p2 = serialize_skeleton([0, 2], catalog, request_id=2, suffix_tokens=3)
        p3 = serialize_skeleton([1, 0], catalog, request_id=3, suffix_tokens=3)
        assert _lcp(p1, p2) == 2 + 4  # sys prefix + shared first segment
        assert _lcp(p1, p3) == 2  # sys prefix only
        assert _lcp(p2, p3) == 2

    def test_identical_skeletons_share_everything_but_suffix(self):
        catalog = SegmentCatalog(num_segments=5, chunk_tokens=4, hot_set=(0,), sys_prefix_tokens=2)
        p1 = serialize_skeleton([0, 1], catalog, request_id=1, suffix_tokens=3)
        p2 = serialize_skeleton([0, 1], catalog, request_id=2, suffix_tokens=3)
        assert _lcp(p1, p2) == 2 + 8
        assert p1[-3:] != p2[-3:]

    def test_suffixes_disjoint_across_requests(self):
        trace = generate_trace(CONFIG, CATALOG)
        suffixes = [tuple(r.token_path[-r.suffix_len :]) for r in trace.requests[:50]]
        flat = [t for s in suffixes for t in s]
        assert len(set(flat)) == len(flat)

    def test_serialize_tokens_reorder(self):
        catalog = SegmentCatalog(num_segments=5, chunk_tokens=4, hot_set=(0,), sys_prefix_tokens=2)
        req = Request(
            id=7,
            arrival_time=0.0,
            skeleton=[1, 3],
            reorderable=True,
            token_path=serialize_skeleton([1, 3], catalog, 7, 3),
            sys_len=2,
            reuse_len=8,
            suffix_len=3,
        )
        swapped = serialize_tokens(req, catalog, skeleton=[3, 1])
        direct = serialize_skeleton([3, 1], catalog, 7, 3)
        assert swapped == direct
        assert swapped != req.token_path


class TestDeterminism:
    def test_same_seed_same_trace(self):
        t1 = generate_trace(CONFIG, CATALOG)
        t2 = generate_trace(CONFIG, CATALOG)
        assert [(r.arrival_time, r.skeleton) for r in t1.requests] == [
            (r.arrival_time, r.skeleton) for r in t2.requests
        ]

    def test_different_seed_differs(self):
        other = WorkloadConfig(
            qps=40.0, num_requests=256, k=5, r_hot=0.7, zipf_alpha=1.2,
            suffix_tokens=100, seed=4,
        )
        t1 = generate_trace(CONFIG, CATALOG)
        t2 = generate_trace(other, CATALOG)
        assert [r.skeleton for r in t1.requests] != [r.skeleton for r in t2.requests]


class TestTraceIO:
    def test_round_trip(self):
        trace = generate_trace(CONFIG, CATALOG)
        buf = io.StringIO()
        save_trace(trace, buf)
        buf.seek(0)
        loaded = load_trace(buf)
        assert loaded.catalog == trace.catalog
        assert len(loaded.requests) == len(trace.requests)
        for a, b in zip(trace.requests, loaded.requests):
            assert a.id == b.id
            assert a.arrival_time == b.arrival_time
            assert a.skeleton == b.skeleton
            assert a.token_path == b.token_path

    def test_empty_file(self):
        with pytest.raises(TraceFormatError, match="empty"):
            load_trace(io.StringIO(""))

    def test_malformed_line_reports_lineno(self):
        trace = generate_trace(CONFIG, CATALOG)
        buf = io.StringIO()
        save_trace(trace, buf)
        lines = buf.getvalue().splitlines()
        lines[3] = "{not json"
        with pytest.raises(TraceFormatError, match="line 4"):
            load_trace(io.StringIO("\n".join(lines)))

    def test_non_monotone_arrivals_rejected(self):
        header = '{"catalog": {"num_segments": 4, "chunk_tokens": 2, "hot_set": [0], "sys_prefix_tokens": 0}}'
        r1 = '{"id": 0, "arrival_time": 1.0, "skeleton": [0], "suffix_tokens": 1, "reorderable": true}'
        r2 = '{"id": 1, "arrival_time": 0.5, "skeleton": [1], "suffix_tokens": 1, "reorderable": true}'
        with pytest.raises(TraceFormatError, match="decreases"):
            load_trace(io.StringIO("\n".join([header, r1, r2])))

    def test_duplicate_ids_rejected(self):
        header = '{"catalog": {"num_segments": 4, "chunk_tokens": 2, "hot_set": [0], "sys_prefix_tokens": 0}}'
        r1 = '{"id": 0, "arrival_time": 1.0, "skeleton": [0], "suffix_tokens": 1, "reorderable": true}'
        with pytest.raises(TraceFormatError, match="duplicate"):
            load_trace(io.StringIO("\n".join([header, r1, r1])))

    def test_unknown_segment_rejected(self):
        header = '{"catalog": {"num_segments": 4, "chunk_tokens": 2, "hot_set": [0], "sys_prefix_tokens": 0}}'
        r1 = '{"id": 0, "arrival_time": 1.0, "skeleton": [9], "suffix_tokens": 1, "reorderable": true}'
        with pytest.raises(TraceFormatError, match="unknown segment"):
            load_trace(io.StringIO("\n".join([header, r1])))


class TestValidation:
    def test_bad_qps(self):
        with pytest.raises(WorkloadConfigError):
            WorkloadConfig(qps=0.0, num_requests=1, k=1, r_hot=0.5, zipf_alpha=1.0)

    def test_bad_r_hot(self):
        with pytest.raises(WorkloadConfigError):
            WorkloadConfig(qps=1.0, num_requests=1, k=1, r_hot=1.5, zipf_alpha=1.0)

    def test_hot_set_out_of_range(self):
        with pytest.raises(WorkloadConfigError):
            SegmentCatalog(num_segments=4, chunk_tokens=2, hot_set=(5,))

    def test_duplicate_hot_ids(self):
        with pytest.raises(WorkloadConfigError):
            SegmentCatalog(num_segments=4, chunk_tokens=2, hot_set=(1, 1))
