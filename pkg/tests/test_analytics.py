"""Closed-form analytics tests: service rates, gaps, waits, crossover, knee."""

from __future__ import annotations

import numpy as np
import pytest

from prefixsim.analytics import (
    AnalyticsDomainError,
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
    service_ratio,
    stability_expansion,
)


def params(L=1000.0, reuse=800.0, M=10.0, R=500.0, h=0.5) -> PolicyParams:
    return PolicyParams(
        prompt_tokens=L, reuse_tokens=reuse, mean_wave_size=M, prefill_rate_eff=R, hit_rate=h
    )


class TestMeanService:
    def test_simple_values(self):
        s, mu = mean_service(params())
        # 1000 * 0.5 / 500 = 1 s per wave; 10 completions per wave
        assert s == 1.0
        assert mu == 10.0

    def test_zero_hit_rate(self):
        s, mu = mean_service(params(h=0.0))
        assert s == 2.0
        assert mu == 5.0

    def test_hit_rate_one_rejected(self):
        with pytest.raises(AnalyticsDomainError):
            params(h=1.0)

    def test_reuse_exceeding_prompt_rejected(self):
        with pytest.raises(AnalyticsDomainError):
            params(reuse=2000.0)


class TestServiceRatio:
    def test_identity(self):
        p = params()
        assert service_ratio(p, p) == 1.0

    def test_matches_mu_quotient(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p0 = params(
                L=float(rng.uniform(100, 5000)),
                reuse=0.0,
                M=float(rng.uniform(1, 64)),
                R=float(rng.uniform(100, 20000)),
                h=float(rng.uniform(0, 0.95)),
            )
            p1 = params(
                L=float(rng.uniform(100, 5000)),
                reuse=0.0,
                M=float(rng.uniform(1, 64)),
                R=float(rng.uniform(100, 20000)),
                h=float(rng.uniform(0, 0.95)),
            )
            mu0 = mean_service(p0)[1]
            mu1 = mean_service(p1)[1]
            assert service_ratio(p1, p0) == pytest.approx(mu1 / mu0, rel=1e-12)


class TestServiceGap:
    def test_zero_gap(self):
        assert service_gap(10.0, 0.3, 0.0) == 0.0

    def test_simple_value(self):
        # mu=10, h0=0.4, dh=0.2: 10 * 0.2 / 0.4 = 5
        assert service_gap(10.0, 0.4, 0.2) == pytest.approx(5.0)

    def test_negative_delta_rejected(self):
        with pytest.raises(AnalyticsDomainError):
            service_gap(10.0, 0.4, -0.1)

    def test_saturating_hit_rate_rejected(self):
        with pytest.raises(AnalyticsDomainError):
            service_gap(10.0, 0.6, 0.4)

    def test_property_suite(self):
        # gap == direct mu difference; >= 0; == 0 iff dh == 0; and the
        # stability expansion equals the gap composed with mean_service
        rng = np.random.default_rng(42)
        n = 10_000
        L = rng.uniform(64, 8192, size=n)
        M = rng.uniform(1, 64, size=n)
        R = rng.uniform(50, 50_000, size=n)
        h0 = rng.uniform(0.0, 0.98, size=n)
        dh = rng.uniform(0.0, 1.0, size=n) * (0.999 - h0 - 1e-9)
        mu0 = M * R / (L * (1.0 - h0))
        mu1 = M * R / (L * (1.0 - h0 - dh))
        for i in range(n):
            gap = service_gap(mu0[i], h0[i], dh[i])
            direct = mu1[i] - mu0[i]
            assert gap == pytest.approx(direct, rel=1e-12, abs=1e-12)
            assert gap >= 0.0
            assert (gap == 0.0) == (dh[i] == 0.0)
            exp = stability_expansion(M[i], R[i], L[i], h0[i], dh[i])
            assert exp == pytest.approx(direct, rel=1e-12, abs=1e-12)


class TestReuseGap:
    def test_scaling(self):
        assert reuse_gap_to_full(0.5, 800.0, 1000.0) == pytest.approx(0.4)

    def test_degenerate_no_reuse(self):
        assert reuse_gap_to_full(0.9, 0.0, 1000.0) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(AnalyticsDomainError):
            reuse_gap_to_full(1.5, 800.0, 1000.0)


class TestAdmissionWait:
    def test_simple_mm1_value(self):
        # rho=0.5, c_s^2=1: wait = 0.5*window + (0.5/0.5)*1/mu = 0.025 + 0.1
        wait = admission_wait(10.0, QueueParams(arrival_rate=5.0, window_s=0.05))
        assert wait == pytest.approx(0.125)

    def test_deterministic_service_halves_queue_term(self):
        w_det = admission_wait(10.0, QueueParams(arrival_rate=5.0, service_cv2=0.0, window_s=0.0))
        w_exp = admission_wait(10.0, QueueParams(arrival_rate=5.0, service_cv2=1.0, window_s=0.0))
        assert w_det == pytest.approx(0.5 * w_exp)

    def test_monotone_in_load(self):
        waits = [
            admission_wait(10.0, QueueParams(arrival_rate=lam))
            for lam in np.linspace(0.5, 9.5, 30)
        ]
        assert all(b > a for a, b in zip(waits, waits[1:]))

    def test_unstable_rejected(self):
        with pytest.raises(AnalyticsDomainError):
            admission_wait(10.0, QueueParams(arrival_rate=10.0))


class TestCrossover:
    def test_reference_operating_points(self):
        _, lam1 = crossover(50.1, 33.1, 1.0)
        assert lam1 == pytest.approx(48.6, abs=0.1)
        _, lam2 = crossover(14.5, 9.75, 1.0)
        assert lam2 == pytest.approx(13.1, abs=0.1)

    def test_unit_wave_half_utilization(self):
        rho, lam = crossover(10.0, 1.0, 1.0)
        assert rho == 0.5
        assert lam == 5.0

    def test_large_wave_limit_approaches_one(self):
        rho, _ = crossover(10.0, 1e6, 1.0)
        assert 1.0 - rho < 1e-5

    def test_monotone_in_wave_size(self):
        rhos = [crossover(10.0, m)[0] for m in (1, 2, 5, 10, 50)]
        assert all(b > a for a, b in zip(rhos, rhos[1:]))

    def test_crossover_point_balances_terms(self):
        # at lambda*, the queue term equals the mean wave service time
        mu, M = 20.0, 8.0
        _, lam = crossover(mu, M, 1.0)
        rho = lam / mu
        queue_term = (rho / (1 - rho)) / mu  # c_s^2 = 1
        s_wave = M / mu
        assert queue_term == pytest.approx(s_wave, rel=1e-12)


class TestCalibration:
    def test_reference_point(self):
        # L=768, M=33.1, h=0.474, mu=49.8 -> about 6.1e2 tokens/s/request
        rate = calibrate_prefill_rate(49.8, 33.1, 768.0, 0.474)
        assert rate == pytest.approx(610.0, rel=0.05)

    def test_fixed_point_with_mean_service(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            L = float(rng.uniform(100, 4000))
            M = float(rng.uniform(1, 64))
            h = float(rng.uniform(0, 0.95))
            mu = float(rng.uniform(1, 100))
            R = calibrate_prefill_rate(mu, M, L, h)
            p = params(L=L, reuse=0.0, M=M, R=R, h=h)
            assert mean_service(p)[1] == pytest.approx(mu, rel=1e-12)


class TestKneeReport:
    def _points(self):
        return [
            SweepPoint(10.0, 9.9, 0.3, 0.4, 8.0),
            SweepPoint(15.0, 14.8, 0.6, 0.42, 8.0),
            SweepPoint(20.0, 16.0, 5.0, 0.45, 8.0),
            SweepPoint(25.0, 16.2, 9.0, 0.46, 8.0),
        ]

    def test_knee_located_at_first_shortfall(self):
        report = knee_report(self._points(), prompt_tokens=768.0)
        assert report.knee_offered == 20.0
        assert report.plateau_throughput == pytest.approx(16.1)

    def test_self_consistency_mode_pins_mu_to_top_point(self):
        report = knee_report(self._points(), prompt_tokens=768.0)
        assert report.analytic_mu == pytest.approx(16.2)
        assert report.mu_relative_error == pytest.approx(abs(16.2 - 16.1) / 16.2)

    def test_explicit_rate_used(self):
        pts = self._points()
        report = knee_report(pts, prompt_tokens=768.0, prefill_rate_eff=300.0)
        expected_mu = 8.0 * 300.0 / (768.0 * (1 - 0.46))
        assert report.analytic_mu == pytest.approx(expected_mu)

    def test_no_knee_when_throughput_tracks_offered(self):
        pts = [
            SweepPoint(10.0, 9.9, 0.3, 0.4, 8.0),
            SweepPoint(15.0, 14.8, 0.4, 0.4, 8.0),
            SweepPoint(20.0, 19.6, 0.5, 0.4, 8.0),
        ]
        report = knee_report(pts, prompt_tokens=768.0)
        assert report.knee_offered is None

    def test_requires_three_points(self):
        with pytest.raises(AnalyticsDomainError):
            knee_report(self._points()[:2], prompt_tokens=768.0)

    def test_text_and_csv_render(self):
        report = knee_report(self._points(), prompt_tokens=768.0)
        text = report.to_text()
        assert "analytic mu" in text and "empirical knee" in text
        csv = report.to_csv()
        assert csv.splitlines()[0] == "offered_qps,throughput,p99_ttft,hit_rate,mean_wave_size"
        assert len(csv.splitlines()) == 5
