from types import SimpleNamespace

import numpy as np
import pytest

from toomsim.dynamics import Params
from toomsim.observables import simulate_observables
from toomsim.stats import (
    Estimate,
    IncrementSeries,
    autocov_decay,
    batch_means,
    clt_moment_test,
    estimate_diffusion_direct,
    estimate_green_kubo,
    variance_ratio,
)
from toomsim.tagged import drift_formula, simulate_tagged


class TestBatchMeans:
    def test_constant(self):
        m, se = batch_means(np.full(100, 3.0))
        assert m == 3.0 and se == 0.0

    def test_iid_normal(self):
        x = np.random.default_rng(0).standard_normal(1 << 16)
        _, se = batch_means(x, 16)
        assert abs(se * np.sqrt(x.size) - 1) < 0.3

    def test_shift_moves_only_the_mean(self):
        x = np.random.default_rng(1).standard_normal(4096)
        m0, se0 = batch_means(x)
        m1, se1 = batch_means(x + 5.0)
        assert m1 == pytest.approx(m0 + 5.0)
        assert se1 == pytest.approx(se0)

    def test_errors(self):
        with pytest.raises(ValueError):
            batch_means(np.ones(20), 16)
        with pytest.raises(ValueError):
            batch_means(np.ones(100), 4)


def brownian_samples(n, dt, rng, sigma2=1.0, drift=0.0):
    steps = rng.normal(drift * dt, np.sqrt(sigma2 * dt), n)
    return np.cumsum(steps)


class TestDirect:
    def test_standard_brownian(self):
        ser = IncrementSeries.from_samples(brownian_samples(20000, 1.0, np.random.default_rng(2)), 1.0, 1.0)
        est = estimate_diffusion_direct(ser)
        lo, hi = est.ci
        assert lo < 1.0 < hi and est.relative_ci < 0.05

    def test_drift_is_removed(self):
        ser = IncrementSeries.from_samples(brownian_samples(20000, 0.5, np.random.default_rng(3), 2.0, 7.0), 0.5, 5.0)
        est = estimate_diffusion_direct(ser)
        assert abs(est.value - 2.0) < 3 * est.se

    def test_deterministic_linear(self):
        ser = IncrementSeries.from_samples(3.0 * np.arange(1, 1001), 1.0, 2.0)
        assert estimate_diffusion_direct(ser).value == pytest.approx(0.0, abs=1e-12)

    def test_jackknife_se_close_to_gaussian_theory(self):
        ser = IncrementSeries(1.0, np.random.default_rng(4).standard_normal(10000))
        est = estimate_diffusion_direct(ser)
        assert est.se == pytest.approx(np.sqrt(2 / 10000), rel=0.1)

    def test_insufficient_data(self):
        with pytest.raises(ValueError):
            estimate_diffusion_direct(IncrementSeries(1.0, np.ones(50)))

    def test_window_must_fit_grid(self):
        with pytest.raises(ValueError):
            IncrementSeries.from_samples(np.arange(10.0), 1.0, 2.5)

    def test_pooling(self):
        a = IncrementSeries(2.0, np.ones(3))
        b = IncrementSeries(2.0, np.zeros(2))
        assert IncrementSeries.pooled([a, b]).count == 5
        with pytest.raises(ValueError):
            IncrementSeries.pooled([a, IncrementSeries(1.0, np.ones(1))])


class TestVarianceRatio:
    def test_brownian_ratio_near_one(self):
        ser = IncrementSeries(1.0, np.random.default_rng(5).standard_normal(4000))
        r = variance_ratio(ser)
        assert abs(r.value - 1.0) < 3 * r.se and r.se < 0.03

    def test_detects_positive_correlation(self):
        z = np.random.default_rng(6).standard_normal(4001)
        r = variance_ratio(IncrementSeries(1.0, z[1:] + z[:-1]))
        assert r.value == pytest.approx(1.5, abs=0.05)


class TestMoments:
    def test_gaussian_passes(self):
        res = clt_moment_test(np.random.default_rng(7).standard_normal(5000))
        assert res.passed

    def test_exponential_fails_on_skewness(self):
        res = clt_moment_test(np.random.default_rng(8).exponential(size=5000))
        assert not res.skew_ok
        assert res.skewness == pytest.approx(2.0, abs=0.3)

    def test_heavy_tails_fail_on_kurtosis(self):
        res = clt_moment_test(np.random.default_rng(9).standard_t(5, 20000))
        assert not res.kurtosis_ok

    def test_se_scale(self):
        res = clt_moment_test(np.random.default_rng(10).standard_normal(10000))
        assert res.skewness_se == pytest.approx(np.sqrt(6 / 10000), rel=0.2)
        assert res.excess_kurtosis_se == pytest.approx(np.sqrt(24 / 10000), rel=0.3)

    def test_insufficient_data(self):
        with pytest.raises(ValueError):
            clt_moment_test(np.ones(999))


def modulated_poisson(n, dt, rates, flip, rng):
    """Jump counts of a Poisson process whose rate follows a two-state chain.

    The chain may flip at the end of each step; ``h`` at the end of step
    ``k`` is the rate of step ``k + 1``.
    """
    q = 1 - np.exp(-flip * dt)
    flips = rng.random(n + 1) < q
    state = np.cumsum(flips) % 2
    r = np.asarray(rates)[state]
    g = rng.poisson(r[:-1] * dt).astype(float)
    return SimpleNamespace(sample_dt=dt, drift_samples=r[1:], bin_jumps=g, bin_sq_jumps=g.copy()), q


class TestGreenKubo:
    def test_poisson_process(self):
        rng = np.random.default_rng(11)
        g = rng.poisson(0.1, 200000).astype(float)
        run = SimpleNamespace(sample_dt=0.1, drift_samples=np.ones(g.size), bin_jumps=g, bin_sq_jumps=g.copy())
        est = estimate_green_kubo(run, 50, rng=0)
        assert est.d2 == 0.0
        assert abs(est.green_kubo - 1.0) < 3 * est.se

    def test_modulated_poisson_matches_closed_form(self):
        rng = np.random.default_rng(12)
        dt, rates, flip = 0.05, (0.5, 2.5), 0.5
        run, q = modulated_poisson(4_000_000, dt, rates, flip, rng)
        var = ((rates[1] - rates[0]) / 2) ** 2
        exact = np.mean(rates) + 2 * dt * var * (1 - 2 * q) / (2 * q)
        est = estimate_green_kubo(run, 400, rng=0)
        assert est.truncated
        assert abs(est.green_kubo - exact) < max(3 * est.se, 0.02 * exact)
        # and the direct variance of the same path agrees with the closed form
        direct = estimate_diffusion_direct(IncrementSeries.from_samples(np.cumsum(run.bin_jumps), dt, 100.0))
        assert abs(direct.value - exact) < 3 * direct.se

    def test_tagged_d1_and_mean_drift(self):
        prm = Params(2048, 0.5, 1.0)
        runs = [simulate_tagged(prm, s, 2000.0, sample_dt=0.5) for s in range(4)]
        est = estimate_green_kubo(runs, 40, rng=1)
        # with lambda_minus = 0 every jump has size one, so d1 is the jump rate
        n_jumps = sum(r.n_jumps for r in runs)
        assert est.d1 == pytest.approx(n_jumps / (4 * 2000.0), rel=1e-9)
        assert abs(est.d1 - 2.0) < 0.05
        v = np.mean([r.velocity for r in runs])
        assert abs(est.drift - v) < 0.05
        assert abs(est.drift - drift_formula(prm)) < 0.05

    def test_rejects_short_batches(self):
        run = SimpleNamespace(sample_dt=1.0, drift_samples=np.ones(100), bin_jumps=np.ones(100), bin_sq_jumps=np.ones(100))
        with pytest.raises(ValueError):
            estimate_green_kubo(run, 10)

    def test_summary_keys(self):
        rng = np.random.default_rng(13)
        g = rng.poisson(0.1, 20000).astype(float)
        run = SimpleNamespace(sample_dt=0.1, drift_samples=np.ones(g.size), bin_jumps=g, bin_sq_jumps=g.copy())
        d = estimate_green_kubo(run, 20, rng=0).to_dict()
        for key in ("d1", "d2", "greenKubo", "se", "truncationLag", "reachedNoiseFloor"):
            assert key in d


class TestAutocov:
    def test_lag_zero_is_variance(self):
        f = np.random.default_rng(14).standard_normal(8000)
        curve = autocov_decay(f, f, [0, 1, 5], rng=0)
        assert curve.values[0] == pytest.approx(f.var())

    def test_against_constant_is_zero(self):
        f = np.random.default_rng(15).standard_normal(4000)
        curve = autocov_decay(f, np.full(f.size, 2.0), [0, 3, 10], rng=0)
        assert np.all(curve.values == 0)

    def test_ar1_decay_rate(self):
        rng = np.random.default_rng(16)
        phi, n = 0.8, 200000
        e = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = e[0]
        for k in range(1, n):
            x[k] = phi * x[k - 1] + e[k]
        curve = autocov_decay(x, x, np.arange(0, 10), rng=0)
        assert curve.log_fit_slope == pytest.approx(np.log(phi), abs=0.03)

    def test_spin_at_origin_decorrelates_by_lag_50(self):
        prm = Params(1024, 0.5, 1.0)
        run = simulate_observables(prm, 3, np.arange(1, 40001) * 0.5)
        # average spin at 0 over each half-unit bin
        f = np.diff(np.concatenate([[0.0], run.additive])) / 0.5
        curve = autocov_decay(f, f, [0, 100], rng=0)
        assert curve.values[0] > 0.5
        assert abs(curve.values[1]) < 3 * curve.boot_sd[1]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            autocov_decay(np.ones(10), np.ones(11), [0])


def test_estimate_interval():
    e = Estimate(2.0, 0.1)
    lo, hi = e.ci
    assert lo == pytest.approx(2.0 - 0.196, abs=1e-3) and hi == pytest.approx(2.196, abs=1e-3)
    assert e.relative_ci == pytest.approx(0.098, abs=1e-3)
    assert Estimate(0.0, 1.0).relative_ci == float("inf")
