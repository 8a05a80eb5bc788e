"""Estimators that turn trajectories into numbers with error bars.

The diffusion constant is estimated two independent ways:

* directly, as the variance of increments over long windows divided by the
  window length;
* by the Green-Kubo route, ``D = D1 + D2``, where ``D1`` is the mean
  squared jump per unit time and ``D2 = 2 int_0^inf C(s) ds`` integrates the
  correlation between a jump and the drift ``h`` a time ``s`` later,
  ``C(s) dt = E[(h(s) - v) dY(0)]``.

The correlation ``C`` must be taken against the jumps themselves, not
against ``h(0)``: for a jump process the two differ, and only the former
reproduces the long-time variance (checked exactly in
:func:`toomsim.oracle.exact_tagged_diffusion`).  The ``h``-``h``
autocovariance version is still reported as ``d2_hh`` for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import signal

__all__ = [
    "DiffusionEstimate",
    "Estimate",
    "IncrementSeries",
    "MomentTest",
    "autocov_decay",
    "batch_means",
    "clt_moment_test",
    "estimate_diffusion_direct",
    "estimate_green_kubo",
    "variance_ratio",
]

Z95 = 1.959963984540054


def batch_means(series, n_batches: int = 16):
    """Mean of a correlated stationary series and its batch-means standard error."""
    x = np.asarray(series, dtype=float)
    if n_batches < 8:
        raise ValueError("need at least 8 batches")
    if x.size < 2 * n_batches:
        raise ValueError(f"series of length {x.size} too short for {n_batches} batches")
    m = x.size // n_batches
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class IncrementSeries:
    window: float
    increments: np.ndarray

    @property
    def count(self) -> int:
        return int(self.increments.size)

    @classmethod
    def from_samples(cls, samples, sample_dt: float, window: float, start: float = 0.0) -> "IncrementSeries":
        """Increments over consecutive windows from grid samples.

        ``samples[k]`` is the value at time ``(k + 1) * sample_dt`` and the
        value at time 0 is ``start``.
        """
        m = int(round(window / sample_dt))
        if m < 1 or abs(m * sample_dt - window) > 1e-9 * window:
            raise ValueError("window must be a positive multiple of the sampling step")
        path = np.concatenate([[start], np.asarray(samples, dtype=float)])
        marks = path[::m]
        return cls(float(window), np.diff(marks))

    @classmethod
    def pooled(cls, parts: Sequence["IncrementSeries"]) -> "IncrementSeries":
        windows = {p.window for p in parts}
        if len(windows) != 1:
            raise ValueError("cannot pool increments over different windows")
        return cls(windows.pop(), np.concatenate([p.increments for p in parts]))


@dataclass
class Estimate:
    value: float
    se: float

    @property
    def ci(self):
        return self.value - Z95 * self.se, self.value + Z95 * self.se

    @property
    def relative_ci(self) -> float:
        """Half-width of the 95% interval relative to the value."""
        return float(Z95 * self.se / abs(self.value)) if self.value else float("inf")

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {"value": self.value, "se": self.se, "ci95": [lo, hi]}


def _jackknife_se(loo: np.ndarray) -> float:
    n = loo.size
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def estimate_diffusion_direct(series: IncrementSeries, min_count: int = 100) -> Estimate:
    """``Var(increment) / window`` with a jackknife standard error.

    The pooled mean increment is removed first, so no drift value is assumed.
    """
    x = np.asarray(series.increments, dtype=float)
    n = x.size
    if n < min_count:
        raise ValueError(f"need at least {min_count} increments, got {n}")
    c = x - x.mean()
    s2 = np.sum(c**2)
    s1 = 0.0
    # leave-one-out unbiased variances, from power sums of the centred data
    loo_s1 = s1 - c
    loo_s2 = s2 - c**2
    loo_var = (loo_s2 - loo_s1**2 / (n - 1)) / (n - 2)
    value = s2 / (n - 1) / series.window
    return Estimate(float(value), _jackknife_se(loo_var / series.window))


def variance_ratio(series: IncrementSeries) -> Estimate:
    """``Var(increment over 2w) / (2 Var(increment over w))``; 1 for diffusive scaling.

    The ``2w`` increments are the sums of every pair of consecutive
    ``w`` windows, so the ratio is ``1 + rho_1`` with ``rho_1`` the lag-one
    autocorrelation of the window increments.  The standard error is
    from the jackknife over pairs.
    """
    x = np.asarray(series.increments, dtype=float)
    if x.size < 100:
        raise ValueError(f"need at least 100 increments, got {x.size}")
    c = x - x.mean()
    pair = c[:-1] * c[1:]
    sq = c**2
    n = pair.size
    value = 1.0 + pair.mean() / sq.mean()
    loo = 1.0 + (pair.sum() - pair) / (n - 1) / ((sq.sum() - sq[1:]) / (sq.size - 1))
    return Estimate(float(value), _jackknife_se(loo))


@dataclass
class MomentTest:
    skewness: float
    skewness_se: float
    excess_kurtosis: float
    excess_kurtosis_se: float
    n: int

    @property
    def skew_ok(self) -> bool:
        return abs(self.skewness) < max(0.1, 3 * self.skewness_se)

    @property
    def kurtosis_ok(self) -> bool:
        return abs(self.excess_kurtosis) < max(0.2, 3 * self.excess_kurtosis_se)

    @property
    def passed(self) -> bool:
        return self.skew_ok and self.kurtosis_ok

    def to_dict(self) -> dict:
        return {
            "skewness": self.skewness,
            "skewnessSE": self.skewness_se,
            "excessKurtosis": self.excess_kurtosis,
            "excessKurtosisSE": self.excess_kurtosis_se,
            "n": self.n,
            "passed": self.passed,
        }


def _shape(m2, m3, m4):
    return m3 / m2**1.5, m4 / m2**2 - 3.0


def clt_moment_test(increments, min_count: int = 1000) -> MomentTest:
    """Sample skewness and excess kurtosis with jackknife standard errors.

    Passes iff ``|skew| < max(0.1, 3 SE)`` and ``|excess kurtosis| < max(0.2, 3 SE)``.
    """
    x = np.asarray(increments, dtype=float)
    n = x.size
    if n < min_count:
        raise ValueError(f"need at least {min_count} increments, got {n}")
    x = (x - x.mean()) / x.std()
    S1, S2, S3, S4 = (np.sum(x**k) for k in (1, 2, 3, 4))
    skew, kurt = _shape(S2 / n, S3 / n, S4 / n)
    k = n - 1
    a1 = (S1 - x) / k
    a2 = (S2 - x**2) / k
    a3 = (S3 - x**3) / k
    a4 = (S4 - x**4) / k
    m2 = a2 - a1**2
    m3 = a3 - 3 * a1 * a2 + 2 * a1**3
    m4 = a4 - 4 * a1 * a3 + 6 * a1**2 * a2 - 3 * a1**4
    loo_skew, loo_kurt = _shape(m2, m3, m4)
    return MomentTest(float(skew), _jackknife_se(loo_skew), float(kurt), _jackknife_se(loo_kurt), n)


@dataclass
class DiffusionEstimate:
    """Green-Kubo estimate ``D = d1 + d2`` and diagnostics."""

    d1: float
    d2: float
    se: float
    drift: float
    drift_se: float
    truncation_lag: int
    truncated: bool
    lag_dt: float
    d2_hh: float
    correlation: np.ndarray = field(repr=False)
    correlation_se: np.ndarray = field(repr=False)

    @property
    def green_kubo(self) -> float:
        return self.d1 + self.d2

    @property
    def estimate(self) -> Estimate:
        return Estimate(self.green_kubo, self.se)

    def to_dict(self) -> dict:
        return {
            "d1": self.d1,
            "d2": self.d2,
            "greenKubo": self.green_kubo,
            "se": self.se,
            "meanDrift": self.drift,
            "meanDriftSE": self.drift_se,
            "truncationLag": self.truncation_lag,
            "truncationTime": self.truncation_lag * self.lag_dt,
            "reachedNoiseFloor": self.truncated,
            "d2_hhLiteral": self.d2_hh,
        }


def _cross(g, hc, lag_max):
    """``sum_k g[k] * hc[k + m]`` for ``m = 0..lag_max``."""
    full = signal.correlate(hc, g, mode="full", method="fft")
    zero = g.size - 1
    return full[zero : zero + lag_max + 1]


def _auto(hc, lag_max):
    return _cross(hc, hc, lag_max)


def estimate_green_kubo(
    runs,
    lag_max: int,
    batches_per_run: int = 16,
    n_boot: int = 400,
    band: float = 2.0,
    rng=None,
) -> DiffusionEstimate:
    """Green-Kubo diffusion constant from stationary tagged runs.

    Parameters
    ----------
    runs
        One run or a sequence of runs with equal ``sample_dt``.  Each needs
        ``drift_samples`` (``h`` at times ``(k + 1) * sample_dt``),
        ``bin_jumps`` and ``bin_sq_jumps`` (summed displacement and squared
        displacement of jumps in ``(k * sample_dt, (k + 1) * sample_dt]``).
    lag_max
        Largest lag, in samples, considered for the correlation integral.

    Every run is cut into batches; the bootstrap and the standard error
    both resample whole batches.  The correlation is integrated up to the
    point where three consecutive lags fall inside ``band`` bootstrap
    standard errors of zero.
    """
    if hasattr(runs, "drift_samples"):
        runs = [runs]
    dts = {float(r.sample_dt) for r in runs}
    if len(dts) != 1:
        raise ValueError("runs must share one sampling step")
    dt = dts.pop()
    rng = np.random.default_rng(rng)
    hbar = float(np.mean(np.concatenate([np.asarray(r.drift_samples, dtype=float) for r in runs])))
    corr_b, auto_b, d1_b, hmean_b = [], [], [], []
    for r in runs:
        h = np.asarray(r.drift_samples, dtype=float)
        g = np.asarray(r.bin_jumps, dtype=float)
        g2 = np.asarray(r.bin_sq_jumps, dtype=float)
        if not h.size == g.size == g2.size:
            raise ValueError("drift samples and jump bins must align")
        m = h.size // batches_per_run
        if m <= lag_max:
            raise ValueError(f"batches of {m} samples are not longer than lag_max={lag_max}")
        T_b = m * dt
        norm = m - np.arange(lag_max + 1)
        for b in range(batches_per_run):
            sl = slice(b * m, (b + 1) * m)
            hc = h[sl] - hbar
            corr_b.append(_cross(g[sl], hc, lag_max) / T_b)
            auto_b.append(_auto(hc, lag_max) / norm)
            d1_b.append(g2[sl].sum() / T_b)
            hmean_b.append(h[sl].mean())
    corr_b = np.array(corr_b)
    auto_b = np.array(auto_b)
    d1_b = np.array(d1_b)
    hmean_b = np.array(hmean_b)
    B = corr_b.shape[0]
    corr = corr_b.mean(axis=0)
    idx = rng.integers(0, B, size=(n_boot, B))
    corr_se = corr_b[idx].mean(axis=1).std(axis=0, ddof=1)
    inside = np.abs(corr) < band * corr_se
    cut, reached = lag_max + 1, False
    for j in range(lag_max - 1):
        if inside[j] and inside[j + 1] and inside[j + 2]:
            cut, reached = j, True
            break
    each = d1_b + 2 * dt * corr_b[:, :cut].sum(axis=1)
    auto = auto_b.mean(axis=0)
    w = np.ones(cut)
    if cut:
        w[0] = 0.5
    return DiffusionEstimate(
        d1=float(d1_b.mean()),
        d2=float(2 * dt * corr[:cut].sum()),
        se=float(each.std(ddof=1) / np.sqrt(B)),
        drift=hbar,
        drift_se=float(hmean_b.std(ddof=1) / np.sqrt(B)),
        truncation_lag=int(cut),
        truncated=reached,
        lag_dt=dt,
        d2_hh=float(2 * dt * np.dot(w, auto[:cut])),
        correlation=corr,
        correlation_se=corr_se,
    )


@dataclass
class AutocovCurve:
    lags: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    boot_sd: np.ndarray
    log_fit_slope: Optional[float] = None


def autocov_decay(f, g, lags, n_batches: int = 16, n_boot: int = 400, rng=None) -> AutocovCurve:
    """Centred cross-covariance ``Cov(f(t + lag), g(t))`` on a sampling grid.

    Bands are percentile intervals from a bootstrap over batches.  When the
    curve is positive at three or more lags, a straight-line fit of its
    logarithm against lag is reported to read off the decay rate.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    lags = np.asarray(lags, dtype=np.int64)
    if f.size != g.size:
        raise ValueError("series must have equal length")
    lag_max = int(lags.max())
    m = f.size // n_batches
    if m <= lag_max:
        raise ValueError("series too short for the requested lags")
    rng = np.random.default_rng(rng)
    fc = f - f.mean()
    gc = g - g.mean()
    per = np.empty((n_batches, lag_max + 1))
    for b in range(n_batches):
        fs = fc[b * m : (b + 1) * m]
        gs = gc[b * m : (b + 1) * m]
        per[b] = _cross(gs, fs, lag_max) / (m - np.arange(lag_max + 1))
    values = _cross(gc, fc, lag_max) / (f.size - np.arange(lag_max + 1))
    idx = rng.integers(0, n_batches, size=(n_boot, n_batches))
    boot = per[idx].mean(axis=1)
    lo, hi = np.quantile(boot, [0.025, 0.975], axis=0)
    sd = boot.std(axis=0, ddof=1)
    slope = None
    pos = values[lags] > 0
    if np.count_nonzero(pos) >= 3:
        slope = float(np.polyfit(lags[pos], np.log(values[lags][pos]), 1)[0])
    return AutocovCurve(lags, values[lags], lo[lags], hi[lags], sd[lags], slope)
