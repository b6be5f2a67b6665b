"""Response metrics: settling time, phase lag, frequency and the largest
stable relaxation factor."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FsiError, InvalidArgument, NotSettledError


@dataclass(frozen=True)
class TimeSeries:
    t: np.ndarray
    y: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if len(t) != len(y):
            raise InvalidArgument(f"time and value arrays differ in length ({len(t)} vs {len(y)})")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise InvalidArgument("sample times must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.t)

    def window(self, t_start=-math.inf, t_stop=math.inf):
        m = (self.t >= t_start) & (self.t <= t_stop)
        return TimeSeries(self.t[m], self.y[m], self.label)


def trailing_mean(series: TimeSeries, fraction=0.1):
    n = max(1, int(round(fraction * len(series))))
    return float(np.mean(series.y[-n:]))


def settling_time(series: TimeSeries, final_value=None, band_fraction=0.02):
    """Earliest sample time after which the series stays inside
    ``final_value +- band_fraction*|final_value|``.

    Without ``final_value`` the mean of the trailing 10% of samples is used.
    """
    if not 0 < band_fraction < 0.5:
        raise InvalidArgument("band_fraction must lie in (0, 0.5)")
    if len(series) == 0:
        raise InvalidArgument("empty series")
    y = series.y
    if final_value is None:
        final_value = trailing_mean(series)
    band = band_fraction * abs(final_value)
    outside = np.nonzero(np.abs(y - final_value) > band)[0]
    if len(outside) == 0:
        return float(series.t[0])
    last = outside[-1]
    if last == len(y) - 1:
        raise NotSettledError(f"series {series.label!r} has not settled within t <= {series.t[-1]:g}")
    return float(series.t[last + 1])


def _resample(a: TimeSeries, b: TimeSeries):
    if len(a) == len(b) and np.array_equal(a.t, b.t):
        return a.t, a.y, b.y
    lo, hi = max(a.t[0], b.t[0]), min(a.t[-1], b.t[-1])
    ta = a.t[(a.t >= lo) & (a.t <= hi)]
    return ta, np.interp(ta, a.t, a.y), np.interp(ta, b.t, b.y)


def _pearson(x, y):
    x = x - x.mean()
    y = y - y.mean()
    den = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))
    return float(np.dot(x, y)) / den if den > 0 else 0.0


def phase_lag(series_a: TimeSeries, series_b: TimeSeries, period: float, causal=False):
    """Time by which ``series_b`` lags ``series_a`` (positive when b is late).

    Lags are searched in [-period/2, period/2], or in [0, period) with
    ``causal=True`` for a response that can trail its forcing by more than
    half a cycle.

    Searches the cross-correlation over one period of lags and refines the
    peak with a parabola through its neighbours. Each lag is scored by the
    correlation coefficient of the overlapping parts, so an exact shift is an
    exact maximum whatever the window. Both series are assumed to be
    uniformly sampled.
    """
    t, a, b = _resample(series_a, series_b)
    if len(t) < 3 or t[-1] - t[0] < 2 * period - 1e-9 * period:
        raise InvalidArgument("phase lag needs at least two periods of overlapping data")
    dt = (t[-1] - t[0]) / (len(t) - 1)
    half = int(round(0.5 * period / dt))
    lags = np.arange(0, 2 * half) if causal else np.arange(-half, half + 1)
    n = len(a)
    corr = np.empty(len(lags))
    for i, L in enumerate(lags):
        x, y = (a[: n - L], b[L:]) if L >= 0 else (a[-L:], b[: n + L])
        corr[i] = _pearson(x, y)
    k = int(np.argmax(corr))
    frac = 0.0
    if 0 < k < len(corr) - 1:
        c0, c1, c2 = corr[k - 1], corr[k], corr[k + 1]
        denom = c0 - 2 * c1 + c2
        if denom != 0:
            frac = 0.5 * (c0 - c2) / denom
    return float((lags[k] + frac) * dt)


def zero_crossings(t, y):
    s = np.signbit(y)
    idx = np.nonzero(s[1:] != s[:-1])[0]
    # linear interpolation between bracketing samples
    y0, y1 = y[idx], y[idx + 1]
    return t[idx] + (t[idx + 1] - t[idx]) * y0 / (y0 - y1)


def dominant_frequency(series: TimeSeries, baseline="mean"):
    """Frequency from the mean spacing of zero crossings.

    ``baseline`` is subtracted first: "mean", "linear" (least-squares trend),
    "final" (trailing 10% mean, suits decaying responses) or a number.
    """
    t, y = series.t, series.y
    if baseline == "mean":
        y = y - y.mean()
    elif baseline == "linear":
        y = y - np.polyval(np.polyfit(t, y, 1), t)
    elif baseline == "final":
        y = y - trailing_mean(series)
    else:
        y = y - float(baseline)
    zc = zero_crossings(t, y)
    if len(zc) < 4:
        raise InvalidArgument(f"only {len(zc)} zero crossings; need at least 4")
    half_period = (zc[-1] - zc[0]) / (len(zc) - 1)
    return 1.0 / (2.0 * half_period)


@dataclass
class StabilityProbeResult:
    beta_max: float
    history: list = field(default_factory=list)  # (beta, diverged, steps survived, reason)
    all_unstable: bool = False


def max_stable_beta(scenario_factory, config, treatment, horizon, tol_beta=0.01):
    """Bisect for the largest relaxation factor in (0, 1] whose run survives
    ``horizon`` time units without diverging.

    ``scenario_factory(config)`` must return ``(initial_state, systems)``
    for ``driver.run_simulation``; any solver failure counts as divergence.
    """
    from .driver import run_simulation  # deferred: driver imports this module

    if not tol_beta > 0:
        raise InvalidArgument("tol_beta must be positive")
    history = []

    def stable(beta):
        cfg = replace(config, beta=beta, treatment=treatment)
        initial, systems = scenario_factory(cfg)
        try:
            rec = run_simulation(initial, cfg, systems, horizon)
        except FsiError as exc:
            history.append((beta, True, getattr(exc, "step", None), type(exc).__name__))
            return False
        history.append((beta, False, len(rec.t) - 1, ""))
        return True

    if stable(1.0):
        return StabilityProbeResult(1.0, history)
    lo = tol_beta
    if not stable(lo):
        return StabilityProbeResult(lo, history, all_unstable=True)
    hi = 1.0
    while hi - lo > tol_beta:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return StabilityProbeResult(0.5 * (lo + hi), history)
