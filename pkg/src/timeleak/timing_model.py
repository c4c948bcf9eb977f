"""Detector timing response: an exponentially smeared Gaussian.

A single detector's timestamp density is

    d(t) = 1/(2 tau_e) * exp(-tau_g**2 / (4 tau_e**2))
           * exp((t - t0)/tau_e) * erfc((t - t0)/tau_g)

with all times in picoseconds and densities per picosecond.  Written this
way the exponential tail sits on the early side of the peak.  The density
is exactly the law of

    T = t0 + tau_g**2/(2 tau_e) + (tau_g/sqrt(2)) Z - tau_e E

with Z standard normal and E standard exponential, which gives the closed
form moments, the sampler and the CDF used below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfc, erfcx, ndtri

#: Half-width of the "full support" window in units of (tau_e + tau_g).
SUPPORT_WIDTHS = 20.0


@dataclass(frozen=True)
class DetectorResponse:
    """Timing response parameters of one detector (picoseconds)."""

    t0: float
    tau_e: float
    tau_g: float

    def __post_init__(self):
        for name in ("t0", "tau_e", "tau_g"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.tau_e <= 0:
            raise ValueError(f"tau_e must be > 0, got {self.tau_e}")
        if self.tau_g <= 0:
            raise ValueError(f"tau_g must be > 0, got {self.tau_g}")

    @property
    def support(self) -> tuple[float, float]:
        """Window holding all but < 1e-9 of the mass.

        The bulk sits near t0 + tau_g**2/(2 tau_e), far right of t0 when
        tau_g >> tau_e, so the upper edge is pushed out by that shift.
        """
        half = SUPPORT_WIDTHS * (self.tau_e + self.tau_g)
        return self.t0 - half, self.t0 + _mean_shift(self) + half

    def to_record(self) -> dict:
        return {"t0_ps": self.t0, "tau_e_ps": self.tau_e, "tau_g_ps": self.tau_g}

    @classmethod
    def from_record(cls, record: dict) -> "DetectorResponse":
        return cls(float(record["t0_ps"]), float(record["tau_e_ps"]), float(record["tau_g_ps"]))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``start + k*step`` for ``k = 0 .. count-1``."""

    start: float
    step: float
    count: int

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if self.count < 2:
            raise ValueError(f"count must be >= 2, got {self.count}")

    @classmethod
    def spanning(cls, start: float, end: float, max_step: float, odd: bool = False) -> "TimeGrid":
        """Smallest grid covering ``[start, end]`` exactly with step <= max_step."""
        if not end > start:
            raise ValueError("end must exceed start")
        intervals = max(1, math.ceil((end - start) / max_step))
        if odd and intervals % 2:
            intervals += 1
        return cls(start, (end - start) / intervals, intervals + 1)

    @property
    def end(self) -> float:
        return self.start + (self.count - 1) * self.step

    def points(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)


def full_support(*responses: DetectorResponse) -> tuple[float, float]:
    """Integration window enclosing every response's support."""
    lows, highs = zip(*(r.support for r in responses))
    return min(lows), max(highs)


def _check_finite(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("time argument must be finite")
    return t


def _density(resp: DetectorResponse, t: np.ndarray) -> np.ndarray:
    x = t - resp.t0
    u = x / resp.tau_g
    log_pref = -math.log(2.0 * resp.tau_e) - resp.tau_g ** 2 / (4.0 * resp.tau_e ** 2)
    out = np.empty_like(u)
    # exp(a)*erfc(u) == exp(a - u**2)*erfcx(u); the rescaled form cannot overflow for u > 0
    pos = u > 0
    up = u[pos]
    out[pos] = np.exp(log_pref + x[pos] / resp.tau_e - up * up) * erfcx(up)
    neg = ~pos
    out[neg] = np.exp(log_pref + x[neg] / resp.tau_e) * erfc(u[neg])
    return out


def density(resp: DetectorResponse, t):
    """Probability density per picosecond at time(s) ``t``.

    Accepts a scalar or an array; raises ``ValueError`` for non-finite times.
    """
    arr = _check_finite(t)
    out = _density(resp, np.atleast_1d(arr))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _mean_shift(resp: DetectorResponse) -> float:
    return resp.tau_g ** 2 / (2.0 * resp.tau_e)


def cdf(resp: DetectorResponse, t):
    """P(T <= t), closed form: erfc((m - x)/tau_g)/2 + tau_e * d(t)."""
    arr = _check_finite(t)
    x = np.atleast_1d(arr) - resp.t0
    m = _mean_shift(resp)
    out = 0.5 * erfc((m - x) / resp.tau_g) + resp.tau_e * _density(resp, x + resp.t0)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def sf(resp: DetectorResponse, t):
    """P(T > t), computed without cancellation against 1 in the upper tail."""
    arr = _check_finite(t)
    x = np.atleast_1d(arr) - resp.t0
    m = _mean_shift(resp)
    out = 0.5 * erfc((x - m) / resp.tau_g) - resp.tau_e * _density(resp, x + resp.t0)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def interval_masses(resp: DetectorResponse, edges) -> np.ndarray:
    """Probability mass of each interval ``[edges[i], edges[i+1]]``.

    Uses the CDF left of t0 and the survival function right of it so tail
    masses keep their relative precision.
    """
    edges = _check_finite(edges)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("edges must be a 1-d array with at least two entries")
    if np.any(np.diff(edges) < 0):
        raise ValueError("edges must be non-decreasing")
    return masses_between(resp, edges[:-1], edges[1:])


def masses_between(resp: DetectorResponse, lo, hi) -> np.ndarray:
    """Elementwise mass of ``[lo[i], hi[i]]`` (requires lo <= hi)."""
    lo = np.atleast_1d(_check_finite(lo))
    hi = np.atleast_1d(_check_finite(hi))
    upper = lo >= resp.t0
    out = np.empty(lo.size)
    out[~upper] = cdf(resp, hi[~upper]) - cdf(resp, lo[~upper])
    out[upper] = sf(resp, lo[upper]) - sf(resp, hi[upper])
    return np.maximum(out, 0.0)


def integrate_density(resp: DetectorResponse, start: float, stop: float) -> float:
    """Integral of the density over ``[start, stop]``."""
    if start > stop:
        raise ValueError(f"integration bounds reversed: from={start} > to={stop}")
    if start == stop:
        return 0.0
    return float(interval_masses(resp, [start, stop])[0])


def moments(resp: DetectorResponse) -> tuple[float, float]:
    """Exact (mean, variance) in ps and ps**2."""
    mean = resp.t0 + _mean_shift(resp) - resp.tau_e
    variance = resp.tau_g ** 2 / 2.0 + resp.tau_e ** 2
    return mean, variance


def transform_uniforms(resp: DetectorResponse, u_gauss: np.ndarray, u_exp: np.ndarray) -> np.ndarray:
    """Map two independent uniform(0,1) streams to timestamps by inversion."""
    z = ndtri(u_gauss)
    e = -np.log1p(-u_exp)
    return resp.t0 + _mean_shift(resp) + resp.tau_g / math.sqrt(2.0) * z - resp.tau_e * e


def sample(resp: DetectorResponse, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. timestamps (ps); deterministic for a seeded ``rng``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.empty(0)
    u = rng.random((2, n))
    u[u == 0.0] = 2.0 ** -54
    return transform_uniforms(resp, u[0], u[1])


def with_offset(resp: DetectorResponse, new_t0: float) -> DetectorResponse:
    return replace(resp, t0=new_t0)
