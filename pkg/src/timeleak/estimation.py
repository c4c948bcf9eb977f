"""Maximum-likelihood extraction of detector response parameters from histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logit

from .timing_model import DetectorResponse, interval_masses

MIN_EVENTS = 1000
MAX_ITERATIONS = 10_000
MIN_EXPECTED = 5.0

_MASS_FLOOR = 1e-300
_NEWTON_STEPS = 5
# small fixed step: the Hessian's 1e-3*param step biases the gradient on this skewed likelihood
_GRADIENT_STEP = 1e-2


class InsufficientDataError(ValueError):
    """Raised when a histogram carries too few events (or usable bins) to fit."""


@dataclass(frozen=True)
class TimingHistogram:
    bin_start: float
    bin_width: float
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 3:
            raise ValueError("counts must be a 1-d sequence of length >= 3")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be non-negative integers")
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be > 0, got {self.bin_width}")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "bin_start", float(self.bin_start))
        object.__setattr__(self, "bin_width", float(self.bin_width))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def edges(self) -> np.ndarray:
        return self.bin_start + self.bin_width * np.arange(self.counts.size + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.bin_start + self.bin_width * (np.arange(self.counts.size) + 0.5)

    def shifted(self, delta: float) -> "TimingHistogram":
        return TimingHistogram(self.bin_start + delta, self.bin_width, self.counts)


@dataclass(frozen=True)
class FitResult:
    params: DetectorResponse
    std_errors: dict[str, float]
    chi2_per_dof: float
    n_iterations: int
    converged: bool
    log_likelihood: float = float("nan")
    background_fraction: float | None = None


def histogram_from_samples(samples, bin_width: float) -> TimingHistogram:
    """Histogram with left edge at the smallest sample.

    At least three bins are produced so a constant sample still yields a
    valid histogram (one occupied bin).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("samples must be non-empty")
    if not bin_width > 0:
        raise ValueError(f"bin_width must be > 0, got {bin_width}")
    start = float(samples.min())
    index = np.floor((samples - start) / bin_width).astype(np.int64)
    nbins = max(int(index.max()) + 1, 3)
    counts = np.bincount(index, minlength=nbins)
    return TimingHistogram(start, bin_width, counts)


def expected_counts(hist: TimingHistogram, resp: DetectorResponse, background_fraction: float = 0.0) -> np.ndarray:
    masses = interval_masses(resp, hist.edges)
    signal = (1.0 - background_fraction) * hist.total * masses
    return signal + background_fraction * hist.total / hist.counts.size


def poisson_log_likelihood(hist: TimingHistogram, resp: DetectorResponse, background_fraction: float = 0.0) -> float:
    """Poisson log-likelihood of the counts, constants included."""
    mu = np.maximum(expected_counts(hist, resp, background_fraction), _MASS_FLOOR)
    n = hist.counts
    return float(np.sum(n * np.log(mu) - mu - gammaln(n + 1.0)))


def initial_guess(hist: TimingHistogram) -> DetectorResponse:
    """Moment-matched starting point.

    The response has variance tau_e**2 + tau_g**2/2 and third central moment
    -2 tau_e**3, so a negative skewness fixes tau_e and the variance fixes
    tau_g.  Non-negative skewness (or a skewness that would leave no room
    for the Gaussian part) falls back to tau_e = tau_g = sd/sqrt(2).
    """
    w = hist.counts.astype(float)
    x = hist.centers
    total = w.sum()
    mean = float(np.dot(w, x) / total)
    var = float(np.dot(w, (x - mean) ** 2) / total)
    floor = hist.bin_width / 2.0
    sd = math.sqrt(var)
    third = float(np.dot(w, (x - mean) ** 3) / total)
    skew = third / sd ** 3 if sd > 0 else 0.0

    tau_e = tau_g = None
    if skew < -1e-3:
        tau_e = sd * (-skew / 2.0) ** (1.0 / 3.0)
        rest = var - tau_e ** 2
        if rest > 0:
            tau_g = math.sqrt(2.0 * rest)
        else:
            tau_e = None
    if tau_e is None:
        tau_e = tau_g = sd / math.sqrt(2.0)
    tau_e = max(tau_e, floor)
    tau_g = max(tau_g, floor)
    t0 = mean - tau_g ** 2 / (2.0 * tau_e) + tau_e
    return DetectorResponse(t0, tau_e, tau_g)


def _merge_groups(expected: np.ndarray) -> list[tuple[int, int]]:
    groups = []
    start, acc = 0, 0.0
    for i, e in enumerate(expected):
        acc += e
        if acc >= MIN_EXPECTED:
            groups.append((start, i + 1))
            start, acc = i + 1, 0.0
    if start < expected.size:
        if groups:
            groups[-1] = (groups[-1][0], expected.size)
        else:
            groups.append((start, expected.size))
    return groups


def goodness_of_fit(hist: TimingHistogram, resp: DetectorResponse, n_params: int = 3,
                    background_fraction: float = 0.0) -> float:
    """Pearson chi-square per degree of freedom.

    Mass outside the histogram is folded into the edge bins, then bins are
    merged left to right until each group expects at least 5 counts; a short
    remainder joins the last group.  Trailing or leading empty bins therefore
    do not change the statistic.
    """
    edges = hist.edges.copy()
    inner = interval_masses(resp, edges)
    lo_tail = interval_masses(resp, [min(resp.support[0], edges[0]), edges[0]])[0]
    hi_tail = interval_masses(resp, [edges[-1], max(resp.support[1], edges[-1])])[0]
    inner[0] += lo_tail
    inner[-1] += hi_tail
    expected = (1.0 - background_fraction) * hist.total * inner + background_fraction * hist.total / inner.size
    groups = _merge_groups(expected)
    if len(groups) < 5:
        raise InsufficientDataError(f"only {len(groups)} usable bins (need >= 5)")
    obs = np.array([hist.counts[a:b].sum() for a, b in groups], dtype=float)
    exp = np.array([expected[a:b].sum() for a, b in groups])
    chi2 = float(np.sum((obs - exp) ** 2 / np.maximum(exp, _MASS_FLOOR)))
    dof = len(groups) - n_params
    if dof <= 0:
        raise InsufficientDataError(f"{len(groups)} usable bins leave no degrees of freedom")
    return chi2 / dof


class _Objective:
    """Negative log-likelihood over (t0/scale, log tau_e, log tau_g[, logit bkg])."""

    def __init__(self, hist, scale, background):
        self.hist = hist
        self.scale = scale
        self.background = background

    def unpack(self, z):
        resp = DetectorResponse(z[0] * self.scale, math.exp(z[1]), math.exp(z[2]))
        bkg = float(expit(z[3])) if self.background else 0.0
        return resp, bkg

    def pack(self, resp, bkg=0.0):
        z = [resp.t0 / self.scale, math.log(resp.tau_e), math.log(resp.tau_g)]
        if self.background:
            z.append(float(logit(min(max(bkg, 1e-6), 1 - 1e-6))))
        return np.array(z)

    def __call__(self, z):
        try:
            resp, bkg = self.unpack(z)
        except (ValueError, OverflowError):
            return np.inf
        return -poisson_log_likelihood(self.hist, resp, bkg)


def _natural(resp: DetectorResponse, bkg: float, background: bool) -> np.ndarray:
    v = [resp.t0, resp.tau_e, resp.tau_g]
    if background:
        v.append(bkg)
    return np.array(v)


def _nll_natural(hist, v, background):
    try:
        resp = DetectorResponse(v[0], v[1], v[2])
    except ValueError:
        return np.inf
    bkg = v[3] if background else 0.0
    return -poisson_log_likelihood(hist, resp, bkg)


def _hessian(f, x: np.ndarray, steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian of ``f`` at ``x``."""
    n = x.size
    f0 = f(x)
    grad = np.empty(n)
    hess = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        fp, fm = f(x + ei), f(x - ei)
        grad[i] = (fp - fm) / (2 * steps[i])
        hess[i, i] = (fp - 2 * f0 + fm) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = steps[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    return grad, hess


def _gradient(f, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
    grad = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = steps[i]
        grad[i] = (f(x + e) - f(x - e)) / (2 * steps[i])
    return grad


def fit_response(hist: TimingHistogram, guess: DetectorResponse | None = None, background: bool = False,
                 min_events: int = MIN_EVENTS, max_iterations: int = MAX_ITERATIONS) -> FitResult:
    """Poisson maximum-likelihood fit of a response to a histogram.

    Nelder-Mead runs on (t0, log tau_e, log tau_g) and stops once the
    relative likelihood change is below 1e-10 and the simplex spans less
    than 1e-3 ps; a few Newton steps on the central-difference Hessian then
    polish the optimum.  Standard errors come from the inverse observed
    information in natural units.  The fit is flagged converged when the
    simplex stopped on tolerance, the Hessian is positive definite and the
    Newton decrement sqrt(g' H^-1 g) is below 1e-3, i.e. the remaining
    likelihood gain is negligible next to its statistical scatter.
    """
    if hist.total < min_events:
        raise InsufficientDataError(f"histogram holds {hist.total} events; fitting needs >= {min_events}")
    if guess is None:
        guess = initial_guess(hist)
    scale = max(guess.tau_e, guess.tau_g)
    obj = _Objective(hist, scale, background)
    z0 = obj.pack(guess, 0.01)
    f0 = obj(z0)
    # simplex tolerance in packed coordinates: 1e-3 ps in t0 and in each tau
    xatol = 1e-3 / max(scale, guess.tau_e, guess.tau_g)
    res = minimize(obj, z0, method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": 1e-10 * abs(f0), "maxiter": max_iterations,
                            "maxfev": 4 * max_iterations, "adaptive": background})
    z = res.x if res.fun <= f0 else z0
    resp, bkg = obj.unpack(z)

    nll = lambda u: _nll_natural(hist, u, background)
    v = _natural(resp, bkg, background)
    cov = None
    decrement, positive = np.inf, False
    for _ in range(_NEWTON_STEPS + 1):
        steps = np.maximum(1e-3 * np.abs(v), 1e-2)
        if background:
            steps[3] = max(1e-3 * v[3], 1e-6)
        _, hess = _hessian(nll, v, steps)
        grad = _gradient(nll, v, np.minimum(steps, _GRADIENT_STEP))
        try:
            cov = np.linalg.inv(hess)
        except np.linalg.LinAlgError:
            cov = None
            break
        positive = bool(np.all(np.linalg.eigvalsh(hess) > 0))
        decrement = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
        if not positive or decrement < 1e-4:
            break
        # Newton polish of the simplex optimum; kept only if the likelihood improves
        trial = v - cov @ grad
        if not nll(trial) < nll(v):
            break
        v = trial
    if background:
        resp, bkg = DetectorResponse(v[0], v[1], v[2]), float(v[3])
    else:
        resp = DetectorResponse(v[0], v[1], v[2])
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None)) if cov is not None else np.full(v.size, np.nan)

    names = ["t0", "tau_e", "tau_g", "background_fraction"][: v.size]
    std_errors = {k: float(e) for k, e in zip(names, errs)}
    try:
        chi2 = goodness_of_fit(hist, resp, n_params=v.size, background_fraction=bkg)
    except InsufficientDataError:
        chi2 = float("nan")
    converged = bool(res.nit < max_iterations and positive and decrement < 1e-3)
    return FitResult(
        params=resp,
        std_errors=std_errors,
        chi2_per_dof=chi2,
        n_iterations=int(res.nit),
        converged=converged,
        log_likelihood=-float(nll(v)),
        background_fraction=bkg if background else None,
    )


def bootstrap_errors(hist: TimingHistogram, rng: np.random.Generator, n_resamples: int = 200,
                     guess: DetectorResponse | None = None) -> dict[str, float]:
    """Parametric-free bootstrap of the fit: multinomial resampling of the counts."""
    base = fit_response(hist, guess)
    p = hist.counts / hist.total
    draws = []
    for _ in range(n_resamples):
        counts = rng.multinomial(hist.total, p)
        fit = fit_response(TimingHistogram(hist.bin_start, hist.bin_width, counts), base.params)
        draws.append([fit.params.t0, fit.params.tau_e, fit.params.tau_g])
    sd = np.std(np.array(draws), axis=0, ddof=1)
    return dict(zip(["t0", "tau_e", "tau_g"], map(float, sd)))
