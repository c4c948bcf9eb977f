"""Eavesdropper information carried by public detection timestamps.

The secret bit X selects one of two detectors in the announced basis; the
public timestamp T is drawn from that detector's response.  Everything here
reduces to a ``BitChannel`` (two responses and a prior) and the mutual
information

    I(X;T) = H(X) + H(T) - H(X,T)

evaluated either on the continuous densities (composite Simpson on a grid
refined until the result settles) or on bin masses when timestamps are
coarsened.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import simpson

from .timing_model import (
    DetectorResponse,
    TimeGrid,
    density,
    full_support,
    interval_masses,
    with_offset,
)

LOG_FLOOR = 1e-300
# MI magnitudes below this are rounding noise of identical channels
ZERO_FLOOR = 1e-12
MI_TOLERANCE = 1e-7
BASES = ("A", "B")
DETECTOR_IDS = (1, 2, 3, 4)
DEFAULT_PHASES = 16

_MAX_GRID_POINTS = 1 << 22


@dataclass(frozen=True)
class BitChannel:
    """Timestamp law for each value of the secret bit; ``prior`` is P(X=0)."""

    d0: DetectorResponse
    d1: DetectorResponse
    prior: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.prior < 1.0:
            raise ValueError(f"prior must lie strictly between 0 and 1, got {self.prior}")

    @property
    def weights(self) -> tuple[float, float]:
        return self.prior, 1.0 - self.prior

    def swapped(self) -> "BitChannel":
        return BitChannel(self.d1, self.d0, 1.0 - self.prior)


@dataclass(frozen=True)
class ReceiverModel:
    """Four detectors with their basis and bit assignment.

    ``basis_of`` and ``bit_of`` map detector ids 1..4 to a basis label in
    {"A", "B"} and a bit in {0, 1}.  Each basis must hold exactly one
    detector per bit value.
    """

    detectors: tuple[DetectorResponse, DetectorResponse, DetectorResponse, DetectorResponse]
    basis_of: Mapping[int, str] = field(default_factory=lambda: {1: "A", 2: "A", 3: "B", 4: "B"})
    bit_of: Mapping[int, int] = field(default_factory=lambda: {1: 0, 2: 1, 3: 0, 4: 1})
    prior: float = 0.5

    def __post_init__(self):
        detectors = tuple(self.detectors)
        if len(detectors) != 4:
            raise ValueError(f"detectors: expected exactly 4, got {len(detectors)}")
        object.__setattr__(self, "detectors", detectors)
        object.__setattr__(self, "basis_of", {int(k): str(v) for k, v in dict(self.basis_of).items()})
        object.__setattr__(self, "bit_of", {int(k): int(v) for k, v in dict(self.bit_of).items()})
        for name in ("basis_of", "bit_of"):
            keys = sorted(getattr(self, name))
            if keys != list(DETECTOR_IDS):
                raise ValueError(f"{name}: must assign detectors 1..4 exactly once, got keys {keys}")
        for det, basis in self.basis_of.items():
            if basis not in BASES:
                raise ValueError(f"basis_of[{det}]: basis must be one of {BASES}, got {basis!r}")
        for det, bit in self.bit_of.items():
            if bit not in (0, 1):
                raise ValueError(f"bit_of[{det}]: bit must be 0 or 1, got {bit!r}")
        for basis in BASES:
            bits = sorted(self.bit_of[d] for d in DETECTOR_IDS if self.basis_of[d] == basis)
            if bits != [0, 1]:
                raise ValueError(
                    f"basis_of/bit_of: basis {basis} must contain one detector for bit 0 "
                    f"and one for bit 1, got bits {bits}"
                )
        if not 0.0 < self.prior < 1.0:
            raise ValueError(f"prior: must lie strictly between 0 and 1, got {self.prior}")

    def response(self, detector_id: int) -> DetectorResponse:
        return self.detectors[detector_id - 1]

    def detector_for(self, basis: str, bit: int) -> int:
        for d in DETECTOR_IDS:
            if self.basis_of[d] == basis and self.bit_of[d] == bit:
                return d
        raise KeyError((basis, bit))

    def channel(self, basis: str) -> BitChannel:
        return BitChannel(
            self.response(self.detector_for(basis, 0)),
            self.response(self.detector_for(basis, 1)),
            self.prior,
        )

    def grouping(self) -> dict[str, tuple[int, int]]:
        """Basis -> (detector for bit 0, detector for bit 1)."""
        return {b: (self.detector_for(b, 0), self.detector_for(b, 1)) for b in BASES}

    def map_detectors(self, fn) -> "ReceiverModel":
        return ReceiverModel(tuple(fn(r) for r in self.detectors), self.basis_of, self.bit_of, self.prior)


@dataclass
class LeakageReport:
    mi_continuous_bits: float
    mi_per_basis_bits: dict[str, float]
    mi_binned_bits: dict[float, float]
    eve_map_success: float
    compensated_mi_bits: float | None
    grouping_used: dict[str, tuple[int, int]]


@dataclass
class SweepResult:
    """MI curves against delay.  Curve keys: ``"continuous"`` or a bin width in ps."""

    delta_t0_ps: list[float]
    mi_bits_by_binwidth: dict

    def widths(self) -> list[float]:
        return [k for k in self.mi_bits_by_binwidth if k != "continuous"]


def _xlog2x(p: np.ndarray) -> np.ndarray:
    return np.where(p > 0.0, p * np.log2(np.maximum(p, LOG_FLOOR)), 0.0)


def _clamp(mi: float, h_x: float) -> float:
    return 0.0 if mi < ZERO_FLOOR else min(mi, h_x)


def binary_entropy(p: float) -> float:
    return -float(_xlog2x(np.array([p, 1.0 - p])).sum())


def mixture_density(ch: BitChannel, t):
    p0, p1 = ch.weights
    return p0 * density(ch.d0, t) + p1 * density(ch.d1, t)


def _max_step(ch: BitChannel) -> float:
    return min(ch.d0.tau_e, ch.d0.tau_g, ch.d1.tau_e, ch.d1.tau_g) / 50.0


def entropy_terms(ch: BitChannel, grid: TimeGrid) -> dict[str, float]:
    """H(X), H(T), H(X,T) in bits on a fixed Simpson grid (debugging aid).

    H(T) and H(X,T) are differential entropies and depend on the time unit;
    only the combination returned by :func:`mutual_information` does not.
    """
    t = grid.points()
    p0, p1 = ch.weights
    j0 = p0 * density(ch.d0, t)
    j1 = p1 * density(ch.d1, t)
    h_t = -simpson(_xlog2x(j0 + j1), dx=grid.step)
    h_xt = -simpson(_xlog2x(j0) + _xlog2x(j1), dx=grid.step)
    return {"H_X": binary_entropy(p0), "H_T": float(h_t), "H_XT": float(h_xt)}


def mutual_information(ch: BitChannel, tol: float = MI_TOLERANCE) -> float:
    """I(X;T) in bits for continuous timestamps.

    The Simpson grid starts at step min(tau)/50 over the joint support and is
    halved until successive estimates agree within ``tol``.
    """
    lo, hi = full_support(ch.d0, ch.d1)
    grid = TimeGrid.spanning(lo, hi, _max_step(ch), odd=True)
    h_x = binary_entropy(ch.prior)

    def estimate(g):
        terms = entropy_terms(ch, g)
        return terms["H_X"] + terms["H_T"] - terms["H_XT"]

    previous = estimate(grid)
    while 2 * grid.count - 1 <= _MAX_GRID_POINTS:
        grid = TimeGrid(grid.start, grid.step / 2.0, 2 * grid.count - 1)
        current = estimate(grid)
        if abs(current - previous) < tol:
            previous = current
            break
        previous = current
    return _clamp(previous, h_x)


def _bin_edges(lo: float, hi: float, width: float, phase: float) -> np.ndarray:
    k_lo = math.floor((lo - phase) / width)
    k_hi = math.ceil((hi - phase) / width)
    return phase + width * np.arange(k_lo, k_hi + 1)


def _discrete_mi(j0: np.ndarray, j1: np.ndarray, prior: float) -> float:
    marginal = j0 + j1
    h_x = binary_entropy(prior)
    mi = h_x - float(_xlog2x(marginal).sum()) + float(_xlog2x(j0).sum() + _xlog2x(j1).sum())
    return _clamp(mi, h_x)


def channel_bin_masses(ch: BitChannel, bin_width: float, phase: float = 0.0):
    """Bin edges and joint masses P(X=x, bin) for bins ``[phase + k w, phase + (k+1) w)``."""
    if not bin_width > 0:
        raise ValueError(f"bin_width must be > 0, got {bin_width}")
    lo, hi = full_support(ch.d0, ch.d1)
    edges = _bin_edges(lo, hi, bin_width, phase)
    p0, p1 = ch.weights
    return edges, p0 * interval_masses(ch.d0, edges), p1 * interval_masses(ch.d1, edges)


def binned_mutual_information(ch: BitChannel, bin_width: float, phase: float = 0.0) -> float:
    """I(X; bin index) in bits when timestamps are reported per bin."""
    if not bin_width > 0:
        raise ValueError(f"bin_width must be > 0, got {bin_width}")
    if not 0.0 <= phase < bin_width:
        raise ValueError(f"phase must lie in [0, bin_width), got {phase}")
    _, j0, j1 = channel_bin_masses(ch, bin_width, phase)
    return _discrete_mi(j0, j1, ch.prior)


def binned_mutual_information_phase_averaged(ch: BitChannel, bin_width: float,
                                             phases: int = DEFAULT_PHASES) -> float:
    if phases < 1:
        raise ValueError(f"phases must be >= 1, got {phases}")
    values = [binned_mutual_information(ch, bin_width, k * bin_width / phases) for k in range(phases)]
    return float(np.mean(values))


def map_success_probability(ch: BitChannel, bin_width: float | None = None, phase: float = 0.0) -> float:
    """Success rate of the MAP guess of X from T: integral of max_x p(x) d_x(t).

    With ``bin_width`` the guess sees only the bin, so the sum runs over bins.
    """
    if bin_width is not None:
        _, j0, j1 = channel_bin_masses(ch, bin_width, phase % bin_width)
        return float(np.maximum(j0, j1).sum())
    lo, hi = full_support(ch.d0, ch.d1)
    # max() has kinks where the weighted densities cross; a fine grid keeps the error ~1e-9
    grid = TimeGrid.spanning(lo, hi, _max_step(ch) / 4.0, odd=True)
    t = grid.points()
    p0, p1 = ch.weights
    integrand = np.maximum(p0 * density(ch.d0, t), p1 * density(ch.d1, t))
    return float(min(max(simpson(integrand, dx=grid.step), max(p0, p1)), 1.0))


def average_leakage(rcv: ReceiverModel, bin_widths: Sequence[float] = (), phases: int = DEFAULT_PHASES,
                    compensate: bool = False) -> LeakageReport:
    """Leakage of the receiver, averaged with equal weight over the two bases."""
    per_basis = {b: mutual_information(rcv.channel(b)) for b in BASES}
    binned = {
        float(w): float(np.mean([binned_mutual_information_phase_averaged(rcv.channel(b), w, phases)
                                 for b in BASES]))
        for w in bin_widths
    }
    success = float(np.mean([map_success_probability(rcv.channel(b)) for b in BASES]))
    return LeakageReport(
        mi_continuous_bits=float(np.mean(list(per_basis.values()))),
        mi_per_basis_bits=per_basis,
        mi_binned_bits=binned,
        eve_map_success=success,
        compensated_mi_bits=compensated_leakage(rcv) if compensate else None,
        grouping_used=rcv.grouping(),
    )


def _mean_mi(rcv: ReceiverModel) -> float:
    return float(np.mean([mutual_information(rcv.channel(b)) for b in BASES]))


def _pairings() -> list[tuple[tuple[int, int], tuple[int, int]]]:
    out = []
    for partner in (2, 3, 4):
        first = (1, partner)
        second = tuple(d for d in DETECTOR_IDS if d not in first)
        out.append((first, second))
    return out


def best_grouping(detectors: Sequence[DetectorResponse], prior: float = 0.5,
                  max_workers: int | None = None) -> tuple[ReceiverModel, float]:
    """Assignment of four detectors to bases that maximizes the average leakage.

    Bit labels inside a basis do not change I(X;T), so only the three ways of
    splitting the detectors into two pairs are searched.
    """
    candidates = []
    for (a0, a1), (b0, b1) in _pairings():
        candidates.append(ReceiverModel(
            tuple(detectors),
            basis_of={a0: "A", a1: "A", b0: "B", b1: "B"},
            bit_of={a0: 0, a1: 1, b0: 0, b1: 1},
            prior=prior,
        ))
    values = _map(_mean_mi, candidates, max_workers)
    best = int(np.argmax(values))  # first maximum on ties
    return candidates[best], values[best]


def _map(fn, items, max_workers):
    if max_workers is None or max_workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers) as pool:
        return list(pool.map(fn, items))


def delay_sweep(tau_e: float, tau_g: float, delays: Sequence[float], bin_widths: Sequence[float] = (500.0, 1000.0),
                phases: int = DEFAULT_PHASES, prior: float = 0.5, max_workers: int | None = None) -> SweepResult:
    """Continuous and binned MI for two shape-identical detectors offset by each delay."""
    delays = [float(d) for d in delays]
    if any(d < 0 for d in delays):
        raise ValueError("delays must be non-negative")
    base = DetectorResponse(0.0, tau_e, tau_g)

    def row(delay):
        ch = BitChannel(base, with_offset(base, delay), prior)
        values = [mutual_information(ch)]
        values += [binned_mutual_information_phase_averaged(ch, w, phases) for w in bin_widths]
        return values

    rows = _map(row, delays, max_workers)
    curves = {"continuous": [r[0] for r in rows]}
    for i, w in enumerate(bin_widths, start=1):
        curves[float(w)] = [r[i] for r in rows]
    return SweepResult(delays, curves)


def compensated_leakage(rcv: ReceiverModel) -> float:
    """Average leakage once every detector's offset is moved to the common mean offset."""
    common = float(np.mean([r.t0 for r in rcv.detectors]))
    return _mean_mi(rcv.map_detectors(lambda r: with_offset(r, common)))


def privacy_amplification_budget(mi_bits: float, sifted_key_length: int) -> int:
    """Extra key bits to discard for this side channel: ceil(mi_bits * length)."""
    if sifted_key_length < 0:
        raise ValueError(f"sifted_key_length must be >= 0, got {sifted_key_length}")
    if not 0.0 <= mi_bits <= 1.0:
        raise ValueError(f"mi_bits must lie in [0, 1], got {mi_bits}")
    # guard against 0.038*10000 = 380.00000000000006 style round-up
    return int(math.ceil(round(mi_bits * sifted_key_length, 9)))


TABLE1_DETECTORS = (
    DetectorResponse(1138.0, 395.0, 288.0),
    DetectorResponse(1356.0, 433.0, 279.0),
    DetectorResponse(1248.0, 409.0, 292.0),
    DetectorResponse(1117.0, 415.0, 302.0),
)


def table1_receiver() -> ReceiverModel:
    """Reference receiver: bases (1,2)/(3,4), detectors 1 and 3 carry bit 0."""
    return ReceiverModel(TABLE1_DETECTORS, {1: "A", 2: "A", 3: "B", 4: "B"}, {1: 0, 2: 1, 3: 0, 4: 1})
