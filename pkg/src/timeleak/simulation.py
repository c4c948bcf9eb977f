"""Monte Carlo detection sessions and a MAP eavesdropper on the public record.

Randomness is counter based: event ``i`` of a session seeded with ``seed``
consumes exactly the Philox(key=seed) outputs at counter positions
``2i`` and ``2i+1`` (eight 64-bit words).  Any chunking of the index range
therefore reproduces the sequential stream bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .leakage import (
    BASES,
    DETECTOR_IDS,
    ReceiverModel,
    _xlog2x,
    average_leakage,
    binned_mutual_information,
    map_success_probability,
)
from .timing_model import density, masses_between, transform_uniforms

_WORDS_PER_EVENT = 8
_BLOCKS_PER_EVENT = 2  # Philox emits 4 words per counter increment
DEFAULT_CHUNK = 1 << 18


@dataclass(frozen=True)
class EventRecord:
    detector_id: int
    secret_bit: int
    basis: str
    timestamp: float


@dataclass(frozen=True)
class PublicRecord:
    basis: str
    timestamp: float


@dataclass(frozen=True)
class AttackOutcome:
    n_events: int
    n_correct: int
    empirical_success: float
    empirical_mi_bits: float
    analytic_mi_bits: float
    empirical_mi_stderr: float = 0.0
    analytic_success: float | None = None
    confusion: tuple[tuple[int, int], tuple[int, int]] = ((0, 0), (0, 0))


@dataclass
class EventTable:
    """Column view of a session, used for vectorized work on large runs."""

    detector_id: np.ndarray
    secret_bit: np.ndarray
    basis: np.ndarray  # 0 -> "A", 1 -> "B"
    timestamp: np.ndarray

    def __len__(self):
        return self.timestamp.size

    def records(self) -> list[EventRecord]:
        return [EventRecord(int(d), int(b), BASES[int(s)], float(t))
                for d, b, s, t in zip(self.detector_id, self.secret_bit, self.basis, self.timestamp)]

    @classmethod
    def from_records(cls, events) -> "EventTable":
        return cls(
            np.array([e.detector_id for e in events], dtype=np.int64),
            np.array([e.secret_bit for e in events], dtype=np.int64),
            np.array([BASES.index(e.basis) for e in events], dtype=np.int64),
            np.array([e.timestamp for e in events], dtype=float),
        )


def _uniforms(raw: np.ndarray) -> np.ndarray:
    # 53-bit uniforms strictly inside (0, 1)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def event_uniforms(seed: int, start: int, stop: int) -> np.ndarray:
    """Uniform draws for events ``start..stop-1``, shape (stop-start, 8)."""
    bg = np.random.Philox(key=int(seed))
    bg.advance(_BLOCKS_PER_EVENT * start)
    raw = bg.random_raw(_WORDS_PER_EVENT * (stop - start))
    return _uniforms(np.asarray(raw, dtype=np.uint64)).reshape(stop - start, _WORDS_PER_EVENT)


def _generate(rcv: ReceiverModel, seed: int, start: int, stop: int,
              background: float, frame: tuple[float, float] | None) -> EventTable:
    u = event_uniforms(seed, start, stop)
    basis = (u[:, 0] >= 0.5).astype(np.int64)
    bit = (u[:, 1] >= rcv.prior).astype(np.int64)
    det = np.empty(basis.size, dtype=np.int64)
    t = np.empty(basis.size)
    for b_idx, b in enumerate(BASES):
        for x in (0, 1):
            d = rcv.detector_for(b, x)
            sel = (basis == b_idx) & (bit == x)
            det[sel] = d
            t[sel] = transform_uniforms(rcv.response(d), u[sel, 2], u[sel, 3])
    if background > 0:
        lo, hi = frame
        noise = u[:, 4] < background
        t[noise] = lo + (hi - lo) * u[noise, 5]
    return EventTable(det, bit, basis, t)


def simulate_table(rcv: ReceiverModel, n: int, seed: int, background: float = 0.0,
                   frame: tuple[float, float] | None = None, chunk: int = DEFAULT_CHUNK) -> EventTable:
    """Vectorized session of ``n`` events.

    ``background`` is the fraction of events whose timestamp is replaced by
    a uniform draw over ``frame`` (ps); the detector and bit are kept.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if not 0.0 <= background <= 1.0:
        raise ValueError("background must lie in [0, 1]")
    if background > 0 and frame is None:
        raise ValueError("a background fraction needs a frame (start, stop) in ps")
    parts = [_generate(rcv, seed, a, min(a + chunk, n), background, frame) for a in range(0, n, chunk)]
    if not parts:
        empty = np.empty(0, dtype=np.int64)
        return EventTable(empty, empty.copy(), empty.copy(), np.empty(0))
    return EventTable(*(np.concatenate([getattr(p, f) for p in parts])
                        for f in ("detector_id", "secret_bit", "basis", "timestamp")))


def simulate_session(rcv: ReceiverModel, n: int, seed: int, **kwargs) -> list[EventRecord]:
    """``n`` detection events: uniform basis, bit from the prior, timestamp from the detector."""
    return simulate_table(rcv, n, seed, **kwargs).records()


def quantize(timestamps, resolution: float | None) -> np.ndarray:
    t = np.asarray(timestamps, dtype=float)
    if resolution is None:
        return t
    if not resolution > 0:
        raise ValueError(f"resolution must be > 0, got {resolution}")
    # half-way cases round up (toward +inf) rather than to even
    return np.floor(t / resolution + 0.5) * resolution


def publish(events, resolution: float | None = None) -> list[PublicRecord]:
    """Public projection: basis and (optionally rounded) timestamp only."""
    stamps = quantize([e.timestamp for e in events], resolution)
    return [PublicRecord(e.basis, float(t)) for e, t in zip(events, stamps)]


def eve_map_attack_arrays(basis: np.ndarray, timestamps: np.ndarray, rcv: ReceiverModel,
                          resolution: float | None = None) -> np.ndarray:
    """Vectorized MAP guesses; ``basis`` holds 0 for "A" and 1 for "B"."""
    basis = np.asarray(basis, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=float)
    guesses = np.zeros(timestamps.size, dtype=np.int64)
    p0, p1 = rcv.prior, 1.0 - rcv.prior
    for b_idx, b in enumerate(BASES):
        sel = basis == b_idx
        if not np.any(sel):
            continue
        ch = rcv.channel(b)
        ts = timestamps[sel]
        if resolution is None:
            w0, w1 = p0 * density(ch.d0, ts), p1 * density(ch.d1, ts)
        else:
            # a published value k*r stands for the rounding cell [k*r - r/2, k*r + r/2)
            cells, inverse = np.unique(ts, return_inverse=True)
            lo, hi = cells - resolution / 2.0, cells + resolution / 2.0
            w0 = p0 * masses_between(ch.d0, lo, hi)[inverse]
            w1 = p1 * masses_between(ch.d1, lo, hi)[inverse]
        guesses[sel] = (w1 > w0).astype(np.int64)  # ties -> 0
    return guesses


def eve_map_attack(public, rcv: ReceiverModel, resolution: float | None = None) -> list[int]:
    """MAP guess of each secret bit from (basis, timestamp), ties going to 0.

    Eve is assumed to know the receiver exactly.  Pass ``resolution`` when
    the timestamps were rounded so she weighs rounding cells instead of
    point densities.
    """
    basis = np.array([BASES.index(p.basis) for p in public], dtype=np.int64)
    t = np.array([p.timestamp for p in public], dtype=float)
    return [int(g) for g in eve_map_attack_arrays(basis, t, rcv, resolution)]


def confusion_matrix(bits, guesses) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    guesses = np.asarray(guesses, dtype=np.int64)
    return np.bincount(2 * bits + guesses, minlength=4).reshape(2, 2)


def plugin_mutual_information(confusion: np.ndarray) -> tuple[float, float]:
    """Plug-in I(X; guess) in bits and its delta-method standard error.

    No bias correction is applied.  The standard error is
    sqrt((E[L**2] - I**2)/n) with L = log2 p(x,g)/(p(x)p(g)).
    """
    c = np.asarray(confusion, dtype=float)
    n = c.sum()
    if n == 0:
        return 0.0, 0.0
    p = c / n
    px = p.sum(axis=1)
    pg = p.sum(axis=0)
    mi = float(_xlog2x(p).sum() - _xlog2x(px).sum() - _xlog2x(pg).sum())
    mi = min(max(mi, 0.0), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, p / np.outer(px, pg), 1.0)
    log_ratio = np.log2(ratio)
    second = float(np.sum(p * log_ratio ** 2))
    return mi, math.sqrt(max(second - mi ** 2, 0.0) / n)


def analytic_leakage(rcv: ReceiverModel, resolution: float | None = None) -> float:
    """Channel MI matching what a publisher with ``resolution`` reveals."""
    if resolution is None:
        return average_leakage(rcv).mi_continuous_bits
    # rounding to the nearest multiple of r is binning with phase r/2
    return float(np.mean([binned_mutual_information(rcv.channel(b), resolution, resolution / 2.0)
                          for b in BASES]))


def analytic_success(rcv: ReceiverModel, resolution: float | None = None) -> float:
    if resolution is None:
        return float(np.mean([map_success_probability(rcv.channel(b)) for b in BASES]))
    return float(np.mean([map_success_probability(rcv.channel(b), resolution, resolution / 2.0) for b in BASES]))


def attack_report(events, guesses, rcv: ReceiverModel, resolution: float | None = None) -> AttackOutcome:
    if len(events) != len(guesses):
        raise ValueError(f"length mismatch: {len(events)} events but {len(guesses)} guesses")
    if isinstance(events, EventTable):
        bits = events.secret_bit
    else:
        bits = np.array([e.secret_bit for e in events], dtype=np.int64)
    conf = confusion_matrix(bits, guesses)
    n = int(conf.sum())
    correct = int(conf[0, 0] + conf[1, 1])
    mi, se = plugin_mutual_information(conf)
    return AttackOutcome(
        n_events=n,
        n_correct=correct,
        empirical_success=correct / n if n else 0.0,
        empirical_mi_bits=mi,
        analytic_mi_bits=analytic_leakage(rcv, resolution),
        empirical_mi_stderr=se,
        analytic_success=analytic_success(rcv, resolution),
        confusion=tuple(tuple(int(v) for v in row) for row in conf),
    )


def detector_counts(detector_ids) -> dict[int, int]:
    ids = np.asarray(detector_ids, dtype=np.int64)
    return {d: int(np.sum(ids == d)) for d in DETECTOR_IDS}
