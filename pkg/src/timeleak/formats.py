"""Readers and writers for configs, histograms, event streams and reports.

Machine-readable outputs (CSV, TSV, JSON) carry full float precision via
``repr`` so they round-trip exactly; human-readable text reports use six
significant digits.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from .estimation import FitResult, TimingHistogram
from .leakage import BASES, DETECTOR_IDS, LeakageReport, ReceiverModel, SweepResult
from .simulation import AttackOutcome, EventTable, PublicRecord
from .timing_model import DetectorResponse

HISTOGRAM_HEADER = ["time_ps", "count"]
EVENT_HEADER = ["detector", "basis", "bit", "time_ps"]
PUBLIC_HEADER = ["basis", "time_ps"]
BUNDLED_CONFIGS = {"table1": "table1.json"}


class DataFormatError(ValueError):
    """Malformed input file; the message names the file line or field path."""


class ConfigError(ValueError):
    """Receiver configuration that does not describe a valid receiver."""


def fmt(x: float) -> str:
    return repr(float(x))


# -- receiver configs ---------------------------------------------------------

def receiver_to_config(rcv: ReceiverModel) -> dict:
    detectors = {}
    for d in DETECTOR_IDS:
        rec = rcv.response(d).to_record()
        rec["basis"] = rcv.basis_of[d]
        rec["bit"] = rcv.bit_of[d]
        detectors[str(d)] = rec
    return {"prior": rcv.prior, "detectors": detectors}


def receiver_from_config(cfg) -> ReceiverModel:
    if not isinstance(cfg, dict):
        raise ConfigError("<root>: expected an object")
    dets = cfg.get("detectors")
    if not isinstance(dets, dict):
        raise ConfigError("detectors: expected an object keyed by detector id 1..4")
    if sorted(dets) != [str(d) for d in DETECTOR_IDS]:
        raise ConfigError(f"detectors: expected keys 1..4, got {sorted(dets)}")
    responses, basis_of, bit_of = [], {}, {}
    for d in DETECTOR_IDS:
        rec = dets[str(d)]
        path = f"detectors.{d}"
        if not isinstance(rec, dict):
            raise ConfigError(f"{path}: expected an object")
        values = {}
        for key in ("t0_ps", "tau_e_ps", "tau_g_ps"):
            if key not in rec:
                raise ConfigError(f"{path}.{key}: missing")
            try:
                values[key] = float(parse_time(rec[key]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}.{key}: {exc}") from None
        try:
            responses.append(DetectorResponse.from_record(values))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if rec.get("basis") not in BASES:
            raise ConfigError(f"{path}.basis: must be one of {list(BASES)}, got {rec.get('basis')!r}")
        if rec.get("bit") not in (0, 1):
            raise ConfigError(f"{path}.bit: must be 0 or 1, got {rec.get('bit')!r}")
        basis_of[d] = rec["basis"]
        bit_of[d] = rec["bit"]
    prior = cfg.get("prior", 0.5)
    if not isinstance(prior, (int, float)) or isinstance(prior, bool):
        raise ConfigError(f"prior: expected a number, got {prior!r}")
    try:
        return ReceiverModel(tuple(responses), basis_of, bit_of, float(prior))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_receiver(source: str | Path) -> ReceiverModel:
    """Load a receiver from a JSON file, or a bundled config by name (``table1``)."""
    name = str(source)
    if name in BUNDLED_CONFIGS and not Path(name).exists():
        text = resources.files("timeleak.data").joinpath(BUNDLED_CONFIGS[name]).read_text()
    else:
        text = Path(source).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    return receiver_from_config(cfg)


def dump_receiver(rcv: ReceiverModel) -> str:
    return json.dumps(receiver_to_config(rcv), indent=2) + "\n"


# -- time values --------------------------------------------------------------

def parse_time(value) -> float:
    """Picoseconds from a number or a string with optional ``ps``/``ns`` suffix."""
    if isinstance(value, bool):
        raise ValueError(f"not a time value: {value!r}")
    if isinstance(value, (int, float)):
        out = float(value)
    else:
        text = str(value).strip().lower()
        scale = 1.0
        if text.endswith("ns"):
            text, scale = text[:-2], 1000.0
        elif text.endswith("ps"):
            text = text[:-2]
        try:
            out = float(text.strip()) * scale
        except ValueError:
            raise ValueError(f"not a time value: {value!r}") from None
    if not math.isfinite(out):
        raise ValueError(f"time must be finite, got {value!r}")
    return out


# -- histograms ---------------------------------------------------------------

def _reader(text: str):
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        yield lineno, [c.strip() for c in row]


def _check_header(rows, expected, what):
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise DataFormatError(f"{what}: empty file") from None
    if header != expected:
        raise DataFormatError(f"line {lineno}: expected header {','.join(expected)!r}, got {','.join(header)!r}")


def parse_histogram(text: str) -> TimingHistogram:
    """Parse ``time_ps,count`` rows (uniform left edges) into a histogram."""
    rows = _reader(text)
    _check_header(rows, HISTOGRAM_HEADER, "histogram")
    edges, counts = [], []
    width = None
    for lineno, row in rows:
        if len(row) != 2:
            raise DataFormatError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            edge = float(row[0])
            count = float(row[1])
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric field in {','.join(row)!r}") from None
        if not math.isfinite(edge):
            raise DataFormatError(f"line {lineno}: non-finite time")
        if count < 0 or count != int(count):
            raise DataFormatError(f"line {lineno}: count must be a non-negative integer, got {row[1]!r}")
        if edges:
            step = edge - edges[-1]
            if step <= 0:
                raise DataFormatError(f"line {lineno}: bin edges must increase (got {edge} after {edges[-1]})")
            if width is None:
                width = step
            elif not math.isclose(step, width, rel_tol=1e-9, abs_tol=1e-9):
                raise DataFormatError(f"line {lineno}: gap or non-uniform bin (step {step} vs {width})")
        edges.append(edge)
        counts.append(int(count))
    if len(counts) < 3:
        raise DataFormatError(f"histogram: need at least 3 bins, got {len(counts)}")
    return TimingHistogram(edges[0], width, np.array(counts))


def format_histogram(hist: TimingHistogram) -> str:
    lines = [",".join(HISTOGRAM_HEADER)]
    lines += [f"{fmt(e)},{int(c)}" for e, c in zip(hist.edges[:-1], hist.counts)]
    return "\n".join(lines) + "\n"


# -- event streams ------------------------------------------------------------

def format_events(events: EventTable) -> str:
    out = [",".join(EVENT_HEADER)]
    out += [f"{d},{BASES[s]},{b},{fmt(t)}"
            for d, s, b, t in zip(events.detector_id, events.basis, events.secret_bit, events.timestamp)]
    return "\n".join(out) + "\n"


def format_public(basis: np.ndarray, timestamps: np.ndarray) -> str:
    out = [",".join(PUBLIC_HEADER)]
    out += [f"{BASES[s]},{fmt(t)}" for s, t in zip(basis, timestamps)]
    return "\n".join(out) + "\n"


def _basis_index(value, lineno):
    try:
        return BASES.index(value)
    except ValueError:
        raise DataFormatError(f"line {lineno}: basis must be one of {list(BASES)}, got {value!r}") from None


def parse_events(text: str) -> EventTable:
    rows = _reader(text)
    _check_header(rows, EVENT_HEADER, "events")
    det, basis, bit, t = [], [], [], []
    for lineno, row in rows:
        if len(row) != 4:
            raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            d, b, tt = int(row[0]), int(row[2]), float(row[3])
        except ValueError:
            raise DataFormatError(f"line {lineno}: malformed row {','.join(row)!r}") from None
        if d not in DETECTOR_IDS:
            raise DataFormatError(f"line {lineno}: detector must be 1..4, got {d}")
        if b not in (0, 1):
            raise DataFormatError(f"line {lineno}: bit must be 0 or 1, got {b}")
        det.append(d)
        basis.append(_basis_index(row[1], lineno))
        bit.append(b)
        t.append(tt)
    return EventTable(np.array(det, dtype=np.int64), np.array(bit, dtype=np.int64),
                      np.array(basis, dtype=np.int64), np.array(t, dtype=float))


def parse_public(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Public records as (basis index array, timestamp array)."""
    rows = _reader(text)
    _check_header(rows, PUBLIC_HEADER, "public records")
    basis, t = [], []
    for lineno, row in rows:
        if len(row) != 2:
            raise DataFormatError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            tt = float(row[1])
        except ValueError:
            raise DataFormatError(f"line {lineno}: malformed time {row[1]!r}") from None
        basis.append(_basis_index(row[0], lineno))
        t.append(tt)
    return np.array(basis, dtype=np.int64), np.array(t, dtype=float)


def public_to_records(basis, timestamps) -> list[PublicRecord]:
    return [PublicRecord(BASES[int(s)], float(t)) for s, t in zip(basis, timestamps)]


# -- reports ------------------------------------------------------------------

def _width_key(w: float) -> str:
    return f"{float(w):g}"


def leakage_report_to_dict(rep: LeakageReport) -> dict:
    return {
        "mi_continuous_bits": rep.mi_continuous_bits,
        "mi_per_basis_bits": dict(sorted(rep.mi_per_basis_bits.items())),
        "mi_binned_bits": {_width_key(w): v for w, v in sorted(rep.mi_binned_bits.items())},
        "eve_map_success": rep.eve_map_success,
        "compensated_mi_bits": rep.compensated_mi_bits,
        "grouping_used": {b: {"bit0": g[0], "bit1": g[1]} for b, g in sorted(rep.grouping_used.items())},
    }


def attack_outcome_to_dict(out: AttackOutcome) -> dict:
    d = asdict(out)
    d["confusion"] = [list(row) for row in out.confusion]
    return d


def fit_result_to_dict(fit: FitResult) -> dict:
    d = {
        "params": fit.params.to_record(),
        "std_errors_ps": {f"{k}_ps" if k != "background_fraction" else k: v for k, v in fit.std_errors.items()},
        "chi2_per_dof": fit.chi2_per_dof,
        "n_iterations": fit.n_iterations,
        "converged": fit.converged,
        "log_likelihood": fit.log_likelihood,
    }
    if fit.background_fraction is not None:
        d["background_fraction"] = fit.background_fraction
    return d


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_render_value(x) for x in v) + "]"
    return str(v)


def render_text(d: dict, indent: int = 0) -> str:
    """Indented ``key: value`` lines, nested maps as blocks, floats to 6 significant digits."""
    lines = []
    pad = "  " * indent
    for k, v in d.items():
        if isinstance(v, dict):
            lines.append(f"{pad}{k}:")
            lines.append(render_text(v, indent + 1).rstrip("\n"))
        else:
            lines.append(f"{pad}{k}: {_render_value(v)}")
    return "\n".join(line for line in lines if line) + "\n"


def render(d: dict, style: str = "text") -> str:
    if style == "structured":
        return json.dumps(d, indent=2, allow_nan=True) + "\n"
    return render_text(d)


# -- sweep tables -------------------------------------------------------------

def format_sweep_tsv(sweep: SweepResult) -> str:
    widths = sweep.widths()
    header = ["delay_ps", "continuous"] + [f"bin_{_width_key(w)}ps" for w in widths]
    lines = ["\t".join(header)]
    for i, delay in enumerate(sweep.delta_t0_ps):
        row = [fmt(delay), fmt(sweep.mi_bits_by_binwidth["continuous"][i])]
        row += [fmt(sweep.mi_bits_by_binwidth[w][i]) for w in widths]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def parse_sweep_tsv(text: str) -> SweepResult:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataFormatError("sweep table: empty")
    header = lines[0].split("\t")
    if header[:2] != ["delay_ps", "continuous"]:
        raise DataFormatError("line 1: sweep header must start with delay_ps, continuous")
    keys: list = ["continuous"]
    for name in header[2:]:
        if not (name.startswith("bin_") and name.endswith("ps")):
            raise DataFormatError(f"line 1: bad column name {name!r}")
        keys.append(float(name[4:-2]))
    delays, curves = [], {k: [] for k in keys}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise DataFormatError(f"line {lineno}: expected {len(header)} fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric field") from None
        delays.append(values[0])
        for k, v in zip(keys, values[1:]):
            curves[k].append(v)
    return SweepResult(delays, curves)


def sweep_to_dict(sweep: SweepResult) -> dict:
    return {
        "delta_t0_ps": list(sweep.delta_t0_ps),
        "mi_bits_by_binwidth": {k if k == "continuous" else _width_key(k): list(v)
                                for k, v in sweep.mi_bits_by_binwidth.items()},
    }
