import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeleak import formats
from timeleak.estimation import TimingHistogram
from timeleak.formats import ConfigError, DataFormatError
from timeleak.leakage import ReceiverModel, SweepResult, average_leakage, table1_receiver
from timeleak.simulation import EventTable, simulate_table



def test_parse_time_units():
    assert formats.parse_time("1.5ns") == 1500.0
    assert formats.parse_time(" 250 ps ") == 250.0
    assert formats.parse_time("-3") == -3.0
    assert formats.parse_time(42) == 42.0
    for bad in ("abc", "inf", "1us", True):
        with pytest.raises(ValueError):
            formats.parse_time(bad)


def test_histogram_round_trip():
    h = TimingHistogram(-100.5, 20.25, np.array([0, 3, 17, 5, 0]))
    back = formats.parse_histogram(formats.format_histogram(h))
    assert back.bin_start == h.bin_start and back.bin_width == h.bin_width
    np.testing.assert_array_equal(back.counts, h.counts)


@given(st.floats(-1e6, 1e6), st.floats(0.01, 1e4), st.lists(st.integers(0, 10 ** 9), min_size=3, max_size=30))
@settings(max_examples=60, deadline=None)
def test_histogram_round_trip_property(start, width, counts):
    h = TimingHistogram(start, width, np.array(counts))
    back = formats.parse_histogram(formats.format_histogram(h))
    np.testing.assert_array_equal(back.counts, h.counts)
    assert back.bin_start == h.bin_start
    assert back.bin_width == pytest.approx(h.bin_width, rel=1e-9)


@pytest.mark.parametrize("text, line", [
    ("time,count\n0,1\n", 1),
    ("time_ps,count\n0,1\n10,2\n20\n", 4),
    ("time_ps,count\n0,1\n10,x\n20,3\n", 3),
    ("time_ps,count\n0,1\n10,2\n5,3\n", 4),
    ("time_ps,count\n0,1\n10,2\n30,3\n", 4),
    ("time_ps,count\n0,1\n10,-2\n20,3\n", 3),
    ("time_ps,count\n0,1\n10,2.5\n20,3\n", 3),
])
def test_histogram_errors_name_the_line(text, line):
    with pytest.raises(DataFormatError, match=f"line {line}:"):
        formats.parse_histogram(text)


def test_histogram_too_short():
    with pytest.raises(DataFormatError, match="at least 3 bins"):
        formats.parse_histogram("time_ps,count\n0,1\n10,2\n")


def test_events_round_trip():
    t = simulate_table(table1_receiver(), 200, seed=3)
    back = formats.parse_events(formats.format_events(t))
    for f in ("detector_id", "secret_bit", "basis", "timestamp"):
        np.testing.assert_array_equal(getattr(back, f), getattr(t, f))


def test_public_round_trip():
    t = simulate_table(table1_receiver(), 200, seed=4)
    basis, stamps = formats.parse_public(formats.format_public(t.basis, t.timestamp))
    np.testing.assert_array_equal(basis, t.basis)
    np.testing.assert_array_equal(stamps, t.timestamp)
    recs = formats.public_to_records(basis, stamps)
    assert recs[0].basis in ("A", "B") and recs[0].timestamp == t.timestamp[0]


@pytest.mark.parametrize("text, line", [
    ("detector,basis,bit,time_ps\n1,A,0,5\n7,A,0,5\n", 3),
    ("detector,basis,bit,time_ps\n1,C,0,5\n", 2),
    ("detector,basis,bit,time_ps\n1,A,2,5\n", 2),
    ("detector,basis,bit,time_ps\n1,A,0\n", 2),
    ("detector,basis,bit,time_ps\n1,A,0,t\n", 2),
    ("det,basis,bit,time_ps\n", 1),
])
def test_event_errors_name_the_line(text, line):
    with pytest.raises(DataFormatError, match=f"line {line}:"):
        formats.parse_events(text)


def test_public_errors_name_the_line():
    with pytest.raises(DataFormatError, match="line 3:"):
        formats.parse_public("basis,time_ps\nA,1\nB,zz\n")


def test_config_round_trip():
    rcv = ReceiverModel(table1_receiver().detectors, prior=0.25)
    back = formats.receiver_from_config(json.loads(formats.dump_receiver(rcv)))
    assert back == rcv


def test_bundled_config_is_table1():
    assert formats.load_receiver("table1") == table1_receiver()


def test_config_accepts_ns_strings():
    cfg = formats.receiver_to_config(table1_receiver())
    cfg["detectors"]["1"]["t0_ps"] = "1.138ns"
    assert formats.receiver_from_config(cfg).response(1).t0 == pytest.approx(1138.0)


@pytest.mark.parametrize("mutate, path", [
    (lambda c: c["detectors"]["2"].pop("tau_e_ps"), "detectors.2.tau_e_ps"),
    (lambda c: c["detectors"]["3"].__setitem__("tau_g_ps", -5), "detectors.3"),
    (lambda c: c["detectors"]["4"].__setitem__("basis", "Z"), "detectors.4.basis"),
    (lambda c: c["detectors"]["1"].__setitem__("bit", 3), "detectors.1.bit"),
    (lambda c: c["detectors"].pop("4"), "detectors"),
    (lambda c: c.__setitem__("prior", "half"), "prior"),
    (lambda c: c.__setitem__("prior", 1.5), "prior"),
    (lambda c: c["detectors"]["2"].__setitem__("bit", 0), "bit"),
    (lambda c: c["detectors"]["3"].__setitem__("basis", "A"), "basis"),
])
def test_config_errors_name_the_field(mutate, path):
    cfg = formats.receiver_to_config(table1_receiver())
    mutate(cfg)
    with pytest.raises(ConfigError, match=path):
        formats.receiver_from_config(cfg)


def test_config_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "prior": 0.5,\n  oops\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        formats.load_receiver(p)


def test_sweep_round_trip():
    sweep = SweepResult([0.0, 100.0, 250.5], {"continuous": [0.0, 0.1, 0.2], 500.0: [0.0, 0.05, 0.1],
                                              1000.0: [0.0, 0.01, 0.09]})
    text = formats.format_sweep_tsv(sweep)
    assert text.splitlines()[0] == "delay_ps\tcontinuous\tbin_500ps\tbin_1000ps"
    back = formats.parse_sweep_tsv(text)
    assert back.delta_t0_ps == sweep.delta_t0_ps
    assert back.mi_bits_by_binwidth == sweep.mi_bits_by_binwidth


def test_sweep_parse_errors():
    with pytest.raises(DataFormatError, match="line 3"):
        formats.parse_sweep_tsv("delay_ps\tcontinuous\n0\t0\n1\n")


def test_text_render_six_digits_and_stable_order():
    rep = average_leakage(table1_receiver(), bin_widths=(500.0,), phases=4)
    d = formats.leakage_report_to_dict(rep)
    text = formats.render(d)
    assert "mi_continuous_bits: 0.0368665\n" in text
    assert text.index("mi_continuous_bits") < text.index("mi_per_basis_bits") < text.index("mi_binned_bits")
    assert formats.render(d) == text
    structured = json.loads(formats.render(d, "structured"))
    assert structured["mi_continuous_bits"] == rep.mi_continuous_bits


def test_fmt_is_lossless():
    x = 0.1 + 0.2
    assert float(formats.fmt(x)) == x


def test_event_table_from_parsed_records():
    t = formats.parse_events("detector,basis,bit,time_ps\n2,A,1,12.5\n3,B,0,-4\n")
    assert isinstance(t, EventTable)
    assert t.detector_id.tolist() == [2, 3] and t.basis.tolist() == [0, 1]
