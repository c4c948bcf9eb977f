import json
from importlib import resources

import numpy as np
import pytest

from timeleak import formats
from timeleak.cli import EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, main
from timeleak.estimation import TimingHistogram
from timeleak.leakage import ReceiverModel, table1_receiver
from timeleak.timing_model import DetectorResponse



def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def structured(capsys, *argv):
    code, out, err = run(capsys, "--format", "structured", *argv)
    assert code == EXIT_OK, err
    return json.loads(out)


@pytest.fixture
def bundled_hist(tmp_path):
    p = tmp_path / "hist.csv"
    p.write_text(resources.files("timeleak.data").joinpath("detector1_hist.csv").read_text())
    return p


@pytest.fixture
def identical_config(tmp_path):
    p = tmp_path / "same.json"
    p.write_text(formats.dump_receiver(ReceiverModel((DetectorResponse(1000.0, 400.0, 290.0),) * 4)))
    return p


# -- fit -------------------------------------------------------------------------------

def test_fit_bundled_histogram(capsys, bundled_hist):
    d = structured(capsys, "fit", bundled_hist)
    assert d["converged"] is True
    assert abs(d["params"]["t0_ps"] - 1138.0) < 3 * d["std_errors_ps"]["t0_ps"]
    assert d["chi2_per_dof"] < 2


def test_fit_text_output(capsys, bundled_hist):
    code, out, _ = run(capsys, "fit", bundled_hist)
    assert code == EXIT_OK
    assert "t0_ps:" in out and "chi2_per_dof:" in out


def test_fit_with_guess_and_background(capsys, bundled_hist):
    d = structured(capsys, "fit", bundled_hist, "--t0", "1.1ns", "--tau-e", "300", "--background")
    assert "background_fraction" in d


def test_fit_malformed_row(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time_ps,count\n0,10\n20,11\n40,oops\n60,4\n")
    code, _, err = run(capsys, "fit", p)
    assert code == EXIT_DATA
    assert "line 4" in err and str(p) in err


def test_fit_min_events(capsys, bundled_hist):
    code, _, err = run(capsys, "fit", bundled_hist, "--min-events", 10 ** 7)
    assert code == EXIT_DATA
    assert "events" in err


def test_fit_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "fit", tmp_path / "nope.csv")
    assert code == EXIT_DATA and "nope.csv" in err


def test_fit_not_converged_exit(capsys, tmp_path, monkeypatch):
    import timeleak.cli as cli
    real = cli.fit_response

    def capped(*a, **k):
        return real(*a, **{**k, "max_iterations": 2})

    monkeypatch.setattr(cli, "fit_response", capped)
    h = TimingHistogram(0.0, 20.0, np.r_[np.zeros(20, int), np.full(30, 100), np.zeros(20, int)])
    p = tmp_path / "h.csv"
    p.write_text(formats.format_histogram(h))
    code, out, _ = run(capsys, "fit", p)
    assert code == EXIT_NOT_CONVERGED
    assert "converged: false" in out


# -- leak ------------------------------------------------------------------------------

def test_leak_table1(capsys):
    d = structured(capsys, "leak", "table1")
    assert abs(d["mi_continuous_bits"] - 0.038) <= 0.008
    assert d["compensated_mi_bits"] is None


def test_leak_compensate(capsys):
    d = structured(capsys, "leak", "table1", "--compensate")
    assert abs(d["compensated_mi_bits"] - 0.003) <= 0.002


def test_leak_binned(capsys):
    d = structured(capsys, "leak", "table1", "--bin-widths", "150,0.5ns", "--phases", "4")
    assert set(d["mi_binned_bits"]) == {"150", "500"}
    assert d["mi_binned_bits"]["500"] <= d["mi_continuous_bits"] + 1e-9


def test_leak_identical_detectors(capsys, identical_config):
    d = structured(capsys, "leak", identical_config, "--bin-widths", "500", "--compensate")
    assert d["mi_continuous_bits"] == 0.0
    assert all(v == 0.0 for v in d["mi_per_basis_bits"].values())
    assert d["mi_binned_bits"]["500"] == 0.0 and d["compensated_mi_bits"] == 0.0
    assert d["eve_map_success"] == pytest.approx(0.5)


def test_leak_invalid_assignment(capsys, tmp_path):
    cfg = formats.receiver_to_config(table1_receiver())
    cfg["detectors"]["2"]["bit"] = 0
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code, _, err = run(capsys, "leak", p)
    assert code == EXIT_USAGE and "bit" in err


def test_leak_output_file(capsys, tmp_path):
    out = tmp_path / "report.txt"
    code, stdout, _ = run(capsys, "leak", "table1", "--output", out)
    assert code == EXIT_OK and stdout == ""
    assert "mi_continuous_bits: 0.0368665" in out.read_text()


def test_global_flags_before_subcommand(capsys, tmp_path):
    out = tmp_path / "r.json"
    code, _, _ = run(capsys, "--format", "structured", "--output", out, "leak", "table1")
    assert code == EXIT_OK
    assert json.loads(out.read_text())["mi_continuous_bits"] == pytest.approx(0.0368665, abs=1e-6)


# -- sweep -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep_text():
    import contextlib
    import io
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        assert main(["sweep", "--phases", "4"]) == EXIT_OK
    return buf.getvalue()


def test_sweep_table(sweep_text):
    lines = sweep_text.splitlines()
    assert lines[0].split("\t") == ["delay_ps", "continuous", "bin_500ps", "bin_1000ps"]
    rows = np.array([[float(x) for x in ln.split("\t")] for ln in lines[1:]])
    assert rows.shape == (21, 4)
    np.testing.assert_array_equal(rows[:, 0], np.arange(0, 2001, 100))
    assert np.all(rows[0, 1:] == 0.0)
    assert rows[5, 1] > 0.25
    assert np.all(rows[:, 3] <= rows[:, 2] + 1e-12) and np.all(rows[:, 2] <= rows[:, 1] + 1e-12)
    assert formats.format_sweep_tsv(formats.parse_sweep_tsv(sweep_text)) == sweep_text


def test_sweep_empty_range(capsys):
    code, _, err = run(capsys, "sweep", "--start", 500, "--stop", 100)
    assert code == EXIT_USAGE and "empty" in err


def test_sweep_bad_step(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--step", "0"])
    assert exc.value.code == EXIT_USAGE


def test_sweep_structured(capsys):
    d = structured(capsys, "sweep", "--stop", "1ns", "--step", "500", "--bin-widths", "500", "--phases", "2")
    assert d["delta_t0_ps"] == [0.0, 500.0, 1000.0]
    assert set(d["mi_bits_by_binwidth"]) == {"continuous", "500"}


# -- simulate / attack ---------------------------------------------------------------------

def _simulate(capsys, tmp_path, tag, *extra, config="table1", n=1000):
    ev, pub = tmp_path / f"ev{tag}.csv", tmp_path / f"pub{tag}.csv"
    code, out, err = run(capsys, "--format", "structured", "simulate", config, "--n", n,
                         "--events", ev, "--public", pub, *extra)
    assert code == EXIT_OK, err
    return ev, pub, json.loads(out)


def test_simulate_byte_identical(capsys, tmp_path):
    a = _simulate(capsys, tmp_path, "a", "--seed", 5)
    b = _simulate(capsys, tmp_path, "b", "--seed", 5)
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()
    c = _simulate(capsys, tmp_path, "c", "--seed", 6)
    assert a[0].read_bytes() != c[0].read_bytes()


def test_simulate_counts_and_resolution(capsys, tmp_path):
    ev, pub, d = _simulate(capsys, tmp_path, "r", "--resolution", 500)
    assert sum(d[f"detector_{k}"] for k in (1, 2, 3, 4)) == d["n_events"] == 1000
    _, stamps = formats.parse_public(pub.read_text())
    assert np.all(np.mod(stamps, 500.0) == 0.0)
    assert len(formats.parse_events(ev.read_text())) == 1000


def test_simulate_rejects_zero(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "table1", "--n", "0", "--events", str(tmp_path / "e"), "--public", str(tmp_path / "p")])
    assert exc.value.code == EXIT_USAGE


def test_simulate_unwritable(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "table1", "--n", 10, "--events", tmp_path / "no" / "e.csv",
                       "--public", tmp_path / "p.csv")
    assert code == EXIT_DATA and "e.csv" in err


def test_simulate_background(capsys, tmp_path):
    ev, _, _ = _simulate(capsys, tmp_path, "bg", "--background", "1", "--frame", "0", "10ns")
    t = formats.parse_events(ev.read_text()).timestamp
    assert t.min() >= 0 and t.max() < 10000


def test_attack_identical_detectors(capsys, tmp_path, identical_config):
    ev, pub, _ = _simulate(capsys, tmp_path, "i", config=identical_config, n=20000)
    d = structured(capsys, "attack", pub, ev, identical_config)
    assert abs(d["empirical_success"] - 0.5) < 4 * np.sqrt(0.25 / 20000)
    assert d["analytic_mi_bits"] == 0.0


def test_attack_truncated_public(capsys, tmp_path):
    ev, pub, _ = _simulate(capsys, tmp_path, "t")
    pub.write_text("\n".join(pub.read_text().splitlines()[:-3]) + "\n")
    code, _, err = run(capsys, "attack", pub, ev, "table1")
    assert code == EXIT_USAGE
    assert "997" in err and "1000" in err


def test_attack_quantized(capsys, tmp_path):
    ev, pub, _ = _simulate(capsys, tmp_path, "q", "--resolution", "1ns", n=20000)
    d = structured(capsys, "attack", pub, ev, "table1", "--resolution", "1ns")
    assert d["analytic_mi_bits"] < 0.0368665
    assert abs(d["empirical_success"] - d["analytic_success"]) < 4 * np.sqrt(0.25 / 20000)


@pytest.mark.slow
def test_attack_table1_million(capsys, tmp_path):
    ev, pub, _ = _simulate(capsys, tmp_path, "m", "--seed", 1, n=10 ** 6)
    d = structured(capsys, "attack", pub, ev, "table1")
    assert d["analytic_mi_bits"] == pytest.approx(0.0368665, abs=1e-6)
    assert d["empirical_mi_bits"] <= d["analytic_mi_bits"] + 3 * d["empirical_mi_stderr"]
    sigma = np.sqrt(d["analytic_success"] * (1 - d["analytic_success"]) / 10 ** 6)
    assert abs(d["empirical_success"] - d["analytic_success"]) < 4 * sigma


def test_attack_is_deterministic(capsys, tmp_path):
    ev, pub, _ = _simulate(capsys, tmp_path, "d")
    a = run(capsys, "attack", pub, ev, "table1")
    b = run(capsys, "attack", pub, ev, "table1")
    assert a == b and a[0] == EXIT_OK


def test_unknown_config(capsys, tmp_path):
    code, _, err = run(capsys, "leak", tmp_path / "missing.json")
    assert code == EXIT_DATA and "missing.json" in err
