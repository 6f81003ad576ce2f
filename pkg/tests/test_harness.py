import json

import numpy as np
import pytest

from radloc.harness import default_config
from radloc.harness.casestudy import (calibrate_snr, first_delay_crb, run_point, scene_delays,
                                      sweep_grid, trial_seed, txrx_for)
from radloc.harness.cli import main
from radloc.harness.config import ConfigError, parse_config, parse_quantity
from radloc.harness.io import OutputError, emit_csv, read_csv
from radloc.harness.localization import run_bound_map

LOCALIZATION = """
[scenario]
type = localization
[grid]
n_subcarriers = 64
subcarrier_spacing = 120 kHz
[snr]
mode = link_budget
tx_power = 10 dBm
noise_psd = -174 dBm/Hz
[scene]
ue = 1 m, 2 m, 0 m
clock_bias = 10 ns
estimate = x, y, B
anchor_0 = 20 m, 20 m, 0 m
anchor_1 = 20 m, -20 m, 0 m
anchor_2 = -20 m, 20 m, 0 m
anchor_3 = -20 m, -20 m, 0 m
[map]
x_range = -10 m, 10 m
y_range = -10 m, 10 m
step = 5 m
z = 0 m
[run]
trials = 5
"""

REF_CRB1 = [10.9827344826809, 5.45896951173931, 2.72547964035069, 1.36224055662308,
              0.68105791322618, 0.340521162315681, 0.170259606912477, 0.0851296816768743]


# -- configuration ----------------------------------------------------------------

def test_quantities():
    assert parse_quantity("0.96 MHz", "frequency") == pytest.approx(0.96e6)
    assert parse_quantity("-174 dBm/Hz", "psd") == pytest.approx(10 ** (-20.4), rel=1e-12)
    assert parse_quantity("20 dB", "ratio") == pytest.approx(100.0)
    with pytest.raises(ConfigError, match="missing unit"):
        parse_quantity("20", "length")
    with pytest.raises(ConfigError):
        parse_quantity("20 Hz", "length")


@pytest.mark.parametrize("text", [
    "[grid]\nbogus = 1\n",
    "[nonsense]\nx = 1\n",
    "[case_study]\nspacing = 20\n",
    "[grid]\nbandwidths = 1 MHz\n",  # not a multiple of the spacing
])
def test_config_strict(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_localization_config_parses():
    cfg = parse_config(LOCALIZATION)
    assert cfg.kind == "localization" and len(cfg.anchors) == 4
    json.dumps(cfg.as_metadata())


# -- CSV -------------------------------------------------------------------------

def test_csv_round_trip_bit_exact(tmp_path, rng):
    vals = rng.standard_normal((5, 3)) * 10.0 ** rng.integers(-20, 20, (5, 3))
    p = emit_csv(["a [m]", "b [s]", "c [-]"], vals.tolist(), tmp_path / "x.csv")
    header, rows = read_csv(p)
    assert header == ["a [m]", "b [s]", "c [-]"]
    assert np.array_equal(np.array(rows), vals)


def test_csv_empty_is_header_only(tmp_path):
    p = emit_csv(["a [m]"], [], tmp_path / "e.csv")
    assert p.read_text() == "a [m]\n"


def test_csv_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OutputError, match="file"):
        emit_csv(["a"], [[1.0]], blocker / "sub" / "x.csv")


# -- calibration and bounds ------------------------------------------------------------

@pytest.fixture(scope="module")
def calibration():
    return calibrate_snr(default_config())


def test_calibration_reference(calibration):
    cfg = default_config()
    assert calibration.achieved_crb == pytest.approx(0.0851, rel=1e-9)
    g = sweep_grid(cfg, 0.96e6)
    low, _, _ = first_delay_crb(scene_delays(cfg)[:1], [1.0], g, txrx_for(g, calibration.snr),
                                propagation_speed=3e8)
    assert low == pytest.approx(10.98, rel=0.02)
    assert calibrate_snr(default_config()).snr == calibration.snr


def test_doubling_snr_scales_bound(calibration):
    cfg = default_config()
    g = sweep_grid(cfg, 15.36e6)
    d = scene_delays(cfg)[:1]
    a, _, _ = first_delay_crb(d, [1.0], g, txrx_for(g, calibration.snr), propagation_speed=3e8)
    b, _, _ = first_delay_crb(d, [1.0], g, txrx_for(g, 2 * calibration.snr),
                              propagation_speed=3e8)
    assert b / a == pytest.approx(1 / np.sqrt(2), rel=1e-9)


def test_single_path_curve_and_ratios(calibration):
    cfg = default_config()
    d = scene_delays(cfg)[:1]
    out = []
    for bw in cfg.values["grid"]["bandwidths"]:
        g = sweep_grid(cfg, bw)
        out.append(first_delay_crb(d, [1.0], g, txrx_for(g, calibration.snr),
                                   propagation_speed=3e8)[0])
    assert np.allclose(out, REF_CRB1, rtol=0.05)
    ratios = np.array(out[:-1]) / np.array(out[1:])
    assert np.all((ratios >= 1.99) & (ratios <= 2.02))


def test_bound_map_symmetry():
    bmap = run_bound_map(parse_config(LOCALIZATION.replace("ue = 1 m, 2 m, 0 m", "ue = 0 m, 0 m, 0 m")))
    peb = bmap.peb()
    assert np.allclose(peb, peb[::-1, :], rtol=1e-9)
    assert np.allclose(peb, peb[:, ::-1], rtol=1e-9)
    assert np.allclose(peb, peb.T, rtol=1e-9)
    c = len(bmap.xs) // 2
    assert peb[c, c] <= peb[0, 0]


def test_bound_map_anchor_removal():
    full = run_bound_map(parse_config(LOCALIZATION)).peb()
    three = run_bound_map(parse_config(LOCALIZATION.replace("anchor_3 = -20 m, -20 m, 0 m\n", "")))
    assert np.all(three.peb() >= full * (1 - 1e-12))


# -- seeding -----------------------------------------------------------------------

def test_seed_keyed_by_values():
    a = trial_seed(7, 15.36e6, 5, 3).generate_state(4)
    b = trial_seed(7, 15.36e6, 5, 3).generate_state(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, trial_seed(7, 15.36e6, 5, 4).generate_state(4))


def test_bandwidth_order_does_not_change_trials(calibration):
    cfg = default_config()
    cfg.set("run", "trials", 3)
    one = run_point(cfg, 30.72e6, 5, calibration.snr)
    cfg.set("grid", "bandwidths", list(reversed(cfg.values["grid"]["bandwidths"])))
    two = run_point(cfg, 30.72e6, 5, calibration.snr)
    assert one.errors == two.errors and one.lhat == two.lhat


# -- CLI ---------------------------------------------------------------------------

def test_cli_resolve_and_calibrate(tmp_path):
    out = tmp_path / "res.csv"
    assert main(["resolve", "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert rows[0][header.index("distance_res [m]")] == 312.5
    assert main(["calibrate", "--out", str(tmp_path / "cal.csv")]) == 0


def test_cli_sweep_outputs(tmp_path):
    out = tmp_path / "sweep.csv"
    cfg = tmp_path / "s.ini"
    cfg.write_text("[grid]\nbandwidths = 61.44 MHz, 122.88 MHz\n")
    assert main(["sweep", "--config", str(cfg), "--trials", "2", "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert len(rows) == 2 and header[0] == "bandwidth [MHz]"
    curves = (tmp_path / "sweep.plot.csv").read_text().splitlines()
    assert curves[0] == "curve,x,y"
    names = {line.split(",")[0] for line in curves[1:]}
    assert names == {"spacing", "resolution", "crb_1path", "crb_5path", "rmse_1path",
                     "rmse_5path"}
    meta = json.loads((tmp_path / "sweep.meta.json").read_text())
    assert meta["reference_comparable"] is True


def test_cli_config_error(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\nbogus = 3\n")
    assert main(["resolve", "--config", str(bad)]) == 2
    assert main(["bound", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["bound"]) == 2  # case-study config for a localization command


def test_cli_not_identifiable(tmp_path):
    text = LOCALIZATION.split("[map]")[0]
    for k in (1, 2, 3):
        text = "\n".join(l for l in text.splitlines() if not l.startswith(f"anchor_{k}"))
    cfg = tmp_path / "one.ini"
    cfg.write_text(text)
    assert main(["bound", "--config", str(cfg), "--out", str(tmp_path / "b.csv")]) == 3


def test_cli_bound_and_simulate(tmp_path):
    cfg = tmp_path / "loc.ini"
    cfg.write_text(LOCALIZATION.split("[map]")[0] + "[run]\ntrials = 3\n")
    assert main(["bound", "--config", str(cfg), "--out", str(tmp_path / "b.csv")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == 0
    _, rows = read_csv(tmp_path / "s.csv")
    assert len(rows) == 3
