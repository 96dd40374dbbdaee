import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from photomott.analysis import v_max_doublon, v_max_holon
from photomott.cli import ConfigError, RunConfig, main
from photomott.dynamics import TimeGrid, evolve_master, evolve_pure
from photomott.entanglement import measure_moments, tomography_reconstruct
from photomott.hilbert import LatticeSpec
from photomott.states import prepare_ideal

SCHEMA = json.loads((Path(__file__).parents[1] / "docs" / "summary.schema.json").read_text())


def write_config(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, command, text, out="out", *extra):
    cfg = write_config(tmp_path, text)
    code = main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def summary(out):
    doc = json.loads((out / "summary.json").read_text())
    jsonschema.validate(doc, SCHEMA)
    return doc


MINIMAL = "L = 3\ninit = doublon  # inject at the centre\nsolver = exact\nt_max = 2\n"


def test_simulate_minimal(tmp_path):
    code, out = run(tmp_path, "simulate", MINIMAL)
    assert code == 0
    lines = (out / "negativity.csv").read_bytes().split(b"\n")
    assert lines[0] == b"time,r,negativity"
    rows = [l.split(b",") for l in lines[1:] if l]
    assert {r[1] for r in rows} == {b"1"}
    assert b"\r" not in (out / "negativity.csv").read_bytes()
    doc = summary(out)
    assert doc["command"] == "simulate"
    assert doc["config"]["L"] == 3
    assert doc["diagnostics"]["steps"] > 0


def test_simulate_is_reproducible(tmp_path):
    _, a = run(tmp_path, "simulate", MINIMAL, "a")
    _, b = run(tmp_path, "simulate", MINIMAL, "b")
    assert (a / "negativity.csv").read_bytes() == (b / "negativity.csv").read_bytes()
    sa, sb = summary(a), summary(b)
    sa["diagnostics"].pop("wall_time_s")
    sb["diagnostics"].pop("wall_time_s")
    assert sa == sb


def test_csv_float_format(tmp_path):
    _, out = run(tmp_path, "simulate", MINIMAL)
    rows = (out / "negativity.csv").read_text().splitlines()[1:]
    r = [l.split(",") for l in rows]
    # time-major ordering and 12 significant digits
    for t, _, n in r:
        assert t == format(float(t), ".12g")
        assert n == format(float(n), ".12g")
    times = [float(x[0]) for x in r]
    assert times == sorted(times)


def test_trajectory_threads_identical(tmp_path):
    text = ("L = 3\nU = 20\ngamma = 0.3\ninit = doublon\nsolver = trajectory\n"
            "n_traj = 40\nchunk_size = 8\nt_max = 0.4\nmaster_seed = 5\n")
    _, a = run(tmp_path, "simulate", text, "a", "--threads", "1")
    _, b = run(tmp_path, "simulate", text, "b", "--threads", "8")
    assert (a / "negativity.csv").read_bytes() == (b / "negativity.csv").read_bytes()
    assert summary(a)["diagnostics"]["jump_counts"] == summary(b)["diagnostics"]["jump_counts"]


def test_seed_flag_overrides(tmp_path):
    text = ("L = 3\nU = 20\ngamma = 0.5\ninit = doublon\nsolver = trajectory\n"
            "n_traj = 20\nt_max = 0.4\nmaster_seed = 5\n")
    _, a = run(tmp_path, "simulate", text, "a", "--seed", "99")
    assert summary(a)["config"]["master_seed"] == 99


def test_scan_zero_rate_matches_simulate(tmp_path):
    base = "L = 5\nU = 33.3\nsolver = exact\n"
    code, scan_out = run(tmp_path, "scan", base + "protocol = doublon\nrates = 0\nchannel = loss\n", "scan")
    assert code == 0
    lines = (scan_out / "peak_scan.csv").read_text().splitlines()
    assert lines[0] == "rate,channel,protocol,t_peak,n_peak,no_peak_flag"
    rate, channel, protocol, t_peak, n_peak, flag = lines[1].split(",")
    assert (rate, channel, protocol, flag) == ("0", "loss", "doublon", "0")
    _, sim = run(tmp_path, "simulate", base + "init = doublon\npairs = 1\n", "sim")
    peak = summary(sim)["peaks"][0]
    assert float(n_peak) == pytest.approx(peak["n_peak"], rel=1e-10)
    summary(scan_out)


def test_scan_needs_rates(tmp_path):
    code, _ = run(tmp_path, "scan", "L = 3\nU = 20\n")
    assert code != 0


def test_speed_formula_column(tmp_path):
    text = "L = 5\nsolver = pure\npure_method = expm\nu_over_j = 20, 33.3\nprotocols = doublon, holon\n"
    code, out = run(tmp_path, "speed", text)
    assert code == 0
    lines = (out / "speed.csv").read_text().splitlines()
    assert lines[0] == "u_over_j,protocol,speed,uncertainty,v_max_formula"
    for line in lines[1:]:
        u, protocol, speed, unc, vf = line.split(",")
        f = v_max_doublon if protocol == "doublon" else v_max_holon
        assert vf == format(f(float(u), 1.0), ".12g")
    summary(out)


def test_speed_empty_list_is_usage_error(tmp_path, capsys):
    code, _ = run(tmp_path, "speed", "L = 5\nsolver = pure\n")
    assert code != 0
    assert "u_over_j" in capsys.readouterr().err


def test_tomography_check_passes(tmp_path, capsys):
    text = "L = 3\nU = 33.3\ngamma = 0.1\ninit = doublon\nsolver = exact\nt_max = 0.5\nsave_stride = 100\n"
    code, out = run(tmp_path, "tomography-check", text)
    assert code == 0
    assert "ok" in capsys.readouterr().out
    assert summary(out)["tomography_max_error"] < 1e-8


def test_tomography_check_cutoff4_unsupported(tmp_path, capsys):
    code, _ = run(tmp_path, "tomography-check", "L = 3\ncutoff = 4\nU = 10\ninit = doublon\n")
    assert code != 0
    assert "unsupported" in capsys.readouterr().err


def test_tomography_pure_vs_exact_solver():
    spec = LatticeSpec(L=5, U=33.3)
    psi, _ = prepare_ideal(spec, "doublon")
    grid = TimeGrid.for_spec(spec, 0.5, save_every=0.1)
    m = evolve_master(psi, spec, grid, store_states=True)
    p = evolve_pure(psi, None, grid, spec=spec, store_states=True)
    for rho, v in zip(m.states, p.states):
        for a, b in [(1, 3), (0, 4)]:
            ra = tomography_reconstruct(measure_moments(rho, a, b, spec))
            rb = tomography_reconstruct(measure_moments(v, a, b, spec))
            assert np.abs(ra - rb).max() < 1e-6


def test_config_errors(tmp_path, capsys):
    assert run(tmp_path, "simulate", "L = 3\nbogus = 1\n")[0] == 2
    assert "bogus" in capsys.readouterr().err
    assert run(tmp_path, "simulate", "L = three\n")[0] == 2
    assert run(tmp_path, "simulate", "L = 3\ninit = pulse\n")[0] == 2
    assert run(tmp_path, "simulate", "L = 3\nsolver = pure\ngamma = 0.1\n")[0] == 2


def test_dimension_cap_named(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate", "L = 9\nU = 10\nsolver = exact\n")
    assert code == 2
    assert "DENSE_DIM_CAP" in capsys.readouterr().err


def test_config_parsing():
    cfg = RunConfig.from_text("# comment\nL = 5 # trailing\nrates = 0, 0.5,1\npairs=1,2\n\n")
    assert cfg.L == 5 and cfg.rates == [0.0, 0.5, 1.0] and cfg.pairs == [1, 2]
    with pytest.raises(ConfigError):
        RunConfig.from_text("L 5\n")


def test_pulse_init(tmp_path):
    text = "L = 3\nU = 33.3\ninit = pulse\ndrive_amplitude = 0.666\nsolver = pure\nt_max = 0.3\n"
    code, out = run(tmp_path, "simulate", text)
    assert code == 0
    prep = summary(out)["preparation"]
    assert prep["method"] == "pulse" and 0 <= prep["fidelity"] <= 1
