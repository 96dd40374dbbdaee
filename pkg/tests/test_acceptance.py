"""Acceptance runs, one test per criterion.

Each test prints a single ``[acceptance] Cn PASS|FAIL: ...`` line before
asserting, so ``pytest -s`` (or the captured output on failure) shows the
measured numbers next to the thresholds.
"""
import json
import time

import numpy as np
import pytest

from photomott.analysis import (
    extract_speed,
    propagation_experiment,
    reflection_guard,
    scan_dissipation,
    v_max_doublon,
    v_max_holon,
)
from photomott.cli import main
from photomott.dynamics import TimeGrid, default_dt, evolve_master
from photomott.entanglement import (
    bosonic_generator_forms,
    generator_basis,
    measure_moments,
    negativity,
    partial_trace_pair,
    tomography_reconstruct,
)
from photomott.hilbert import LatticeSpec, embed, local_annihilation
from photomott.states import fock_state, mott_state, prepare_ideal, prepare_via_pulse
from photomott.trajectories import TrajectoryConfig, apply_jump, ensemble_average

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def _report(tag, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {tag} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return _report


def test_c1_number_decay_law(report):
    spec = LatticeSpec(L=5, U=100.0, J=1.0, gamma=0.1)
    t0 = time.perf_counter()
    ev = evolve_master(mott_state(spec), spec, TimeGrid.for_spec(spec, 2.0, save_every=0.05))
    wall = time.perf_counter() - t0
    rel = float(np.max(np.abs(ev.n_photons / (5 * np.exp(-0.1 * ev.times)) - 1)))
    ok = rel < 1e-5 and wall < 60
    report("C1", ok, f"max rel dev {rel:.2e} (< 1e-5) over {len(ev.times)} snapshots, {wall:.1f} s (< 60 s)")
    assert ok


def test_c2_jump_asymmetry(report):
    spec = LatticeSpec(L=2)
    loss0 = embed(local_annihilation(3), 0, spec)
    psi_h = (fock_state(spec, [0, 1]) + fock_state(spec, [1, 0])) / np.sqrt(2)
    psi_d = (fock_state(spec, [2, 1]) + fock_state(spec, [1, 2])) / np.sqrt(2)
    n_h = negativity(partial_trace_pair(apply_jump(psi_h, loss0), 0, 1, spec))
    n_d = negativity(partial_trace_pair(apply_jump(psi_d, loss0), 0, 1, spec))
    ok = n_h == 0.0 and abs(n_d - np.sqrt(2) / 3) < 1e-10
    report("C2", ok, f"holon post-jump N = {n_h!r} (== 0), doublon post-jump N = {n_d:.12f} "
                     f"(sqrt2/3 = {np.sqrt(2) / 3:.12f})")
    assert ok


def test_c3_tomography_equivalence(report):
    spec = LatticeSpec(L=5, U=33.3, J=1.0, gamma=0.1)
    psi, _ = prepare_ideal(spec, "doublon")
    t0 = time.perf_counter()
    ev = evolve_master(psi, spec, TimeGrid.for_spec(spec, 1.0, save_every=0.05), store_states=True)
    pairs = [(a, b) for a in range(5) for b in range(a + 1, 5)]
    worst = 0.0
    for rho in ev.states:
        for a, b in pairs:
            ref = partial_trace_pair(rho, a, b, spec)
            rec = tomography_reconstruct(measure_moments(rho, a, b, spec))
            worst = max(worst, float(np.abs(rec - ref).max()))
    wall = time.perf_counter() - t0
    forms = float(np.abs(bosonic_generator_forms() - generator_basis()).max())
    ok = worst < 1e-8 and forms < 1e-15 and wall < 120
    report("C3", ok, f"max |reconstructed - partial trace| {worst:.2e} (< 1e-8) over {len(ev.states)} "
                     f"snapshots x {len(pairs)} pairs; bosonic vs matrix forms {forms:.1e}; {wall:.1f} s (< 120 s)")
    assert ok


def test_c4_propagation_ordering(report):
    gammas = [0.0, 0.1, 0.4]
    t0 = time.perf_counter()
    runs = {g: propagation_experiment("doublon", LatticeSpec(L=7, U=33.3, gamma=g), "exact", [1, 2])
            for g in gammas}
    wall = time.perf_counter() - t0
    save = TimeGrid.for_spec(LatticeSpec(L=7, U=33.3), 1.0, save_every=0.01).save_interval
    found = all(runs[g].peaks[r].found and not runs[g].peaks[r].at_edge for g in gammas for r in (1, 2))
    ordered = all(runs[g].peaks[2].t_peak > runs[g].peaks[1].t_peak for g in gammas)
    shifts = {r: float(np.ptp([runs[g].peaks[r].t_peak for g in gammas])) for r in (1, 2)}
    shift_ok = all(s < save for s in shifts.values())
    decreasing = all(np.all(np.diff([runs[g].peaks[r].n_peak for g in gammas]) < 0) for r in (1, 2))
    ok = found and ordered and shift_ok and decreasing and wall < 900
    table = "; ".join(
        f"g={g}: t1={runs[g].peaks[1].t_peak:.4f} N1={runs[g].peaks[1].n_peak:.4f} "
        f"t2={runs[g].peaks[2].t_peak:.4f} N2={runs[g].peaks[2].n_peak:.4f}" for g in gammas)
    report("C4", ok, f"peaks found {found}, t2 > t1 {ordered}, t_peak spread r=1 {shifts[1]:.4f} "
                     f"r=2 {shifts[2]:.4f} (< save interval {save:.4f}) {shift_ok}, N_peak decreasing "
                     f"{decreasing}, {wall:.0f} s (< 900 s) [{table}]")
    assert ok


def test_c5_speed_vs_formula(report):
    t0 = time.perf_counter()
    lines, ok = [], True
    for u in (10.0, 20.0, 33.3):
        spec = LatticeSpec(L=13, U=u, J=1.0)
        speeds = {}
        for protocol, formula in (("doublon", v_max_doublon), ("holon", v_max_holon)):
            vf = formula(u, 1.0)
            grid = TimeGrid(t_max=reflection_guard(13, 1, vf), dt=0.01)
            res = propagation_experiment(protocol, spec, "pure", [1, 2, 3, 4], grid, pure_method="expm")
            v = res.speed.speed if res.speed is not None else float("nan")
            speeds[protocol] = v
            dev = abs(v - vf) / vf
            ok &= bool(dev < 0.15)
            used = res.speed.r_values if res.speed is not None else []
            lines.append(f"U={u:g} {protocol} v={v:.3f} formula={vf:.3f} dev={100 * dev:.1f}% r={used}")
        ratio = speeds["doublon"] / speeds["holon"]
        ok &= bool(abs(ratio - 2.0) <= 0.2)
        lines.append(f"U={u:g} ratio={ratio:.3f}")
    wall = time.perf_counter() - t0
    ok &= wall < 1800
    report("C5", ok, "; ".join(lines) + f"; {wall:.0f} s (< 1800 s); thresholds 15% and 2.0 +- 0.2")
    assert ok


def test_c6_dissipation_asymmetry(report):
    tmpl = LatticeSpec(L=5, U=100.0, J=1.0)
    t0 = time.perf_counter()
    deph_rates = [0.0, 0.5, 1.0, 2.0]
    deph = {p: scan_dissipation(p, tmpl, deph_rates, "dephasing") for p in ("doublon", "holon")}
    loss_rates = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0]
    loss = {p: scan_dissipation(p, tmpl, loss_rates, "loss") for p in ("doublon", "holon")}
    wall = time.perf_counter() - t0

    nd = np.array([r.peak.n_peak for r in deph["doublon"]])
    nh = np.array([r.peak.n_peak for r in deph["holon"]])
    rel = np.abs(nd - nh) / nd
    ok_a = bool(np.all(rel < 0.02))

    ld = np.array([r.peak.n_peak for r in loss["doublon"]])
    lh = np.array([r.peak.n_peak for r in loss["holon"]])
    zero = [g for g, a, b in zip(loss_rates, lh, ld) if a == 0.0 and b > 0.0]
    ok_b = bool(zero)

    def curvature(rows):
        # ln N_peak on the uniform 0.25 sub-grid, restricted to the first-arrival front
        t_ref = rows[0].peak.t_peak
        pts = [r for r in rows if r.rate in (0.0, 0.25, 0.5, 0.75, 1.0)
               and r.peak.found and abs(r.peak.t_peak - t_ref) < 0.1]
        logs = np.log([r.peak.n_peak for r in pts])
        d2 = np.diff(logs, 2)
        return d2, len(pts)

    ok_c, parts = True, []
    for p in ("doublon", "holon"):
        d2, n = curvature(loss[p])
        # interpolated peaks move ln N by < 1e-3 from the sampled maximum
        sig = d2.size > 0 and bool(np.max(np.abs(d2)) > 0.01)
        ok_c &= sig
        parts.append(f"{p} second differences of ln N_peak {np.round(d2, 4).tolist()} on {n} points")
    ok = ok_a and ok_b and ok_c and wall < 1200
    report("C6", ok, f"(a) dephasing |D-H|/D = {np.round(rel, 4).tolist()} (< 0.02) {ok_a}; "
                     f"(b) holon zero while doublon > 0 at rates {zero} {ok_b} "
                     f"[holon {np.round(lh, 5).tolist()}, doublon {np.round(ld, 5).tolist()}]; "
                     f"(c) {'; '.join(parts)} (|.| > 0.01) {ok_c}; {wall:.0f} s (< 1200 s)")
    assert ok


def _rms(a, b):
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2)))


def test_c7_trajectory_vs_exact(report):
    spec = LatticeSpec(L=4, U=33.3, J=1.0, gamma=0.1)
    psi, _ = prepare_ideal(spec, "doublon", site=1)
    pair = (0, 2)
    grid = TimeGrid.for_spec(spec, 2.0, save_every=0.1)
    t0 = time.perf_counter()
    ex = evolve_master(psi, spec, grid, pairs=[pair])
    ex_rdm = ex.rdms[pair]
    ex_neg = np.array([negativity(x) for x in ex_rdm])

    def run(n, seed):
        cfg = TrajectoryConfig(n_traj=n, master_seed=seed).with_grid(grid)
        return ensemble_average(psi, spec, cfg, [pair]).rdms[pair]

    main_rdm = run(2000, 2000)
    dev = float(np.abs(main_rdm - ex_rdm).max())
    dneg = float(np.max(np.abs(np.array([negativity(x) for x in main_rdm]) - ex_neg)))
    ns = [250, 1000, 4000]
    errs = [_rms(run(n, n), ex_rdm) for n in ns]
    slope = float(np.polyfit(np.log(ns), np.log(errs), 1)[0])
    wall = time.perf_counter() - t0
    ok = dev < 0.02 and dneg < 0.02 and abs(slope + 0.5) < 0.2 and wall < 600
    report("C7", ok, f"n=2000: max RDM dev {dev:.4f} (< 0.02), max |dN_1| {dneg:.4f} (< 0.02); "
                     f"rms error {dict(zip(ns, np.round(errs, 5)))} slope {slope:.3f} (-0.5 +- 0.2); "
                     f"{wall:.0f} s (< 600 s)")
    assert ok


def test_c8_determinism_across_threads(report, tmp_path):
    cfg = tmp_path / "traj.cfg"
    cfg.write_text("L = 5\nU = 33.3\ngamma = 0.1\ninit = doublon\nsolver = trajectory\n"
                   "n_traj = 64\nchunk_size = 8\nt_max = 0.6\nmaster_seed = 1234\n")
    codes = [main(["simulate", "--config", str(cfg), "--out", str(tmp_path / f"t{n}"), "--threads", str(n)])
             for n in (1, 8)]
    a = (tmp_path / "t1" / "negativity.csv").read_bytes()
    b = (tmp_path / "t8" / "negativity.csv").read_bytes()
    ja = json.loads((tmp_path / "t1" / "summary.json").read_text())
    jb = json.loads((tmp_path / "t8" / "summary.json").read_text())
    ok = codes == [0, 0] and a == b and ja["diagnostics"]["jump_counts"] == jb["diagnostics"]["jump_counts"]
    report("C8", ok, f"negativity.csv byte-identical across 1 and 8 threads: {a == b} ({len(a)} bytes, "
                     f"{ja['diagnostics']['jumps_total']} jumps)")
    assert ok


def test_c9_pulse_preparation(report):
    U = 100.0
    _, single = prepare_via_pulse(LatticeSpec(L=1, U=U, J=0.0), 0, U / 50)
    spec3 = LatticeSpec(L=3, U=33.3, J=1.0)
    _, honest = prepare_via_pulse(spec3, 1, spec3.U / 50)
    ok = single.fidelity > 0.99
    report("C9", ok, f"single site J=0 Omega=U/50 fidelity {single.fidelity:.5f} (> 0.99); "
                     f"L=3 U/J=33.3 Omega=U/50 hopping on: fidelity {honest.fidelity:.4f} (reported only)")
    assert ok
