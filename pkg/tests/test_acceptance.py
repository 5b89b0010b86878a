"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines.
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from stem_twin import design_optimizer as dopt
from stem_twin import electromech as em
from stem_twin import magnetics as mag
from stem_twin import pipeline_io as pio
from stem_twin import renderer as rnd
from stem_twin.cli import replay


def verdict(n, title, ok, detail):
    print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, f"criterion {n} ({title}) failed: {detail}"


@pytest.fixture(scope="module")
def calibrated():
    return em.calibrate(em.MEASURED_TARGETS)


# 1. field oracle

def _quad_field(a, current, r, z):
    def d3(phi):
        return (r * r + a * a - 2 * a * r * math.cos(phi) + z * z) ** 1.5

    opts = dict(epsabs=0.0, epsrel=1e-10, limit=200)
    bx = integrate.quad(lambda p: a * math.cos(p) * z / d3(p), 0, 2 * math.pi, **opts)[0]
    bz = integrate.quad(lambda p: a * (a - r * math.cos(p)) / d3(p), 0, 2 * math.pi, **opts)[0]
    k = mag.MU0 * current / (4 * math.pi)
    return k * bx, k * bz


def test_criterion_01_field_oracle():
    rng = np.random.default_rng(101)
    worst_axis = 0.0
    for _ in range(100):
        a, cur, z = rng.uniform(1e-4, 0.05), rng.uniform(-5, 5), rng.uniform(-0.1, 0.1)
        fv = mag.loop_field(mag.LoopSpec(a, 0.0, cur), 0.0, z)
        ref = mag.MU0 * cur * a * a / (2 * (a * a + z * z) ** 1.5)
        worst_axis = max(worst_axis, abs(fv.b_z - ref) / abs(ref), abs(fv.b_r))
    worst_off = 0.0
    for _ in range(20):
        a = rng.uniform(1e-3, 1e-2)
        r = rng.uniform(0.1, 2.5) * a
        z = rng.uniform(0.05, 1.5) * a * rng.choice([-1, 1])
        fv = mag.loop_field(mag.LoopSpec(a, 0.0, 1.0), r, z)
        br, bz = _quad_field(a, 1.0, r, z)
        worst_off = max(worst_off, abs(fv.b_r - br) / abs(br), abs(fv.b_z - bz) / abs(bz))
    ok = worst_axis <= 1e-9 and worst_off <= 1e-6
    verdict(1, "field oracle", ok,
            f"on-axis max rel err {worst_axis:.2e} (<=1e-9), off-axis {worst_off:.2e} (<=1e-6)")


# 2. force consistency

def test_criterion_02_force_consistency():
    rng = np.random.default_rng(202)
    worst_n3, worst_ce = 0.0, 0.0
    grid, n_mag, h = (3, 3), 8, 1e-7
    for _ in range(20):
        r_mag = rng.uniform(1e-3, 3e-3)
        coil = mag.CoilSpec(r_mag + rng.uniform(0.2e-3, 1e-3), rng.uniform(0.5e-3, 3e-3),
                            rng.uniform(1e-3, 4e-3), int(rng.integers(50, 500)))
        magnet = mag.MagnetSpec(r_mag, rng.uniform(1e-3, 5e-3), rng.uniform(5e5, 1e6))
        off = rng.uniform(0.2e-3, 3e-3) * rng.choice([-1, 1])
        cur = rng.uniform(0.05, 1.0)
        f = mag.axial_force(coil, cur, magnet, off, coil_grid=grid, magnet_loops=n_mag)
        g = mag.reaction_force(coil, cur, magnet, off, coil_grid=grid, magnet_loops=n_mag)
        worst_n3 = max(worst_n3, abs(f + g) / abs(f))
        loops = mag.coil_filaments(coil, cur, grid)

        def energy(o):
            m = mag.magnet_filaments(magnet, n_mag, o)
            return mag.mutual_flux(loops, [mag.LoopSpec(l.radius, l.axial_pos, -l.current) for l in m])

        ce = (energy(off + h) - energy(off - h)) / (2 * h)
        worst_ce = max(worst_ce, abs(f - ce) / abs(ce))
    ok = worst_n3 <= 1e-6 and worst_ce <= 5e-3
    verdict(2, "force consistency", ok,
            f"third-law max rel {worst_n3:.2e} (<=1e-6), coenergy max rel {worst_ce:.2e} (<=5e-3)")


# 3. objective algebra and re-scan

def test_criterion_03_objective_and_rescan():
    rng = np.random.default_rng(303)
    bad = 0
    for _ in range(1000):
        F, P, m = rng.uniform(1e-3, 2), rng.uniform(1e-2, 5), rng.uniform(1e-5, 1e-2)
        f = dopt.objective_value(F, P, m)
        bad += f != F / math.sqrt(P * m)
        bad += dopt.objective_value(2 * F, P, m) != 2 * f
        bad += dopt.objective_value(F, 4 * P, m) != f / 2
        bad += dopt.objective_value(F, P, 4 * m) != f / 2
    ctx = dopt.DesignContext()
    ranges = {"h_mag": (2e-3, 4e-3), "w_coil": (1e-3, 2e-3)}
    res = dopt.grid_sweep(ranges, (3, 3), ctx)
    best = max(((dp, dopt.evaluate_objective(dp, ctx).objective) for dp, _ in res.rows),
               key=lambda t: (t[1], -t[0].h_mag, -t[0].w_coil))
    consistent = all(ev.objective == dopt.objective_value(ev.force, ev.power, ev.magnet_mass)
                     for _, ev in res.rows)
    ok = bad == 0 and consistent and best[0] == res.best
    verdict(3, "objective algebra + re-scan", ok,
            f"{bad} algebra violations in 1000 triples, self-consistent={consistent}, "
            f"argmax {res.best} vs re-scan {best[0]}")


# 4. design consistency

def test_criterion_04_design_consistency():
    res = dopt.grid_sweep()
    ref = dopt.evaluate_objective(dopt.reference_design()).objective
    ratio = ref / res.best_eval.objective
    verdict(4, "design consistency", ratio >= 0.85,
            f"objective(4 mm, 2 mm)={ref:.4g}, sweep max={res.best_eval.objective:.4g} at "
            f"({res.best.h_mag * 1e3:.3g} mm, {res.best.w_coil * 1e3:.3g} mm), ratio {ratio:.3f} (>=0.85)")


# 5. calibration residuals

def test_criterion_05_calibration(calibrated):
    p, _ = calibrated
    r_ok = p.R == 3.0 / 0.35
    step = em.step_metrics(em.simulate(p, em.DriveSignal.step(7.0, 0.1, 1e4), em.BLOCKED))
    f_ok = abs(step["F_ss"] - 0.4) <= 0.04
    coarse = np.arange(40.0, 301.0, 5.0)
    fine = np.arange(180.0, 241.0, 1.0)
    freqs = np.unique(np.concatenate([coarse, fine]))
    tab = em.freq_sweep(p, [3.0], freqs, em.FREE)
    j = int(np.argmax(tab[:, 2]))
    f_pk, a_pk = tab[j, 0], tab[j, 2]
    res_ok = abs(f_pk - 210) <= 0.05 * 210
    pk_ok = abs(a_pk - 58) <= 0.2 * 58
    in_band = tab[(tab[:, 0] >= 40) & (tab[:, 0] <= 300), 2]
    floor_ok = bool(np.all(in_band >= 1.0))
    ok = r_ok and f_ok and res_ok and pk_ok and floor_ok
    verdict(5, "calibration residuals", ok,
            f"R={p.R:.6g} ohm; F_ss(7 V)={step['F_ss']:.4f} N; resonance {f_pk:g} Hz; "
            f"peak {a_pk:.2f} G; min accel 40-300 Hz {in_band.min():.3f} G")


# 6. held-out cross-prediction

def test_criterion_06_t90_cross_prediction():
    p, _ = em.calibrate(replace(em.MEASURED_TARGETS, t90=None))
    tr = em.simulate(p, em.DriveSignal.step(7.0, 0.3, 1e4), em.BLOCKED)
    t90 = em.step_metrics(tr)["t90"]
    ok = abs(t90 - 44.6e-3) <= 0.3 * 44.6e-3
    verdict(6, "t90 cross-prediction", ok,
            f"t90 = {t90 * 1e3:.3f} ms (target 44.6 ms +/- 30%), L={p.L * 1e3:.3g} mH, "
            f"m_mov={p.m_mov * 1e3:.3g} g, c={p.c:.3g} N s/m")


# 7. thermal

def test_criterion_07_thermal(calibrated):
    p, _ = calibrated
    tp = em.thermal_fit(R=p.R)
    cur, dt = em.periodic_current(p, 3.0, 100.0, 100.0)
    T = em.thermal_sim(tp, p.R, np.append(cur, 0.0), dt)
    t_end = T[-1]
    decay = em.thermal_sim(tp, p.R, np.zeros(20000), 0.05, T0=t_end)
    mono = bool(np.all(np.diff(decay) <= 0) and np.all(decay >= tp.T_amb)
                and decay[-1] - tp.T_amb < 1e-3 * (t_end - tp.T_amb))
    ok = abs(t_end - 40.0) <= 2.0 and mono
    verdict(7, "thermal", ok,
            f"T(100 s)={t_end:.2f} C (40 +/- 2), R_th={tp.R_th:.2f} K/W, decay monotone to T_amb={mono}")


# 8. ODE quality

def test_criterion_08_ode_quality():
    p = em.LumpedParams(R=8.5714, L=1e-3, Km=0.49, m_mov=0.5e-3, k=870.0, c=0.3)
    dt = 1.5e-5
    s = em.DriveSignal.sine(3.0, 150.0, 0.02, 1.0 / dt)

    def final(step):
        tr = em.simulate(p, s, em.FREE, dt=step)
        return np.array([tr.x[-1], tr.v[-1], tr.I[-1]])

    ref = final(dt / 16)
    e1 = np.max(np.abs(final(dt) - ref) / np.abs(ref))
    e2 = np.max(np.abs(final(dt / 2) - ref) / np.abs(ref))
    order = math.log2(e1 / e2)

    q = em.LumpedParams(R=8.57, L=1e-3, Km=1e-12, m_mov=0.5e-3, k=870.0, c=0.0)
    h = math.sqrt(q.m_mov / q.k) / 50
    tr = em.simulate(q, em.DriveSignal(1.0 / h, np.zeros(1000)), em.FREE, dt=h,
                     state0=(1e-4, 0.0, 0.0))
    e = 0.5 * q.m_mov * tr.v**2 + 0.5 * q.k * tr.x**2
    drift = float(np.max(np.abs(e - e[0])) / e[0])
    ok = order >= 3.8 and drift <= 1e-3
    verdict(8, "ODE quality", ok, f"measured order {order:.2f} (>=3.8), energy drift {drift:.2e} per 1000 steps")


# 9. protocol

def _crc_bitwise(data):
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


def test_criterion_09_protocol():
    rng = np.random.default_rng(909)
    n = 1_000_000
    counts = rng.integers(1, 33, n)
    seqs = rng.integers(0, 256, n)
    values = rng.integers(-10000, 10001, (n, 32))
    failures = 0
    for i in range(n):
        f = pio.DeviceFrame(int(seqs[i]), values[i, :counts[i]].tolist())
        if pio.decode_frame(pio.encode_frame(f)) != f:
            failures += 1
    check = pio.crc16(b"123456789")

    mangled_passed = 0
    resync_failed = 0
    for _ in range(2000):
        frames = [pio.DeviceFrame(int(rng.integers(0, 256)),
                                  rng.integers(-10000, 10001, int(rng.integers(1, 33))).tolist())
                  for _ in range(4)]
        raw = [bytearray(pio.encode_frame(f)) for f in frames]
        hit = int(rng.integers(0, 4))
        for _ in range(int(rng.integers(1, 4))):
            pos = int(rng.integers(0, len(raw[hit])))
            raw[hit][pos] ^= int(rng.integers(1, 256))
        got, _ = pio.decode_stream(b"".join(bytes(r) for r in raw))
        for g in got:
            enc = pio.encode_frame(g)
            if g not in frames or _crc_bitwise(enc[:-2]) != int.from_bytes(enc[-2:], "big"):
                mangled_passed += 1
        if any(f not in got for f in frames[hit + 1:]):
            resync_failed += 1
    ok = failures == 0 and check == 0x29B1 and mangled_passed == 0 and resync_failed == 0
    verdict(9, "protocol", ok,
            f"{failures} round-trip failures in 1e6 frames, check value 0x{check:04X}, "
            f"{mangled_passed} mangled frames accepted, {resync_failed} resync failures in 2000 fuzz streams")


# 10. end-to-end replay

def _grasp_poses():
    """Fingertip closes on a sphere, squeezes, slides a little, releases."""
    lines = []
    for t_ms in range(0, 1501, 10):
        s = t_ms / 1500.0
        depth = 4e-3 * math.sin(math.pi * s) ** 2 - 1e-3  # negative = outside
        r = 25e-3 - depth
        ang = 0.2 * s
        lines.append(f"{t_ms},index,{r * math.cos(ang):.9f},{r * math.sin(ang):.9f},0.0")
    return pio.read_poses(lines)


def test_criterion_10_replay(calibrated):
    p, _ = calibrated
    tp = em.thermal_fit(R=p.R)
    poses = _grasp_poses()
    spring, volts = {}, {}
    clamp_ok = zero_ok = device_ok = True
    worst_dev = 0.0
    for k in (100.0, 300.0, 900.0):
        scene = [rnd.SceneObject("obj", "sphere", (0, 0, 0), k, radius=25e-3)]
        cmds, telem, device = replay(scene, poses, p, tp)
        v = np.array([c.voltage for c in cmds])
        spring[k] = np.array([c.spring_voltage for c in cmds])
        volts[k] = v
        clamp_ok &= bool(np.all(np.abs(v) <= 7.0))
        out = np.array([c.contact.object_id is None for c in cmds])
        zero_ok &= bool(np.all(v[out] == 0.0)) and out.any() and (~out).any()
        sent = np.round(v * 1000.0) / 1000.0
        tr = em.simulate(p, em.DriveSignal(1000.0, sent), em.BLOCKED, dt=device.integrator.dt)
        scale = max(np.max(np.abs(tr.F_contact)), 1e-12)
        for t, force, _ in device.records:
            j = int(round(t / device.integrator.dt))
            err = abs(force - tr.F_contact[j]) / max(abs(tr.F_contact[j]), 1e-2 * scale)
            worst_dev = max(worst_dev, err)
        device_ok &= worst_dev <= 1e-2 and len(telem) == len(cmds) // 10
    order_ok = bool(np.all(spring[300.0] >= spring[100.0]) and np.all(spring[900.0] >= spring[300.0]))
    sat = int(np.sum(np.abs(spring[900.0]) > 7.0))
    ok = clamp_ok and zero_ok and order_ok and device_ok
    verdict(10, "end-to-end replay", ok,
            f"clamped={clamp_ok}, zero out of contact={zero_ok}, spring ordered={order_ok} "
            f"({sat} saturated ticks at 900 N/m), device vs batch max rel {worst_dev:.1e} (<=1e-2)")
