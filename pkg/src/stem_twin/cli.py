"""Command-line entry point: ``stem-twin <subcommand> [options]``.

Exit codes: 0 success, 1 domain error, 2 usage error. Options may also come
from a flat ``key=value`` config file (``--config``); flags win over the
file, which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import design_optimizer as dopt
from . import electromech as em
from . import magnetics as mag
from . import pipeline_io as pio
from . import renderer as rnd
from .errors import StemTwinError

SUBCOMMANDS = ("field", "sweep", "optimize", "calibrate", "simulate", "freq", "thermal",
               "replay", "protocol-echo")

# option name -> (type, default, validator or None)
POSITIVE = ("> 0", lambda v: v > 0)
NONNEG = (">= 0", lambda v: v >= 0)
OPTIONS = {
    "field": {
        "r": (float, 0.0, NONNEG), "z": (float, 0.0, None), "current": (float, 1.0, None),
        "loop_radius": (float, None, POSITIVE),
    },
    "sweep": {
        "n_h": (int, 21, (">= 2", lambda v: v >= 2)), "n_w": (int, 21, (">= 2", lambda v: v >= 2)),
        "voltage": (float, 3.0, POSITIVE),
    },
    "optimize": {
        "n_h": (int, 21, (">= 2", lambda v: v >= 2)), "n_w": (int, 21, (">= 2", lambda v: v >= 2)),
        "voltage": (float, 3.0, POSITIVE),
    },
    "calibrate": {"no_t90": (bool, False, None)},
    "simulate": {
        "voltage": (float, 7.0, ("|V| <= 10", lambda v: abs(v) <= 10)),
        "duration": (float, 0.05, POSITIVE), "dt": (float, None, POSITIVE),
        "mode": (str, "blocked", ("free or blocked", lambda v: v in ("free", "blocked"))),
        "waveform": (str, "step", ("step, sine, ramp or impulse",
                                   lambda v: v in ("step", "sine", "ramp", "impulse"))),
        "frequency": (float, 100.0, POSITIVE),
    },
    "freq": {
        "amplitude": (float, 3.0, ("0 < A <= 10", lambda v: 0 < v <= 10)),
        "f_start": (float, 40.0, POSITIVE), "f_stop": (float, 300.0, POSITIVE),
        "f_step": (float, 5.0, POSITIVE), "dt": (float, None, POSITIVE),
        "mode": (str, "free", ("free or blocked", lambda v: v in ("free", "blocked"))),
    },
    "thermal": {
        "amplitude": (float, 3.0, ("0 < A <= 10", lambda v: 0 < v <= 10)),
        "frequency": (float, 100.0, POSITIVE), "duration": (float, 100.0, POSITIVE),
        "cooldown": (float, 0.0, NONNEG), "every": (float, 0.1, POSITIVE),
    },
    "replay": {
        "scene": (str, None, None), "poses": (str, None, None), "finger": (str, None, None),
        "tick_rate": (float, 1000.0, POSITIVE), "telemetry": (str, None, None),
    },
    "protocol-echo": {
        "input": (str, None, None), "random": (int, 0, NONNEG),
        "device": (bool, False, None),
    },
}
COMMON = {"out": (str, None, None), "params": (str, None, None), "plot": (str, None, None),
          "seed": (int, 0, None)}


@dataclass
class RunConfig:
    command: str
    opts: dict = field(default_factory=dict)


class UsageError(Exception):
    pass


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stem-twin",
        description="Digital twin of a finger-worn electromagnetic tactile actuator.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    helps = {
        "field": "magnetic field of the reference coil (or a single loop)",
        "sweep": "grid sweep of the design objective over (h_mag, w_coil)",
        "optimize": "grid sweep followed by simplex refinement",
        "calibrate": "fit lumped parameters to the measured characterization",
        "simulate": "time-domain simulation with step metrics",
        "freq": "sinusoidal frequency sweep",
        "thermal": "coil temperature under a long sine drive",
        "replay": "pose file -> contact -> drive voltage -> simulated device",
        "protocol-echo": "decode a drive-frame stream and re-encode it (or run it on the device)",
    }
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        sp.add_argument("--config", help="flat key=value file of option defaults")
        for opt, (typ, _default, _check) in {**COMMON, **OPTIONS[name]}.items():
            if typ is bool:
                sp.add_argument(_flag(opt), dest=opt, action="store_const", const=True, default=None)
            else:
                sp.add_argument(_flag(opt), dest=opt, type=typ, default=None)
    return parser


def _coerce(typ, text):
    if typ is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return typ(text.strip())


def read_config(path, allowed: dict) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = _coerce(allowed[key][0], val)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from None
    return out


def parse_args(argv) -> RunConfig:
    """Parse and validate; raises SystemExit(2) on usage errors and
    SystemExit(0) after printing --help."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    allowed = {**COMMON, **OPTIONS[ns.command]}
    opts = {k: d for k, (_, d, _) in allowed.items()}
    try:
        if ns.config:
            opts.update(read_config(ns.config, allowed))
    except (UsageError, OSError) as exc:
        parser.error(str(exc))
    for key in allowed:
        val = getattr(ns, key, None)
        if val is not None:
            opts[key] = val
    for key, (_, _, check) in allowed.items():
        val = opts[key]
        if check is not None and val is not None:
            desc, ok = check
            if isinstance(val, float) and not math.isfinite(val) or not ok(val):
                parser.error(f"{_flag(key)} must be {desc}, got {val}")
    return RunConfig(ns.command, opts)


def write_params(path, p: em.LumpedParams, tp: em.ThermalParams | None = None, report=None):
    lines = [f"{k}={v:.10g}" for k, v in p.as_dict().items()]
    if tp is not None:
        lines += [f"R_th={tp.R_th:.10g}", f"C_th={tp.C_th:.10g}", f"T_amb={tp.T_amb:.10g}"]
    if report is not None:
        lines += ["# " + ln for ln in report.lines()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path):
    vals = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            key, val = line.split("=", 1)
            vals[key.strip()] = float(val)
    thermal = None
    if "R_th" in vals:
        thermal = em.ThermalParams(vals.pop("R_th"), vals.pop("C_th"), vals.pop("T_amb", 25.0))
    return em.LumpedParams(**vals), thermal


def _load_params(opts):
    if opts.get("params"):
        p, tp = read_params(opts["params"])
    else:
        p, _ = em.calibrate()
        tp = None
    return p, (tp or em.thermal_fit(R=p.R))


def _out(opts, default):
    return Path(opts.get("out") or default)


def _write_csv(path, header, rows, fmt="%.9g"):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt % v if isinstance(v, float) else str(v) for v in row) + "\n")


def _plot(path, x, ys, xlabel, ylabel, labels=None):
    """Static SVG line chart."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "stem-twin"
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, y in enumerate(ys):
        ax.plot(x, y, label=None if labels is None else labels[j])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if labels:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _cmd_field(o):
    zs = [o["z"]]
    if o["loop_radius"]:
        f = mag.loop_field(mag.LoopSpec(o["loop_radius"], 0.0, o["current"]), o["r"], o["z"])
    else:
        coil = dopt.assemble(dopt.reference_design(), dopt.DesignContext())[0]
        f = mag.coil_field(coil, o["current"], o["r"], o["z"])
    rows = [(float(o["r"]), float(zs[0]), f.b_r, f.b_z)]
    path = _out(o, "field.csv")
    _write_csv(path, ["r_m", "z_m", "B_r_T", "B_z_T"], rows, "%.12g")
    print(f"B_r={f.b_r:.9g} T  B_z={f.b_z:.9g} T -> {path}")


def _ctx(o):
    return dopt.DesignContext(drive_voltage=o["voltage"])


def _cmd_sweep(o):
    res = dopt.grid_sweep(steps=(o["n_h"], o["n_w"]), ctx=_ctx(o))
    path = _out(o, "sweep.csv")
    res.write_csv(path)
    b = res.best
    print(f"{len(res.rows)} feasible cells -> {path}")
    print(f"best: h_mag={b.h_mag * 1e3:.4g} mm w_coil={b.w_coil * 1e3:.4g} mm "
          f"objective={res.best_eval.objective:.6g}")
    if o["plot"]:
        ws = sorted({dp.w_coil for dp, _ in res.rows})
        pick = min(ws, key=lambda w: abs(w - b.w_coil))
        sel = [(dp.h_mag, ev.objective) for dp, ev in res.rows if dp.w_coil == pick]
        _plot(o["plot"], [s[0] * 1e3 for s in sel], [[s[1] for s in sel]],
              "h_mag (mm)", f"objective at w_coil={pick * 1e3:.3g} mm")


def _cmd_optimize(o):
    ctx = _ctx(o)
    res = dopt.grid_sweep(steps=(o["n_h"], o["n_w"]), ctx=ctx)
    best = dopt.refine(res.best, ctx)
    ev = dopt.evaluate_objective(best, ctx)
    ref = dopt.evaluate_objective(dopt.reference_design(), ctx)
    lines = [f"h_mag_mm={best.h_mag * 1e3:.9g}", f"w_coil_mm={best.w_coil * 1e3:.9g}",
             f"objective={ev.objective:.9g}", f"grid_objective={res.best_eval.objective:.9g}",
             f"reference_design_objective={ref.objective:.9g}",
             f"reference_design_ratio={ref.objective / ev.objective:.9g}"]
    path = _out(o, "optimize.txt")
    path.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def _cmd_calibrate(o):
    targets = em.MEASURED_TARGETS
    if o["no_t90"]:
        targets = replace(targets, t90=None)
    p, report = em.calibrate(targets)
    tp = em.thermal_fit(R=p.R)
    path = _out(o, "params.txt")
    write_params(path, p, tp, report)
    print("\n".join(report.lines()))
    print(f"-> {path}")


def _cmd_simulate(o):
    p, _ = _load_params(o)
    fs = 1.0 / o["dt"] if o["dt"] else 1.0 / em.max_stable_dt(p, o["mode"])
    fs = math.ceil(fs)
    V, T = o["voltage"], o["duration"]
    if o["waveform"] == "step":
        sig = em.DriveSignal.step(V, T, fs)
    elif o["waveform"] == "sine":
        sig = em.DriveSignal.sine(V, o["frequency"], T, fs)
    elif o["waveform"] == "ramp":
        sig = em.DriveSignal.ramp(V, 0.5 * T, T, fs)
    else:
        sig = em.DriveSignal.impulse(V, 0.002, T, fs)
    tr = em.simulate(p, sig, o["mode"], dt=1.0 / fs)
    path = _out(o, "trace.csv")
    pio.write_trace(tr, path)
    print(f"{len(tr)} rows -> {path}")
    if o["mode"] == "blocked" and o["waveform"] == "step":
        m = em.step_metrics(tr)
        print(f"t90={m['t90'] * 1e3:.6g} ms F_ss={m['F_ss']:.6g} N")
    if o["plot"]:
        col = tr.F_contact if o["mode"] == "blocked" else tr.accel
        _plot(o["plot"], tr.time * 1e3, [col], "t (ms)",
              "force (N)" if o["mode"] == "blocked" else "acceleration (G)")


def _cmd_freq(o):
    p, _ = _load_params(o)
    freqs = np.arange(o["f_start"], o["f_stop"] + 0.5 * o["f_step"], o["f_step"])
    tab = em.freq_sweep(p, [o["amplitude"]], freqs, o["mode"], dt=o["dt"])
    path = _out(o, "freq.csv")
    col = "F_N" if o["mode"] == "blocked" else "accel_G"
    _write_csv(path, ["f_Hz", "amplitude_V", col], [tuple(map(float, r)) for r in tab])
    j = int(np.argmax(tab[:, 2]))
    print(f"peak {tab[j, 2]:.6g} at {tab[j, 0]:.6g} Hz -> {path}")
    if o["plot"]:
        _plot(o["plot"], tab[:, 0], [tab[:, 2]], "f (Hz)", col)


def _cmd_thermal(o):
    p, tp = _load_params(o)
    cur, dt = em.periodic_current(p, o["amplitude"], o["frequency"], o["duration"])
    T = em.thermal_sim(tp, p.R, cur, dt)
    stride = max(1, int(round(o["every"] / dt)))
    times = np.arange(len(T)) * dt
    rows = [(float(t), float(v)) for t, v in zip(times[::stride], T[::stride])]
    t_end = len(T) * dt
    a = math.exp(-dt / tp.tau)
    T_end = tp.T_amb + a * (T[-1] - tp.T_amb) + tp.R_th * (1 - a) * cur[-1] ** 2 * p.R
    rows.append((t_end, T_end))
    if o["cooldown"] > 0:
        step = o["every"]
        n = int(round(o["cooldown"] / step))
        Tc = em.thermal_sim(tp, p.R, np.zeros(n + 1), step, T0=T_end)
        rows += [(t_end + (k + 1) * step, float(v)) for k, v in enumerate(Tc[1:])]
    path = _out(o, "thermal.csv")
    _write_csv(path, ["t_s", "T_C"], rows)
    print(f"T({t_end:.6g} s) = {T_end:.4f} C -> {path}")
    if o["plot"]:
        arr = np.array(rows)
        _plot(o["plot"], arr[:, 0], [arr[:, 1]], "t (s)", "coil temperature (C)")


def replay(scene, poses, params, thermal, tick_rate=1000.0, finger=None):
    """Render a pose stream tick by tick and stream it to the device.

    Fingertip positions are linearly interpolated between pose records.
    Returns (commands, telemetry_frames, device).
    """
    if finger is None and poses:
        finger = poses[0].finger
    recs = [r for r in poses if r.finger == finger]
    if not recs:
        return [], [], None
    t = np.array([r.t_ms for r in recs], float) / 1000.0
    xyz = np.array([r.position for r in recs], float)
    n_ticks = int(math.floor((t[-1] - t[0]) * tick_rate + 1e-9)) + 1
    state = rnd.TickState(params, tick_rate)
    device = pio.SimulatedDevice(params, thermal, tick_rate)
    cmds, telem = [], []
    for k in range(n_ticks):
        tk = t[0] + k / tick_rate
        tip = [float(np.interp(tk, t, xyz[:, j])) for j in range(3)]
        cmd = rnd.render_tick(scene, tip, state)
        cmds.append(cmd)
        mv = int(round(cmd.voltage * 1000.0))
        frame = device.tick(mv / 1000.0)
        if frame is not None:
            telem.append(frame)
    return cmds, telem, device


def _cmd_replay(o):
    if not o["scene"] or not o["poses"]:
        raise UsageError("replay needs --scene and --poses")
    scene = rnd.parse_scene(Path(o["scene"]).read_text())
    poses = pio.read_poses(Path(o["poses"]).read_text().splitlines())
    p, tp = _load_params(o)
    cmds, telem, _ = replay(scene, poses, p, tp, o["tick_rate"], o["finger"])
    path = _out(o, "replay.csv")
    rows = [(c.tick, float(c.voltage), int(c.saturated), float(c.governor_gain),
             float(c.spring_voltage), c.contact.object_id or "") for c in cmds]
    _write_csv(path, ["tick", "voltage_V", "saturated", "governor_gain", "spring_V", "object"], rows)
    if o["telemetry"]:
        Path(o["telemetry"]).write_bytes(b"".join(pio.encode_telemetry(f) for f in telem))
    print(f"{len(cmds)} ticks, {len(telem)} telemetry frames -> {path}")
    if o["plot"]:
        _plot(o["plot"], [c.tick / o["tick_rate"] for c in cmds], [[c.voltage for c in cmds]],
              "t (s)", "drive voltage (V)")


def _cmd_protocol_echo(o):
    if o["input"]:
        data = Path(o["input"]).read_bytes()
    else:
        rng = np.random.default_rng(o["seed"])
        frames = [pio.DeviceFrame(k & 0xFF, rng.integers(-7000, 7001, rng.integers(1, 33)))
                  for k in range(o["random"])]
        data = b"".join(pio.encode_frame(f) for f in frames)
    frames, errors = pio.decode_stream(data)
    if o["device"]:
        p, tp = _load_params(o)
        out = b"".join(pio.encode_telemetry(t) for t in pio.simulated_device(frames, p, tp))
    else:
        out = b"".join(pio.encode_frame(f) for f in frames)
    path = _out(o, "echo.bin")
    path.write_bytes(out)
    print(f"{len(frames)} frames decoded, {len(errors)} errors, {len(out)} bytes -> {path}")


HANDLERS = {
    "field": _cmd_field, "sweep": _cmd_sweep, "optimize": _cmd_optimize,
    "calibrate": _cmd_calibrate, "simulate": _cmd_simulate, "freq": _cmd_freq,
    "thermal": _cmd_thermal, "replay": _cmd_replay, "protocol-echo": _cmd_protocol_echo,
}


def run(config: RunConfig) -> int:
    try:
        HANDLERS[config.command](config.opts)
    except UsageError as exc:
        print(f"stem-twin: error: {exc}", file=sys.stderr)
        return 2
    except (StemTwinError, ValueError, OSError) as exc:
        print(f"stem-twin: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    return run(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
