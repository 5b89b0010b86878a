"""Lumped electromechanical and thermal model of the actuator.

State is (x, v, I): magnet displacement (m, +z toward the skin), velocity
and coil current. Two boundary conditions share one parameter set:

* ``free``: the magnet moves against the diaphragm only (accelerometer
  measurements).
* ``blocked``: a stiff load cell presses on the magnet with a preload. The
  diaphragm balances the preload at x = 0, so the net contact term is
  max(0, preload + k_contact*x) - preload, and the reported force is the
  load-cell reading above its preload baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.signal import lfilter

from .errors import (
    CalibrationError,
    InstabilityError,
    NoCrossingError,
    PreconditionError,
)

G = 9.8
MAX_DISPLACEMENT = 5e-3
MAX_DRIVE = 10.0
FREE = "free"
BLOCKED = "blocked"

DEFAULT_PRELOAD = 0.050
DEFAULT_K_CONTACT = 2.0e5
DEFAULT_V_MAX = 7.0
MASS_BOUNDS = (0.38e-3, 1.5e-3)  # kg; magnet alone is 0.377 g


@dataclass(frozen=True)
class LumpedParams:
    R: float
    L: float
    Km: float
    m_mov: float
    k: float
    c: float
    preload: float = DEFAULT_PRELOAD
    k_contact: float = DEFAULT_K_CONTACT
    V_max: float = DEFAULT_V_MAX
    # optional Km(x) lookup: (displacements, force constants)
    km_table: tuple | None = None

    def __post_init__(self):
        for name in ("R", "L", "Km", "m_mov", "k", "preload", "k_contact", "V_max"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val!r}")
        if not (math.isfinite(self.c) and self.c >= 0):
            raise ValueError(f"c must be >= 0 and finite, got {self.c!r}")
        if self.km_table is not None:
            xs, ks = self.km_table
            if len(xs) != len(ks) or len(xs) < 2 or np.any(np.diff(xs) <= 0):
                raise ValueError("km_table needs >= 2 strictly increasing displacements")

    def natural_frequency(self) -> float:
        return math.sqrt(self.k / self.m_mov) / (2.0 * math.pi)

    def as_dict(self) -> dict:
        d = {name: getattr(self, name) for name in
             ("R", "L", "Km", "m_mov", "k", "c", "preload", "k_contact", "V_max")}
        return d


@dataclass(frozen=True)
class ThermalParams:
    R_th: float
    C_th: float
    T_amb: float = 25.0

    def __post_init__(self):
        if not (self.R_th > 0 and self.C_th > 0):
            raise ValueError("thermal resistance and capacitance must be positive")

    @property
    def tau(self) -> float:
        return self.R_th * self.C_th


@dataclass(frozen=True)
class DriveSignal:
    """Uniformly sampled drive voltage, held constant between samples."""

    sample_rate: float
    samples: np.ndarray
    max_frequency: float | None = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        if s.size and np.max(np.abs(s)) > MAX_DRIVE:
            raise ValueError(f"drive sample exceeds the {MAX_DRIVE} V hard bound")
        if self.max_frequency is not None and self.sample_rate < 10.0 * self.max_frequency:
            raise ValueError("sample_rate must be at least 10x the highest synthesized frequency")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def _times(self, duration):
        n = int(round(duration * self.sample_rate))
        return np.arange(n) / self.sample_rate

    @classmethod
    def step(cls, amplitude, duration, sample_rate, t_on=0.0):
        t = np.arange(int(round(duration * sample_rate))) / sample_rate
        return cls(sample_rate, np.where(t >= t_on - 1e-12, amplitude, 0.0))

    @classmethod
    def sine(cls, amplitude, frequency, duration, sample_rate, phase=0.0):
        t = np.arange(int(round(duration * sample_rate))) / sample_rate
        return cls(sample_rate, amplitude * np.sin(2 * math.pi * frequency * t + phase),
                   max_frequency=frequency)

    @classmethod
    def ramp(cls, amplitude, rise_time, duration, sample_rate):
        t = np.arange(int(round(duration * sample_rate))) / sample_rate
        return cls(sample_rate, amplitude * np.clip(t / rise_time, 0.0, 1.0))

    @classmethod
    def impulse(cls, amplitude, width, duration, sample_rate):
        t = np.arange(int(round(duration * sample_rate))) / sample_rate
        return cls(sample_rate, np.where(t < width, amplitude, 0.0))

    @classmethod
    def arbitrary(cls, samples, sample_rate):
        return cls(sample_rate, samples)


@dataclass(frozen=True)
class SimTrace:
    time: np.ndarray
    x: np.ndarray
    v: np.ndarray
    I: np.ndarray
    F_contact: np.ndarray
    accel: np.ndarray  # in G
    mode: str

    def __post_init__(self):
        n = len(self.time)
        for name in ("x", "v", "I", "F_contact", "accel"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if len(arr) != n:
                raise ValueError("trace columns must have equal length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        t = np.asarray(self.time, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "time", t)

    def __len__(self):
        return len(self.time)

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0]) if len(self.time) > 1 else 0.0


def _contact(p: LumpedParams, x):
    """Net load-cell force above the preload baseline (blocked mode)."""
    return np.maximum(0.0, p.preload + p.k_contact * x) - p.preload


def _km_of(p: LumpedParams):
    if p.km_table is None:
        return None
    xs = np.asarray(p.km_table[0], float)
    ks = np.asarray(p.km_table[1], float)
    return lambda x: float(np.interp(x, xs, ks))


class Integrator:
    """Fixed-step classical RK4 over (x, v, I) with a held input voltage.

    Batch simulation and the streaming device both drive the same
    ``run`` method, so their numerics are identical for the same dt.
    """

    def __init__(self, p: LumpedParams, mode: str, dt: float, state=(0.0, 0.0, 0.0)):
        if mode not in (FREE, BLOCKED):
            raise ValueError(f"mode must be 'free' or 'blocked', got {mode!r}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.p = p
        self.mode = mode
        self.dt = dt
        self.state = tuple(float(s) for s in state)
        self.t = 0.0
        self.steps = 0

    def run(self, volts):
        """Advance one step per entry of ``volts``; returns (x, v, I) arrays
        of the state after each step."""
        p = self.p
        R, L, m, k, c = p.R, p.L, p.m_mov, p.k, p.c
        km_const = p.Km
        km_fn = _km_of(p)
        blocked = self.mode == BLOCKED
        preload, kc = p.preload, p.k_contact
        dt = self.dt
        h2 = 0.5 * dt
        h6 = dt / 6.0

        def deriv(x, v, i, V):
            km = km_const if km_fn is None else km_fn(x)
            fc = 0.0
            if blocked:
                fc = preload + kc * x
                fc = (fc if fc > 0.0 else 0.0) - preload
            return v, (km * i - k * x - c * v - fc) / m, (V - R * i - km * v) / L

        x, v, i = self.state
        n = len(volts)
        xs = np.empty(n)
        vs = np.empty(n)
        cs = np.empty(n)
        for j, V in enumerate(volts):
            a1, b1, c1 = deriv(x, v, i, V)
            a2, b2, c2 = deriv(x + h2 * a1, v + h2 * b1, i + h2 * c1, V)
            a3, b3, c3 = deriv(x + h2 * a2, v + h2 * b2, i + h2 * c2, V)
            a4, b4, c4 = deriv(x + dt * a3, v + dt * b3, i + dt * c3, V)
            x += h6 * (a1 + 2 * a2 + 2 * a3 + a4)
            v += h6 * (b1 + 2 * b2 + 2 * b3 + b4)
            i += h6 * (c1 + 2 * c2 + 2 * c3 + c4)
            if not abs(x) <= MAX_DISPLACEMENT:
                self.state = (x, v, i)
                raise InstabilityError(
                    f"|x| exceeded {MAX_DISPLACEMENT * 1e3:g} mm at t={self.t + (j + 1) * dt:.6g} s",
                    partial=(xs[:j], vs[:j], cs[:j]))
            xs[j] = x
            vs[j] = v
            cs[j] = i
        self.state = (x, v, i)
        self.steps += n
        self.t = self.steps * dt
        return xs, vs, cs

    def outputs(self, x, v, i, volts):
        """Contact force (N) and acceleration (G) for state arrays."""
        p = self.p
        km = p.Km if p.km_table is None else np.interp(x, *map(np.asarray, p.km_table))
        fc = _contact(p, x) if self.mode == BLOCKED else np.zeros_like(x)
        acc = (km * i - p.k * x - p.c * v - fc) / p.m_mov / G
        return fc, acc


def max_stable_dt(p: LumpedParams, mode: str = BLOCKED) -> float:
    """Largest step allowed by the resolution rule dt <= sqrt(m/k)/50,
    tightened for the electrical pole and the blocked contact resonance."""
    dt = math.sqrt(p.m_mov / p.k) / 50.0
    dt = min(dt, 0.2 * p.L / p.R)
    if mode == BLOCKED:
        dt = min(dt, 0.2 * math.sqrt(p.m_mov / (p.k + p.k_contact)))
    return dt


def _substeps(signal: DriveSignal, dt: float) -> int:
    ratio = 1.0 / (signal.sample_rate * dt)
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-6 * ratio:
        raise PreconditionError("dt must divide the signal sample period")
    return n


def default_dt(p: LumpedParams, signal: DriveSignal, mode: str) -> float:
    period = 1.0 / signal.sample_rate
    return period / math.ceil(period / max_stable_dt(p, mode) - 1e-9)


def simulate(p: LumpedParams, s: DriveSignal, mode: str = BLOCKED, dt: float | None = None,
             state0=(0.0, 0.0, 0.0)) -> SimTrace:
    """Integrate the coupled circuit/mechanics with classical RK4.

    The input is zero-order held over each sample period, and ``dt`` must
    divide that period. The returned trace holds the initial state plus one
    row per integration step.
    """
    if dt is None:
        dt = default_dt(p, s, mode)
    if not dt > 0:
        raise PreconditionError("dt must be > 0")
    if dt > math.sqrt(p.m_mov / p.k) / 50.0 * (1 + 1e-9):
        raise PreconditionError("dt exceeds sqrt(m_mov/k)/50")
    if s.max_frequency and dt > 1.0 / (20.0 * s.max_frequency) * (1 + 1e-9):
        raise PreconditionError("dt exceeds 1/(20 f) of the drive content")
    n_sub = _substeps(s, dt)
    volts = np.repeat(s.samples, n_sub)
    integ = Integrator(p, mode, dt, state0)
    xs, vs, cs = integ.run(volts.tolist())
    x = np.concatenate([[state0[0]], xs])
    v = np.concatenate([[state0[1]], vs])
    i = np.concatenate([[state0[2]], cs])
    v_at = np.concatenate([volts, volts[-1:]]) if volts.size else np.zeros(1)
    fc, acc = integ.outputs(x, v, i, v_at)
    time = np.arange(len(x)) * dt
    return SimTrace(time, x, v, i, fc, acc, mode)


def step_metrics(trace: SimTrace, t0: float = 0.0) -> dict:
    """Steady force (mean of the final 10 % of samples) and the first time
    the force reaches 90 % of it, measured from ``t0``."""
    f = trace.F_contact
    if len(f) < 10:
        raise NoCrossingError("trace too short for step metrics")
    tail = max(1, len(f) // 10)
    f_ss = float(np.mean(f[-tail:]))
    if f_ss == 0.0:
        raise NoCrossingError("steady force is zero")
    y = f / f_ss
    mask = trace.time >= t0
    idx = np.nonzero((y >= 0.9) & mask)[0]
    if idx.size == 0:
        raise NoCrossingError("force never reaches 90 % of its steady value")
    j = int(idx[0])
    t = trace.time
    if j == 0 or not mask[j - 1]:
        t90 = t[j]
    else:
        frac = (0.9 - y[j - 1]) / (y[j] - y[j - 1])
        t90 = t[j - 1] + frac * (t[j] - t[j - 1])
    return {"t90": float(t90 - t0), "F_ss": f_ss}


def _linear_system(p: LumpedParams, mode: str):
    """State matrix and input vector of the small-signal model."""
    kk = p.k + (p.k_contact if mode == BLOCKED else 0.0)
    A = np.array([
        [0.0, 1.0, 0.0],
        [-kk / p.m_mov, -p.c / p.m_mov, p.Km / p.m_mov],
        [0.0, -p.Km / p.L, -p.R / p.L],
    ])
    B = np.array([0.0, 0.0, 1.0 / p.L])
    return A, B


def slowest_time_constant(p: LumpedParams, mode: str) -> float:
    A, _ = _linear_system(p, mode)
    return float(1.0 / np.min(np.abs(np.linalg.eigvals(A).real)))


def freq_sweep(p: LumpedParams, amplitudes, freqs, mode: str = FREE, dt: float | None = None,
               settle_periods: int = 5, measure_periods: int = 5) -> np.ndarray:
    """Steady sinusoidal response table with rows (f, A_V, amplitude).

    Amplitude is half the peak-to-peak of the contact force (N, blocked) or
    acceleration (G, free) over the last ``measure_periods`` periods. The
    transient discard is at least ``settle_periods`` and long enough for
    eight slowest time constants to elapse.
    """
    tau = slowest_time_constant(p, mode)
    rows = []
    for amp in np.atleast_1d(amplitudes):
        for f in np.atleast_1d(freqs):
            f = float(f)
            step = dt if dt is not None else max_stable_dt(p, mode)
            step = min(step, 1.0 / (20.0 * f))
            n_settle = max(settle_periods, math.ceil(8.0 * tau * f))
            duration = (n_settle + measure_periods) / f
            sig = DriveSignal.sine(float(amp), f, duration, 1.0 / step)
            tr = simulate(p, sig, mode, dt=step)
            keep = tr.time >= duration - measure_periods / f - 1e-12
            out = tr.F_contact if mode == BLOCKED else tr.accel
            seg = out[keep]
            rows.append((f, float(amp), 0.5 * float(seg.max() - seg.min())))
    return np.array(rows)


def accel_response(p: LumpedParams, freqs, amplitude: float = 1.0) -> np.ndarray:
    """Analytic steady free-mode acceleration amplitude (G) for a sine drive."""
    w = 2.0 * math.pi * np.asarray(freqs, float)
    mech = p.k - p.m_mov * w**2 + 1j * w * p.c
    elec = p.R + 1j * w * p.L
    x = p.Km * amplitude / (mech * elec + 1j * w * p.Km**2)
    return np.abs(w**2 * x) / G


def accel_peak(p: LumpedParams, amplitude: float = 1.0, f_lo=5.0, f_hi=5000.0):
    """Frequency (Hz) and height (G) of the analytic acceleration peak."""
    grid = np.geomspace(f_lo, f_hi, 1500)
    a = accel_response(p, grid, amplitude)
    j = int(np.argmax(a))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda f: -accel_response(p, [f], amplitude)[0],
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-6 * grid[j]})
    return float(res.x), float(-res.fun)


def blocked_step_t90(p: LumpedParams, amplitude: float) -> float:
    """t90 of the blocked step response from the exact linear solution.

    Contact is never lost for a positive step, so the blocked model is
    linear and x(t) = A^-1 (e^{At} - I) B u.
    """
    A, B = _linear_system(p, BLOCKED)
    lam, V = np.linalg.eig(A)
    Vinv = np.linalg.inv(V)
    x_ss = -np.linalg.solve(A, B) * amplitude
    t_end = 10.0 / np.min(np.abs(lam.real))
    fastest = np.max(np.abs(lam))
    n = int(min(400_000, max(2000, 40 * fastest * t_end / (2 * math.pi))))
    t = np.linspace(0.0, t_end, n)
    coeff = Vinv @ (-x_ss)
    x = (V[0, :, None] * coeff[:, None] * np.exp(lam[:, None] * t[None, :])).sum(axis=0).real
    y = (x + x_ss[0]) / x_ss[0]
    j = int(np.argmax(y >= 0.9))
    if y[j] < 0.9:
        raise NoCrossingError("linear blocked step never reaches 90 %")
    frac = (0.9 - y[j - 1]) / (y[j] - y[j - 1])
    return float(t[j - 1] + frac * (t[j] - t[j - 1]))


@dataclass(frozen=True)
class CalibrationTargets:
    """Measured quantities the lumped model is fitted to.

    ``accel_floor`` is an inequality (acceleration at that frequency must
    be at least the given G); ``accel_points`` are equality targets.
    """

    v_ref: float | None = 3.0
    i_ref: float | None = 0.35
    f_res: float | None = 210.0
    f_max: float | None = 0.4
    v_max: float = 7.0
    peak_accel: float | None = 58.0
    sweep_amplitude: float = 3.0
    t90: float | None = 0.0446
    accel_floor: tuple | None = (40.0, 1.0)
    accel_points: tuple = ()
    preload: float = DEFAULT_PRELOAD
    k_contact: float = DEFAULT_K_CONTACT
    mass_prior: float = 0.43e-3
    inductance_prior: float = 0.887e-3
    inductance_span: float = 3.0


MEASURED_TARGETS = CalibrationTargets()


@dataclass
class CalibrationReport:
    residuals: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    km_open_circuit: float = 0.0
    km_with_contact: float = 0.0
    success: bool = True
    message: str = ""

    def lines(self):
        out = [f"status: {'ok' if self.success else 'FAILED'} {self.message}".rstrip()]
        out.append(f"Km (F_max*R/V_max, ideal DC gain) = {self.km_open_circuit:.6g} N/A")
        out.append(f"Km (including contact compliance) = {self.km_with_contact:.6g} N/A")
        for key, target in self.targets.items():
            pred = self.predictions.get(key)
            res = self.residuals.get(key)
            out.append(f"{key}: target={target:.6g} predicted={pred:.6g} rel_residual={res:+.4f}")
        return out


def _floor_margin():
    return 1.02


def calibrate(targets: CalibrationTargets = MEASURED_TARGETS):
    """Fit LumpedParams to measured targets.

    R comes from the reference (V, I) pair and Km from the DC blocked force
    at V_max (corrected for the contact spring's share of the stiffness).
    The remaining (L, m_mov, c, k) are solved by bounded least squares in
    log space on relative residuals of the acceleration-peak frequency and
    height, t90 of a blocked V_max step, and any acceleration points. Weak
    log-priors on L and m_mov keep directions the data leave open at their
    physical estimates.

    Returns ``(params, report)``.
    """
    if targets.v_ref is None or targets.i_ref is None:
        raise PreconditionError("targets need a resistance-defining (V, I) pair")
    if targets.f_res is None:
        raise PreconditionError("targets need a resonance frequency f_res")
    if targets.f_max is None:
        raise PreconditionError("targets need the blocked force F_max at V_max")

    R = targets.v_ref / targets.i_ref
    km0 = targets.f_max * R / targets.v_max
    kc = targets.k_contact
    lo_m, hi_m = MASS_BOUNDS
    lo_L = targets.inductance_prior / targets.inductance_span
    hi_L = targets.inductance_prior * targets.inductance_span

    def build(theta):
        L, m, c, k = (float(v) for v in np.exp(theta))
        Km = km0 * (k + kc) / kc
        return LumpedParams(R=R, L=L, Km=Km, m_mov=m, k=k, c=c,
                            preload=targets.preload, k_contact=kc, V_max=targets.v_max)

    def predict(p):
        out = {}
        f_pk, a_pk = accel_peak(p, targets.sweep_amplitude)
        out["f_res"] = f_pk
        if targets.peak_accel is not None:
            out["peak_accel"] = a_pk
        if targets.t90 is not None:
            out["t90"] = blocked_step_t90(p, targets.v_max)
        for f, _ in targets.accel_points:
            out[f"accel@{f:g}Hz"] = float(accel_response(p, [f], targets.sweep_amplitude)[0])
        if targets.accel_floor is not None:
            f, _ = targets.accel_floor
            out[f"accel_floor@{f:g}Hz"] = float(accel_response(p, [f], targets.sweep_amplitude)[0])
        return out

    want = {"f_res": targets.f_res}
    if targets.peak_accel is not None:
        want["peak_accel"] = targets.peak_accel
    if targets.t90 is not None:
        want["t90"] = targets.t90
    for f, g in targets.accel_points:
        want[f"accel@{f:g}Hz"] = g

    def residuals(theta):
        p = build(theta)
        pred = predict(p)
        res = [(pred[key] - val) / val for key, val in want.items()]
        if targets.accel_floor is not None:
            f, g = targets.accel_floor
            need = g * _floor_margin()
            res.append(10.0 * max(0.0, (need - pred[f"accel_floor@{f:g}Hz"]) / need))
        res.append(0.01 * (theta[0] - math.log(targets.inductance_prior)))
        res.append(0.01 * (theta[1] - math.log(targets.mass_prior)))
        return np.array(res)

    m0 = min(max(targets.mass_prior, lo_m), hi_m)
    k0 = m0 * (2.0 * math.pi * targets.f_res) ** 2
    c0 = 0.2 * 2.0 * math.sqrt(k0 * m0)
    L0 = min(max(targets.inductance_prior, lo_L), hi_L)
    theta0 = np.log([L0, m0, c0, k0])
    lower = np.log([lo_L, lo_m, 1e-5, 1.0])
    upper = np.log([hi_L, hi_m, 50.0, 1e7])
    sol = optimize.least_squares(residuals, theta0, bounds=(lower, upper),
                                 x_scale=1.0, xtol=1e-12, ftol=1e-12, gtol=1e-12,
                                 max_nfev=400)
    params = build(sol.x)
    pred = predict(params)
    report = CalibrationReport(
        residuals={key: (pred[key] - val) / val for key, val in want.items()},
        predictions=pred,
        targets=dict(want),
        km_open_circuit=km0,
        km_with_contact=params.Km,
        success=bool(sol.status > 0),
        message=sol.message,
    )
    report.targets["R"] = R
    report.predictions["R"] = params.R
    report.residuals["R"] = 0.0
    if targets.accel_floor is not None:
        f, g = targets.accel_floor
        key = f"accel_floor@{f:g}Hz"
        report.targets[key] = g
        report.residuals[key] = (pred[key] - g) / g
    if sol.status <= 0:
        raise CalibrationError(f"calibration did not converge: {sol.message}", params, report)
    return params, report


def thermal_sim(tp: ThermalParams, R: float, current, dt: float, T0: float | None = None):
    """Coil temperature (deg C) for a sampled current trace.

    Integrates C_th dT/dt = I^2 R - (T - T_amb)/R_th exactly for power held
    over each sample. Output has the same length as ``current``; element 0
    is the initial temperature.
    """
    cur = np.asarray(current, dtype=float)
    y0 = (tp.T_amb if T0 is None else T0) - tp.T_amb
    if cur.size == 0:
        return np.empty(0)
    a = math.exp(-dt / tp.tau)
    b = tp.R_th * (1.0 - a)
    power = cur * cur * R
    out, _ = lfilter([b], [1.0, -a], power, zi=[a * y0])
    return tp.T_amb + np.concatenate([[y0], out[:-1]])


def thermal_fit(R: float = 3.0 / 0.35, i_peak: float = 0.35, t_obs: float = 100.0,
                T_obs: float = 40.0, T_amb: float = 25.0, tau: float = 40.0) -> ThermalParams:
    """Solve R_th (and C_th = tau/R_th) so that a sinusoidal current of
    amplitude ``i_peak`` heats the coil from T_amb to T_obs in t_obs."""
    p_rms = (i_peak / math.sqrt(2.0)) ** 2 * R
    r_th = (T_obs - T_amb) / (p_rms * (1.0 - math.exp(-t_obs / tau)))
    return ThermalParams(R_th=r_th, C_th=tau / r_th, T_amb=T_amb)


def periodic_current(p: LumpedParams, amplitude: float, freq: float, duration: float,
                     dt: float | None = None, mode: str = FREE):
    """Coil current for a long sine drive, built by simulating until the
    response is periodic and repeating the last period.

    ``dt`` is adjusted so a whole number of steps spans one period.
    """
    period = 1.0 / freq
    step = dt if dt is not None else max_stable_dt(p, mode)
    n_per = math.ceil(period / step)
    step = period / n_per
    n_settle = max(5, math.ceil(8.0 * slowest_time_constant(p, mode) * freq))
    sig = DriveSignal.sine(amplitude, freq, (n_settle + 1) * period, 1.0 / step)
    tr = simulate(p, sig, mode, dt=step)
    one = tr.I[-n_per - 1:-1]
    n_total = int(round(duration / step))
    reps = math.ceil(n_total / n_per)
    return np.tile(one, reps)[:n_total], step


def with_km_profile(p: LumpedParams, offsets, km_values, operating_offset: float) -> LumpedParams:
    """Attach a displacement-dependent Km, rescaled so Km(0) equals p.Km.

    ``offsets`` are magnet offsets from the coil centre; displacement x is
    measured from ``operating_offset``.
    """
    offsets = np.asarray(offsets, float)
    km_values = np.asarray(km_values, float)
    km_at_rest = float(np.interp(operating_offset, offsets, km_values))
    scale = p.Km / km_at_rest
    table = (tuple(offsets - operating_offset), tuple(km_values * scale))
    return replace(p, km_table=table)
