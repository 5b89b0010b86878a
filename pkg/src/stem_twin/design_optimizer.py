"""Design-space search over magnet height and coil width.

The figure of merit is f = F / sqrt(P * m): actuation force per square root
of electrical input power and magnet mass. Each design point is assembled
into a coil/magnet pair inside a fixed envelope, the force is computed with
the filament model at the magnet's rest position, and power follows from a
fixed drive voltage across the wound coil's resistance.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .errors import EmptyFeasibleSetError, InfeasibleDesignError, ZeroTurnsError
from .magnetics import (
    NDFEB_DENSITY,
    CoilSpec,
    MagnetSpec,
    MreSpec,
    axial_force,
)

COPPER_RESISTIVITY = 1.68e-8
# wire that winds the 2 mm x 3 mm reference coil to ~8.57 ohm
DEFAULT_WIRE_DIAMETER = 0.1309e-3

SWEEP_HEADER = ["h_mag_mm", "w_coil_mm", "force_N", "power_W", "mass_kg", "objective"]


@dataclass(frozen=True)
class DesignPoint:
    h_mag: float
    w_coil: float

    def __post_init__(self):
        if not (self.h_mag > 0 and self.w_coil > 0):
            raise ValueError("h_mag and w_coil must be positive")


@dataclass(frozen=True)
class DesignEnvelope:
    """Outer limits of the assembled actuator plus the fixed geometry.

    Radial stack: magnet, ``magnet_gap`` clearance, winding, ``wall``.
    Axial stack: the union of coil and magnet extents plus the pole piece.
    """

    max_diameter: float = 11e-3
    max_thickness: float = 6e-3
    magnet_radius: float = 2e-3
    coil_thickness: float = 3e-3
    magnet_gap: float = 0.5e-3
    wall: float = 0.5e-3
    pole_thickness: float = 0.5e-3

    def __post_init__(self):
        for name in ("max_diameter", "max_thickness", "magnet_radius", "coil_thickness"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("magnet_gap", "wall", "pole_thickness"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def coil_inner_radius(self) -> float:
        return self.magnet_radius + self.magnet_gap

    def rest_offset(self, h_mag: float) -> float:
        """Magnet centre relative to coil centre at rest: the magnet's
        mid-height sits in the coil's top plane."""
        return 0.5 * self.coil_thickness

    def outer_diameter(self, dp: DesignPoint) -> float:
        return 2.0 * (self.coil_inner_radius + dp.w_coil + self.wall)

    def stack_height(self, dp: DesignPoint) -> float:
        half_t = 0.5 * self.coil_thickness
        centre = self.rest_offset(dp.h_mag)
        top = max(half_t, centre + 0.5 * dp.h_mag)
        bottom = min(-half_t, centre - 0.5 * dp.h_mag)
        return top - bottom + self.pole_thickness

    def feasible(self, dp: DesignPoint, tol: float = 1e-12) -> bool:
        return (self.outer_diameter(dp) <= self.max_diameter + tol
                and self.stack_height(dp) <= self.max_thickness + tol)


@dataclass(frozen=True)
class WireSpec:
    wire_diameter: float = DEFAULT_WIRE_DIAMETER
    resistivity: float = COPPER_RESISTIVITY
    fill_factor: float = 0.7

    def __post_init__(self):
        if self.wire_diameter <= 0:
            raise ValueError("wire_diameter must be positive")
        if self.resistivity <= 0:
            raise ValueError("resistivity must be positive")
        if not 0 < self.fill_factor <= 1:
            raise ValueError("fill_factor must be in (0, 1]")

    @property
    def area(self) -> float:
        return math.pi * self.wire_diameter**2 / 4.0


@dataclass(frozen=True)
class DesignEvaluation:
    force: float
    power: float
    magnet_mass: float
    objective: float
    resistance: float = float("nan")
    turns: int = 0


@dataclass(frozen=True)
class DesignContext:
    wire: WireSpec = field(default_factory=WireSpec)
    mre: MreSpec = field(default_factory=MreSpec)
    envelope: DesignEnvelope = field(default_factory=DesignEnvelope)
    drive_voltage: float = 3.0
    magnetization: float = 8.75e5
    density: float = NDFEB_DENSITY


def wound_turns(width: float, thickness: float, wire: WireSpec) -> int:
    return int(math.floor(wire.fill_factor * width * thickness / wire.area + 1e-9))


def coil_resistance(coil: CoilSpec, wire: WireSpec) -> float:
    """DC resistance of ``coil`` wound with ``wire`` at the wire's fill factor."""
    n = wound_turns(coil.width, coil.thickness, wire)
    if n < 1:
        raise ZeroTurnsError("wire too thick to fit a single turn in the winding window")
    return wire.resistivity * n * 2.0 * math.pi * coil.mean_radius / wire.area


def magnet_mass(magnet: MagnetSpec) -> float:
    return magnet.density * math.pi * magnet.radius**2 * magnet.height


def objective_value(force: float, power: float, mass: float) -> float:
    return force / math.sqrt(power * mass)


def assemble(dp: DesignPoint, ctx: DesignContext):
    """Coil and magnet for a design point (coil centred at z = 0)."""
    env = ctx.envelope
    n = wound_turns(dp.w_coil, env.coil_thickness, ctx.wire)
    if n < 1:
        raise ZeroTurnsError("wire too thick to fit a single turn in the winding window")
    coil = CoilSpec(env.coil_inner_radius, dp.w_coil, env.coil_thickness, n, 0.0)
    magnet = MagnetSpec(env.magnet_radius, dp.h_mag, ctx.magnetization, ctx.density)
    return coil, magnet


def evaluate_objective(dp: DesignPoint, ctx: DesignContext = DesignContext()) -> DesignEvaluation:
    if not ctx.envelope.feasible(dp):
        raise InfeasibleDesignError(
            f"design h_mag={dp.h_mag * 1e3:.4g} mm, w_coil={dp.w_coil * 1e3:.4g} mm "
            "does not fit the envelope")
    coil, magnet = assemble(dp, ctx)
    R = coil_resistance(coil, ctx.wire)
    current = ctx.drive_voltage / R
    force = axial_force(coil, current, magnet, ctx.envelope.rest_offset(dp.h_mag), ctx.mre)
    power = current * current * R
    mass = magnet_mass(magnet)
    return DesignEvaluation(force, power, mass, objective_value(force, power, mass), R, coil.turns)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("STEM_TWIN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class SweepResult:
    h_values: np.ndarray
    w_values: np.ndarray
    rows: list  # (DesignPoint, DesignEvaluation) for feasible cells, row-major
    best: DesignPoint
    best_eval: DesignEvaluation

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_HEADER)
            for dp, ev in self.rows:
                w.writerow([f"{dp.h_mag * 1e3:.9g}", f"{dp.w_coil * 1e3:.9g}",
                            f"{ev.force:.9g}", f"{ev.power:.9g}",
                            f"{ev.magnet_mass:.9g}", f"{ev.objective:.9g}"])


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SWEEP_HEADER:
            raise ValueError(f"unexpected sweep header {header}")
        return [tuple(float(v) for v in row) for row in reader]


def argmax_design(rows):
    """Best (DesignPoint, DesignEvaluation); ties go to the smallest
    (h_mag, w_coil) lexicographically."""
    return min(rows, key=lambda r: (-r[1].objective, r[0].h_mag, r[0].w_coil))


DEFAULT_RANGES = {"h_mag": (1e-3, 6e-3), "w_coil": (0.5e-3, 3.5e-3)}
DEFAULT_STEPS = (21, 21)


def grid_sweep(ranges=None, steps=DEFAULT_STEPS, ctx: DesignContext = DesignContext(),
               evaluate=None, workers: int | None = None) -> SweepResult:
    """Evaluate every feasible cell of an n_h x n_w grid.

    ``evaluate`` defaults to :func:`evaluate_objective`; cells are evaluated
    independently (optionally on a thread pool) and collected in row-major
    order, h_mag outer.
    """
    ranges = ranges or DEFAULT_RANGES
    n_h, n_w = steps
    if n_h < 2 or n_w < 2:
        raise ValueError("grid needs at least 2 steps per axis")
    evaluate = evaluate or evaluate_objective
    hs = np.linspace(*ranges["h_mag"], n_h)
    ws = np.linspace(*ranges["w_coil"], n_w)
    cells = [DesignPoint(float(h), float(w)) for h in hs for w in ws]
    cells = [dp for dp in cells if ctx.envelope.feasible(dp)]
    if not cells:
        raise EmptyFeasibleSetError("no grid cell fits the envelope")
    workers = workers or _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            evals = list(pool.map(lambda dp: evaluate(dp, ctx), cells))
    else:
        evals = [evaluate(dp, ctx) for dp in cells]
    rows = list(zip(cells, evals))
    best, best_eval = argmax_design(rows)
    return SweepResult(hs, ws, rows, best, best_eval)


def refine(start: DesignPoint, ctx: DesignContext = DesignContext(), objective=None,
           xatol: float = 1e-5, fatol: float = 1e-10, maxiter: int = 400) -> DesignPoint:
    """Nelder-Mead polish of a feasible start point.

    Works in millimetres. Infeasible or invalid trial points get +inf. The
    result never has a lower objective than ``start``.
    """
    if objective is None:
        def objective(dp):
            return evaluate_objective(dp, ctx).objective

    def neg(x_mm):
        h, w = x_mm * 1e-3
        if h <= 0 or w <= 0:
            return math.inf
        dp = DesignPoint(float(h), float(w))
        if not ctx.envelope.feasible(dp):
            return math.inf
        try:
            return -objective(dp)
        except (ValueError, ZeroDivisionError):
            return math.inf

    x0 = np.array([start.h_mag, start.w_coil]) * 1e3
    f0 = neg(x0)
    if not math.isfinite(f0):
        raise InfeasibleDesignError("refine needs a feasible start point")
    res = optimize.minimize(neg, x0, method="Nelder-Mead",
                            options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter,
                                     "initial_simplex": [x0, x0 + [0.1, 0], x0 + [0, 0.1]]})
    if not (res.fun < f0):
        return start
    h, w = res.x * 1e-3
    return DesignPoint(float(h), float(w))


def reference_design() -> DesignPoint:
    return DesignPoint(4e-3, 2e-3)


def shrink(env: DesignEnvelope, factor: float) -> DesignEnvelope:
    return replace(env, max_diameter=env.max_diameter * factor,
                   max_thickness=env.max_thickness * factor)
