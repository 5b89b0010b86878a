"""Axisymmetric magnetostatics for the coil/magnet pair.

Everything is expressed in cylindrical coordinates (r, z) about the common
axis. Sources are circular current filaments; a coil is a rectangular grid of
filaments carrying its ampere-turns, and the permanent magnet is replaced by
its equivalent surface current (a stack of loops on the lateral surface).

Sign convention for forces: +z points from the coil base toward the skin.
The magnet is mounted with its moment pointing toward the coil base, so a
positive drive current pushes it toward +z when it sits above the coil's
mid-plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ellipe, ellipk

from .errors import OutOfRangeError, SingularPointError

MU0 = 4e-7 * math.pi
SINGULAR_GUARD = 1e-9  # m

DEFAULT_MAGNETIZATION = 8.75e5  # A/m, N42-grade NdFeB (~1.1 T remanence)
NDFEB_DENSITY = 7500.0  # kg/m^3
DEFAULT_COIL_GRID = (8, 8)
DEFAULT_MAGNET_LOOPS = 32
DEFAULT_ALPHA = 2.0
CIP_MAX_FRACTION = 0.4

# CIP volume fractions of the four prototype diaphragms.
PRESET_CIP_FRACTIONS = {1: 0.0, 2: 0.1, 3: 0.2, 4: 0.3}


def _check_finite(**values):
    for name, val in values.items():
        if not math.isfinite(val):
            raise ValueError(f"{name} must be finite, got {val!r}")


@dataclass(frozen=True)
class LoopSpec:
    radius: float
    axial_pos: float
    current: float

    def __post_init__(self):
        _check_finite(radius=self.radius, axial_pos=self.axial_pos, current=self.current)
        if self.radius <= 0:
            raise ValueError(f"loop radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class CoilSpec:
    """Rectangular-section winding.

    ``width`` is the radial build (w_coil) and ``thickness`` the axial
    length. A zero width and thickness describe a single filament, which is
    only useful as a degenerate test case.
    """

    inner_radius: float
    width: float
    thickness: float
    turns: int
    axial_center: float = 0.0

    def __post_init__(self):
        _check_finite(inner_radius=self.inner_radius, width=self.width,
                      thickness=self.thickness, axial_center=self.axial_center)
        if self.inner_radius <= 0:
            raise ValueError("coil inner_radius must be > 0")
        if self.width < 0 or self.thickness < 0:
            raise ValueError("coil width and thickness must be >= 0")
        if int(self.turns) != self.turns or self.turns < 1:
            raise ValueError(f"coil turns must be a positive integer, got {self.turns}")

    @property
    def outer_radius(self) -> float:
        return self.inner_radius + self.width

    @property
    def mean_radius(self) -> float:
        return self.inner_radius + 0.5 * self.width

    @property
    def top(self) -> float:
        return self.axial_center + 0.5 * self.thickness


@dataclass(frozen=True)
class MagnetSpec:
    """Uniformly, axially magnetized cylinder (h_mag is ``height``)."""

    radius: float
    height: float
    magnetization: float = DEFAULT_MAGNETIZATION
    density: float = NDFEB_DENSITY

    def __post_init__(self):
        _check_finite(radius=self.radius, height=self.height,
                      magnetization=self.magnetization, density=self.density)
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("magnet radius and height must be > 0")
        if self.magnetization <= 0:
            raise ValueError("magnetization must be > 0")
        if self.density <= 0:
            raise ValueError("density must be > 0")

    @property
    def volume(self) -> float:
        return math.pi * self.radius**2 * self.height

    @property
    def moment(self) -> float:
        return self.magnetization * self.volume


@dataclass(frozen=True)
class MreSpec:
    """MRE diaphragm: CIP volume fraction and the flux-factor slope."""

    cip_vol_fraction: float = 0.3
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.cip_vol_fraction <= CIP_MAX_FRACTION:
            raise OutOfRangeError(
                f"cip_vol_fraction {self.cip_vol_fraction} outside [0, {CIP_MAX_FRACTION}]")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise OutOfRangeError(f"alpha must be >= 0, got {self.alpha}")

    @classmethod
    def preset(cls, design: int, alpha: float = DEFAULT_ALPHA) -> "MreSpec":
        return cls(PRESET_CIP_FRACTIONS[design], alpha)


@dataclass(frozen=True)
class FieldVector:
    b_r: float
    b_z: float
    r: float
    z: float


def _loop_kernel(a, z0, current, r, z):
    """Vectorized (B_r, B_z) of loops (a, z0, I) at points (r, z).

    All arguments broadcast against each other. Raises if any point is
    within SINGULAR_GUARD of its filament.
    """
    a, z0, current, r, z = np.broadcast_arrays(
        np.asarray(a, float), np.asarray(z0, float), np.asarray(current, float),
        np.abs(np.asarray(r, float)), np.asarray(z, float))
    dz = z - z0
    gap2 = (a - r) ** 2 + dz**2
    if np.any(gap2 <= SINGULAR_GUARD**2):
        raise SingularPointError("observation point lies on a current filament")

    sum2 = (a + r) ** 2 + dz**2
    m = 4.0 * a * r / sum2
    K = ellipk(m)
    E = ellipe(m)
    pref = MU0 * current / (2.0 * math.pi * np.sqrt(sum2))

    bz = pref * (K + (a * a - r * r - dz * dz) / gap2 * E)

    near_axis = r < 1e-5 * a
    r_safe = np.where(near_axis, 1.0, r)
    br = pref * dz / r_safe * (-K + (a * a + r * r + dz * dz) / gap2 * E)
    # series expansion avoids the K/E cancellation close to the axis
    br_series = 0.75 * MU0 * current * a * a * dz * r / (a * a + dz * dz) ** 2.5
    br = np.where(near_axis, br_series, br)
    return br, bz


def loop_field(loop: LoopSpec, r: float, z: float) -> FieldVector:
    """Field of a single circular filament at (r, z) via elliptic integrals."""
    br, bz = _loop_kernel(loop.radius, loop.axial_pos, loop.current, r, z)
    return FieldVector(float(br), float(bz), r, z)


def loops_field(loops, r, z):
    """Superposed (B_r, B_z) of a sequence of loops at arrays of points."""
    a = np.array([lp.radius for lp in loops])
    z0 = np.array([lp.axial_pos for lp in loops])
    cur = np.array([lp.current for lp in loops])
    r = np.asarray(r, float)
    z = np.asarray(z, float)
    br, bz = _loop_kernel(a[:, None], z0[:, None], cur[:, None],
                          r.reshape(1, -1), z.reshape(1, -1))
    shape = np.broadcast(r, z).shape
    return br.sum(axis=0).reshape(shape), bz.sum(axis=0).reshape(shape)


def coil_filaments(coil: CoilSpec, drive_current: float, grid=DEFAULT_COIL_GRID):
    """Discretize a coil into an n_r x n_z grid of filaments at cell centres."""
    n_r, n_z = grid
    if n_r < 1 or n_z < 1:
        raise ValueError("coil grid must be at least 1x1")
    radii = coil.inner_radius + (np.arange(n_r) + 0.5) * coil.width / n_r
    zs = coil.axial_center - 0.5 * coil.thickness + (np.arange(n_z) + 0.5) * coil.thickness / n_z
    per = coil.turns * drive_current / (n_r * n_z)
    return [LoopSpec(float(a), float(zz), per) for a in radii for zz in zs]


def coil_field(coil: CoilSpec, drive_current: float, r: float, z: float,
               grid=DEFAULT_COIL_GRID) -> FieldVector:
    br, bz = loops_field(coil_filaments(coil, drive_current, grid), r, z)
    return FieldVector(float(br), float(bz), r, z)


def magnet_filaments(magnet: MagnetSpec, n: int = DEFAULT_MAGNET_LOOPS,
                     center: float = 0.0):
    """Equivalent surface-current loops of a uniformly magnetized cylinder.

    The sheet current M (A/m) over the lateral surface is split into ``n``
    equal slices; each loop carries M*h/n at its slice midpoint, so the
    total is M*h regardless of ``n``.
    """
    if n < 1:
        raise ValueError("need at least one magnet loop")
    dz = magnet.height / n
    per = magnet.magnetization * dz
    base = center - 0.5 * magnet.height
    return [LoopSpec(magnet.radius, base + (i + 0.5) * dz, per) for i in range(n)]


def filament_force(sources, targets) -> float:
    """Axial force (N, +z) exerted by ``sources`` on ``targets``.

    Each target loop feels dF_z = -2*pi*r*I*B_r from the source field.
    """
    r = np.array([lp.radius for lp in targets])
    z = np.array([lp.axial_pos for lp in targets])
    cur = np.array([lp.current for lp in targets])
    br, _ = loops_field(sources, r, z)
    return float(-np.sum(2.0 * math.pi * r * cur * br))


def _reversed(loops):
    return [LoopSpec(lp.radius, lp.axial_pos, -lp.current) for lp in loops]


def flux_factor(mre: MreSpec) -> float:
    """Force multiplier from the CIP-loaded diaphragm, 1 + alpha * fraction."""
    if not 0.0 <= mre.cip_vol_fraction <= CIP_MAX_FRACTION:
        raise OutOfRangeError(f"cip_vol_fraction {mre.cip_vol_fraction} out of range")
    return 1.0 + mre.alpha * mre.cip_vol_fraction


def axial_force(coil: CoilSpec, drive_current: float, magnet: MagnetSpec,
                axial_offset: float, mre: MreSpec | None = None,
                coil_grid=DEFAULT_COIL_GRID, magnet_loops=DEFAULT_MAGNET_LOOPS) -> float:
    """Axial force on the magnet, positive toward the skin.

    ``axial_offset`` is the magnet centre minus the coil centre. Computes
    F = eta * sum_j 2*pi*r_j*I_j*B_r(coil; r_j, z_j) over the magnet's
    equivalent loops, eta being the MRE flux factor.
    """
    eta = 1.0 if mre is None else flux_factor(mre)
    coil_loops = coil_filaments(coil, drive_current, coil_grid)
    mag = magnet_filaments(magnet, magnet_loops, coil.axial_center + axial_offset)
    # moment points toward the coil base: equivalent currents are reversed
    return eta * filament_force(coil_loops, _reversed(mag))


def reaction_force(coil: CoilSpec, drive_current: float, magnet: MagnetSpec,
                   axial_offset: float, mre: MreSpec | None = None,
                   coil_grid=DEFAULT_COIL_GRID, magnet_loops=DEFAULT_MAGNET_LOOPS) -> float:
    """Force of the magnet on the coil (roles of source and target swapped)."""
    eta = 1.0 if mre is None else flux_factor(mre)
    coil_loops = coil_filaments(coil, drive_current, coil_grid)
    mag = _reversed(magnet_filaments(magnet, magnet_loops, coil.axial_center + axial_offset))
    return eta * filament_force(mag, coil_loops)


def force_constant_profile(coil: CoilSpec, magnet: MagnetSpec, mre: MreSpec | None,
                           offsets) -> np.ndarray:
    """Rows of (offset, Km) with Km the force per ampere of drive current."""
    offsets = np.asarray(offsets, float)
    limit = coil.thickness + 1e-12
    if np.any(np.abs(offsets) > limit):
        raise OutOfRangeError("offsets must lie within +/- coil thickness")
    km = [axial_force(coil, 1.0, magnet, float(o), mre) for o in offsets]
    return np.column_stack([offsets, km])


def mutual_inductance(a: float, b: float, separation: float) -> float:
    """Mutual inductance (H) of two coaxial circular filaments."""
    m = 4.0 * a * b / ((a + b) ** 2 + separation**2)
    k = math.sqrt(m)
    return MU0 * math.sqrt(a * b) * ((2.0 / k - k) * ellipk(m) - 2.0 / k * ellipe(m))


def mutual_flux(sources, targets) -> float:
    """Sum of I_s * I_t * M_st over all source/target filament pairs (J)."""
    total = 0.0
    for s in sources:
        for t in targets:
            total += s.current * t.current * mutual_inductance(
                s.radius, t.radius, t.axial_pos - s.axial_pos)
    return total


def coil_inductance(coil: CoilSpec, grid=DEFAULT_COIL_GRID, mre: MreSpec | None = None) -> float:
    """Self-inductance estimate of a coil from its filament grid.

    Off-diagonal terms use the exact filament mutual inductance; each cell's
    own contribution uses the thin-ring formula with the geometric mean
    distance of a rectangular section. The MRE flux factor scales the total.
    """
    loops = coil_filaments(coil, 1.0, grid)
    n_r, n_z = grid
    cell_w = max(coil.width / n_r, 1e-6)
    cell_t = max(coil.thickness / n_z, 1e-6)
    gmd = 0.2235 * (cell_w + cell_t)
    total = 0.0
    for i, s in enumerate(loops):
        for j, t in enumerate(loops):
            if i == j:
                total += s.current**2 * MU0 * s.radius * (math.log(8.0 * s.radius / gmd) - 2.0)
            else:
                total += s.current * t.current * mutual_inductance(
                    s.radius, t.radius, t.axial_pos - s.axial_pos)
    eta = 1.0 if mre is None else flux_factor(mre)
    return eta * total
