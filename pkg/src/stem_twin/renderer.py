"""Per-tick haptic rendering: fingertip pose in, clamped drive voltage out.

A virtual wall (spring + damper on penetration depth) gives the indentation
force, which is turned into a voltage by quasi-static inversion of the
actuator (F = Km * V / R). Texture vibration and button clicks are added on
top, the sum is clamped to the drive limit, and an i^2 t governor halves the
output while recent heating exceeds its budget.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .electromech import LumpedParams

TEXTURE_FULL_DEPTH = 0.5e-3  # m of penetration for full texture amplitude
CLICK_FREQ = 150.0
CLICK_TAU = 10e-3
CLICK_AMPLITUDE = 5.0
CLICK_CUTOFF = 30e-3
GOVERNOR_WINDOW = 5.0  # s, typical upper bound of one haptic interaction
GOVERNOR_CURRENT = 0.75  # A, measured peak current at 7 V
GOVERNOR_REDUCED_GAIN = 0.5

KINDS = ("plane", "sphere", "button")


@dataclass(frozen=True)
class Texture:
    spatial_period: float
    amplitude: float

    def __post_init__(self):
        if not self.spatial_period > 0:
            raise ValueError("texture spatial_period must be > 0")


@dataclass(frozen=True)
class SceneObject:
    """A renderable object.

    ``plane``: ``point`` on the surface and outward ``normal``.
    ``sphere``: ``point`` is the centre, ``radius`` the radius.
    ``button``: a disc of ``radius`` centred at ``point`` with outward
    ``normal``; it clicks when pressed deeper than ``button_travel``.
    """

    id: str
    kind: str
    point: tuple
    stiffness: float
    damping: float = 0.0
    normal: tuple = (0.0, 0.0, 1.0)
    radius: float = 0.0
    button_travel: float = 0.0
    texture: Texture | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("stiffness and damping must be >= 0")
        n = np.asarray(self.normal, float)
        norm = float(np.linalg.norm(n))
        if norm == 0:
            raise ValueError("normal must be non-zero")
        object.__setattr__(self, "normal", tuple(n / norm))
        object.__setattr__(self, "point", tuple(float(c) for c in self.point))
        if self.kind in ("sphere", "button") and not self.radius > 0:
            raise ValueError(f"{self.kind} needs a positive radius")
        if self.kind == "button" and not self.button_travel > 0:
            raise ValueError("button needs a positive travel")

    def penetration(self, p) -> tuple[float, np.ndarray]:
        """Inward depth of point ``p`` (0 when outside) and the outward
        surface normal at the contact."""
        p = np.asarray(p, float)
        c = np.asarray(self.point)
        if self.kind == "sphere":
            d = p - c
            dist = float(np.linalg.norm(d))
            n = d / dist if dist > 0 else np.array([0.0, 0.0, 1.0])
            return max(0.0, self.radius - dist), n
        n = np.asarray(self.normal)
        depth = -float(np.dot(p - c, n))
        if self.kind == "button":
            lateral = (p - c) - np.dot(p - c, n) * n
            if float(np.linalg.norm(lateral)) > self.radius:
                return 0.0, n
        return max(0.0, depth), n


@dataclass(frozen=True)
class ContactState:
    object_id: str | None = None
    penetration: float = 0.0
    penetration_rate: float = 0.0
    tangential_speed: float = 0.0
    position: tuple | None = None

    def __post_init__(self):
        if self.penetration < 0:
            raise ValueError("penetration must be >= 0")


NO_CONTACT = ContactState()


@dataclass(frozen=True)
class RenderCommand:
    tick: int
    voltage: float
    saturated: bool
    governor_gain: float
    spring_voltage: float = 0.0  # unclamped inverse-drive term
    texture_voltage: float = 0.0
    click_voltage: float = 0.0
    contact: ContactState = NO_CONTACT


def contact_solve(scene, fingertip, previous: ContactState | None, dt: float) -> ContactState:
    """Deepest-penetration contact of the fingertip with the scene.

    Rates are backward differences against ``previous``; when the contacted
    object changes, the previous depth is taken as zero.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    p = np.asarray(fingertip, float)
    prev = previous or NO_CONTACT
    best = None
    for obj in scene:
        depth, n = obj.penetration(p)
        if depth > 0 and (best is None or depth > best[1]):
            best = (obj, depth, n)

    tangential = 0.0
    if prev.position is not None and best is not None:
        vel = (p - np.asarray(prev.position)) / dt
        n = best[2]
        tangential = float(np.linalg.norm(vel - np.dot(vel, n) * n))

    if best is None:
        return ContactState(position=tuple(p))
    obj, depth, _ = best
    prev_depth = prev.penetration if prev.object_id == obj.id else 0.0
    return ContactState(obj.id, depth, (depth - prev_depth) / dt, tangential, tuple(p))


def target_force(cs: ContactState, obj: SceneObject) -> float:
    """Virtual-wall force, never pulling (clamped at zero)."""
    if cs.penetration <= 0:
        return 0.0
    return max(0.0, obj.stiffness * cs.penetration + obj.damping * cs.penetration_rate)


def quasi_static_voltage(force: float, p: LumpedParams) -> float:
    return force * p.R / p.Km


def inverse_drive(force: float, p: LumpedParams) -> tuple[float, bool]:
    """Drive voltage for a force, clamped to +/- V_max, and a saturated flag."""
    v = quasi_static_voltage(force, p)
    if abs(v) > p.V_max:
        return math.copysign(p.V_max, v), True
    return v, False


class TexturePhase:
    """Phase accumulator for spatial-grating texture vibration."""

    def __init__(self):
        self.phase = 0.0

    def advance(self, cs: ContactState, texture: Texture, dt: float) -> float:
        freq = cs.tangential_speed / texture.spatial_period
        self.phase = (self.phase + 2.0 * math.pi * freq * dt) % (2.0 * math.pi)
        scale = min(1.0, cs.penetration / TEXTURE_FULL_DEPTH)
        return texture.amplitude * scale * math.sin(self.phase)


def texture_frequency(cs: ContactState, texture: Texture) -> float:
    return cs.tangential_speed / texture.spatial_period


def texture_wave(cs: ContactState, texture: Texture, dt: float, phase: TexturePhase) -> float:
    return phase.advance(cs, texture, dt)


def click_wave(t_since_event: float, amplitude: float = CLICK_AMPLITUDE,
               freq: float = CLICK_FREQ, tau: float = CLICK_TAU,
               cutoff: float = CLICK_CUTOFF) -> float:
    """Decaying sine burst played when a button clicks."""
    if t_since_event < 0:
        raise ValueError("t_since_event must be >= 0")
    if t_since_event > cutoff:
        return 0.0
    return amplitude * math.exp(-t_since_event / tau) * math.sin(2.0 * math.pi * freq * t_since_event)


class Governor:
    """Sliding-window i^2 t limiter on the commanded current."""

    def __init__(self, R: float, dt: float, window: float = GOVERNOR_WINDOW,
                 budget: float | None = None):
        self.R = R
        self.dt = dt
        self.window = window
        self.budget = GOVERNOR_CURRENT**2 * window if budget is None else budget
        self._samples = deque()
        self._n = max(1, int(round(window / dt)))
        self.accumulator = 0.0
        self.gain = 1.0

    def update(self, voltage: float) -> None:
        """Record the voltage just emitted and set the gain for the next tick."""
        e = (voltage / self.R) ** 2 * self.dt
        self._samples.append(e)
        self.accumulator += e
        if len(self._samples) > self._n:
            self.accumulator -= self._samples.popleft()
        self.accumulator = max(self.accumulator, 0.0)
        self.gain = GOVERNOR_REDUCED_GAIN if self.accumulator > self.budget else 1.0


@dataclass
class TickState:
    """Mutable state of one finger's renderer."""

    params: LumpedParams
    tick_rate: float = 1000.0
    tick: int = 0
    contact: ContactState = NO_CONTACT
    texture_phase: TexturePhase = field(default_factory=TexturePhase)
    click_armed: dict = field(default_factory=dict)
    click_started: list = field(default_factory=list)  # tick indices of live clicks
    clicks: int = 0  # click events so far
    governor: Governor | None = None

    def __post_init__(self):
        if self.governor is None:
            self.governor = Governor(self.params.R, 1.0 / self.tick_rate)

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate


def _button_events(scene, fingertip, state: TickState) -> None:
    """Click when a button is pressed past its travel; re-arm below half travel."""
    for obj in scene:
        if obj.kind != "button":
            continue
        depth, _ = obj.penetration(fingertip)
        armed = state.click_armed.get(obj.id, True)
        if armed and depth >= obj.button_travel:
            state.click_started.append(state.tick)
            state.clicks += 1
            state.click_armed[obj.id] = False
        elif not armed and depth < 0.5 * obj.button_travel:
            state.click_armed[obj.id] = True


def render_tick(scene, fingertip, state: TickState) -> RenderCommand:
    p = state.params
    dt = state.dt
    by_id = {obj.id: obj for obj in scene}
    cs = contact_solve(scene, fingertip, state.contact, dt)
    _button_events(scene, fingertip, state)

    spring = tex = 0.0
    if cs.object_id is not None:
        obj = by_id[cs.object_id]
        spring = quasi_static_voltage(target_force(cs, obj), p)
        if obj.texture is not None:
            tex = texture_wave(cs, obj.texture, dt, state.texture_phase)

    click = 0.0
    t_now = state.tick * dt
    live = []
    for start in state.click_started:
        age = t_now - start * dt
        if age <= CLICK_CUTOFF:
            click += click_wave(age)
            live.append(start)
    state.click_started = live

    total = spring + tex + click
    saturated = abs(total) > p.V_max
    clamped = max(-p.V_max, min(p.V_max, total))
    gain = state.governor.gain
    voltage = clamped * gain
    cmd = RenderCommand(state.tick, voltage, saturated, gain, spring, tex, click, cs)
    state.governor.update(voltage)
    state.contact = cs
    state.tick += 1
    return cmd


def parse_scene(text: str):
    """Parse a scene description, one object per line.

    Formats (SI units, ``#`` starts a comment)::

        plane  ID px py pz nx ny nz STIFFNESS DAMPING [PERIOD AMP]
        sphere ID cx cy cz radius STIFFNESS DAMPING [PERIOD AMP]
        button ID cx cy cz nx ny nz radius travel STIFFNESS DAMPING [PERIOD AMP]
    """
    from .errors import MalformedLineError

    n_geom = {"plane": 6, "sphere": 4, "button": 8}
    objs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        if kind not in n_geom:
            raise MalformedLineError(lineno, f"unknown object kind {kind!r}")
        need = 2 + n_geom[kind] + 2
        if len(parts) not in (need, need + 2):
            raise MalformedLineError(lineno, f"{kind} expects {need} or {need + 2} fields, got {len(parts)}")
        oid = parts[1]
        try:
            nums = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise MalformedLineError(lineno, str(exc)) from None
        g = nums[:n_geom[kind]]
        stiffness, damping = nums[n_geom[kind]:n_geom[kind] + 2]
        try:
            texture = Texture(nums[-2], nums[-1]) if len(parts) == need + 2 else None
            if kind == "plane":
                obj = SceneObject(oid, kind, g[0:3], stiffness, damping, normal=g[3:6], texture=texture)
            elif kind == "sphere":
                obj = SceneObject(oid, kind, g[0:3], stiffness, damping, radius=g[3], texture=texture)
            else:
                obj = SceneObject(oid, kind, g[0:3], stiffness, damping, normal=g[3:6],
                                  radius=g[6], button_travel=g[7], texture=texture)
        except ValueError as exc:
            raise MalformedLineError(lineno, str(exc)) from None
        objs.append(obj)
    return objs
