import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stem_twin.electromech import LumpedParams
from stem_twin.errors import MalformedLineError
from stem_twin.renderer import (
    NO_CONTACT,
    ContactState,
    Governor,
    SceneObject,
    Texture,
    TexturePhase,
    TickState,
    click_wave,
    contact_solve,
    inverse_drive,
    parse_scene,
    render_tick,
    target_force,
    texture_frequency,
    texture_wave,
)

PARAMS = LumpedParams(R=8.57, L=1e-3, Km=0.53, m_mov=0.5e-3, k=870.0, c=0.3)
DT = 1e-3

FLOOR = SceneObject("floor", "plane", (0, 0, 0), 200.0)
BALL = SceneObject("ball", "sphere", (0, 0, 0), 300.0, radius=20e-3)
BUTTON = SceneObject("btn", "button", (0, 0, 0), 100.0, radius=5e-3, button_travel=2e-3)


# contact

def test_outside_gives_no_contact():
    cs = contact_solve([FLOOR, BALL], (0, 0, 0.05), None, DT)
    assert cs.object_id is None and cs.penetration == 0.0


def test_sphere_penetration():
    cs = contact_solve([BALL], (0.0, 18e-3, 0.0), None, DT)
    assert cs.object_id == "ball"
    assert cs.penetration == pytest.approx(2e-3, rel=1e-12)


def test_deepest_object_wins():
    scene = [FLOOR, SceneObject("ball", "sphere", (0, 0, 0.019), 300.0, radius=20e-3)]
    cs = contact_solve(scene, (0, 0, 1e-3), None, DT)
    assert cs.object_id == "ball" and cs.penetration == pytest.approx(2e-3)
    cs = contact_solve(scene, (0, 0, -1e-3), None, DT)
    assert cs.object_id == "floor" and cs.penetration == pytest.approx(1e-3)
    cs = contact_solve(scene, (0, 0, 5e-3), None, DT)
    assert cs.object_id == "ball" and cs.penetration == pytest.approx(6e-3)


def test_rates_by_backward_difference():
    c1 = contact_solve([FLOOR], (0, 0, -1e-3), None, DT)
    c2 = contact_solve([FLOOR], (0.01e-3, 0, -1.5e-3), c1, DT)
    assert c1.penetration_rate == pytest.approx(1e-3 / DT)
    assert c2.penetration_rate == pytest.approx(0.5e-3 / DT)
    assert c2.tangential_speed == pytest.approx(0.01e-3 / DT)


def test_contact_dt_positive():
    with pytest.raises(ValueError):
        contact_solve([FLOOR], (0, 0, 0), None, 0.0)
    with pytest.raises(ValueError):
        ContactState("x", -1e-3)


def test_button_hysteresis_single_click():
    state = TickState(PARAMS)
    # press to travel, jitter around it, release to just above half, then below
    depths = [0, 1e-3, 2e-3, 2.1e-3, 1.9e-3, 2.2e-3, 1.2e-3, 2.5e-3, 0.9e-3, 0.5e-3, 2.0e-3]
    clicks = []
    for d in depths:
        before = state.clicks
        render_tick([BUTTON], (0, 0, -d), state)
        clicks.append(state.clicks - before)
    assert clicks == [0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1]


def test_button_outside_disc_does_not_click():
    state = TickState(PARAMS)
    render_tick([BUTTON], (6e-3, 0, -3e-3), state)
    assert state.clicks == 0


# force laws

def test_target_force_spring():
    cs = ContactState("floor", 1e-3, 0.0)
    assert target_force(cs, FLOOR) == pytest.approx(0.2)


def test_target_force_clamped_non_negative():
    wall = SceneObject("w", "plane", (0, 0, 0), 200.0, damping=5.0)
    cs = ContactState("w", 1e-3, -1.0)
    assert target_force(cs, wall) == 0.0


def test_target_force_linear_in_depth():
    f = [target_force(ContactState("floor", d, 0.0), FLOOR) for d in (1e-3, 2e-3, 3e-3)]
    assert f[1] - f[0] == pytest.approx(f[2] - f[1])


def test_inverse_drive_examples():
    v, sat = inverse_drive(0.2, PARAMS)
    assert v == pytest.approx(3.23, abs=5e-3) and not sat
    assert inverse_drive(0.0, PARAMS) == (0.0, False)
    v, sat = inverse_drive(1.0, PARAMS)
    assert v == 7.0 and sat


# texture and clicks

def test_texture_frequency():
    tex = Texture(1e-3, 1.0)
    assert texture_frequency(ContactState("p", 1e-3, 0.0, 0.05), tex) == pytest.approx(50.0)
    ph = TexturePhase()
    cs = ContactState("p", 1e-3, 0.0, 0.0)
    assert all(texture_wave(cs, tex, DT, ph) == 0.0 for _ in range(10))


def test_texture_depth_scaling():
    tex = Texture(1e-3, 2.0)
    deep, shallow = TexturePhase(), TexturePhase()
    a = texture_wave(ContactState("p", 1e-3, 0.0, 0.05), tex, DT, deep)
    b = texture_wave(ContactState("p", 0.25e-3, 0.0, 0.05), tex, DT, shallow)
    assert b == pytest.approx(0.5 * a)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 0.5), min_size=2, max_size=40))
def test_texture_phase_continuity(speeds):
    tex = Texture(1e-3, 1.0)
    ph = TexturePhase()
    prev = ph.phase
    for s in speeds:
        cs = ContactState("p", 1e-3, 0.0, s)
        texture_wave(cs, tex, DT, ph)
        step = (ph.phase - prev) % (2 * math.pi)
        allowed = (2 * math.pi * texture_frequency(cs, tex) * DT) % (2 * math.pi)
        gap = abs(step - allowed)
        assert min(gap, 2 * math.pi - gap) <= 1e-9
        prev = ph.phase


def test_click_cutoff_and_shape():
    assert click_wave(50e-3) == 0.0
    assert click_wave(0.0) == 0.0
    t = np.linspace(0, 30e-3, 3001)
    env = np.abs([click_wave(x) for x in t])
    quarter = 1.0 / (4 * 150.0)
    assert t[np.argmax(env)] <= quarter
    with pytest.raises(ValueError):
        click_wave(-1e-3)


def test_click_stateless_in_event_time():
    a = [click_wave(t) for t in np.arange(0, 0.03, 1e-3)]
    b = [click_wave(t) for t in np.arange(0, 0.03, 1e-3)]
    assert a == b


# render loop

def test_idle_silence():
    state = TickState(PARAMS)
    for _ in range(20):
        cmd = render_tick([FLOOR, BALL], (0, 0, 0.1), state)
        assert cmd.voltage == 0.0 and not cmd.saturated


def test_composed_command_clamped():
    state = TickState(PARAMS)
    stiff = SceneObject("w", "plane", (0, 0, 0), 8.1 * PARAMS.Km / PARAMS.R / 1e-3)
    cmd = render_tick([stiff], (0, 0, -1e-3), state)
    assert cmd.spring_voltage == pytest.approx(8.1)
    assert cmd.voltage == 7.0 and cmd.saturated


def test_governor_first_tick():
    state = TickState(PARAMS)
    wall = SceneObject("w", "plane", (0, 0, 0), 1e6)
    e = (7.0 / PARAMS.R) ** 2 * DT
    budget = 0.75**2 * 5.0
    expected = math.floor(budget / e) + 1
    gains = []
    for _ in range(expected + 5):
        gains.append(render_tick([wall], (0, 0, -1e-3), state).governor_gain)
    first = gains.index(0.5)
    assert first == expected
    assert all(g == 1.0 for g in gains[:first])


def test_governor_restores():
    gov = Governor(PARAMS.R, DT, window=0.1, budget=0.5**2 * 0.1)
    for _ in range(200):
        gov.update(7.0)
    assert gov.gain == 0.5
    for _ in range(200):
        gov.update(0.0)
    assert gov.gain == 1.0 and gov.accumulator >= 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.01, 0.01), st.floats(-0.01, 0.01), st.floats(-0.03, 0.01)),
                min_size=1, max_size=60),
       st.floats(0.0, 1e5))
def test_voltage_bounded_and_governor_limit(path, stiffness):
    scene = [SceneObject("w", "plane", (0, 0, 0), stiffness, 10.0, texture=Texture(1e-3, 3.0)), BUTTON]
    gov = Governor(PARAMS.R, DT, window=0.02, budget=0.75**2 * 0.02)
    state = TickState(PARAMS, governor=gov)
    sq = []
    for p in path:
        cmd = render_tick(scene, p, state)
        assert abs(cmd.voltage) <= 7.0
        assert abs(cmd.voltage) <= PARAMS.V_max * cmd.governor_gain + 1e-12
        sq.append((cmd.voltage / PARAMS.R) ** 2 * DT)
        window = sum(sq[-20:])
        assert window <= 2 * gov.budget + 1e-12


def test_stiffness_monotone_spring_voltage():
    rng = np.random.default_rng(5)
    z = -np.abs(np.cumsum(rng.normal(0, 0.2e-3, 300)))
    out = {}
    for k in (100.0, 300.0, 900.0):
        state = TickState(PARAMS)
        scene = [SceneObject("w", "plane", (0, 0, 0), k)]
        out[k] = np.array([render_tick(scene, (0, 0, zz), state).spring_voltage for zz in z])
    assert np.all(out[300.0] >= out[100.0]) and np.all(out[900.0] >= out[300.0])


# scene files

SCENE = """
# demo scene
plane floor 0 0 0  0 0 1  200 0.5
sphere ball 0 0 0.02 0.01 300 0 0.001 1.5   # textured
button b1 0 0 0 0 0 1 0.005 0.002 100 0
"""


def test_parse_scene():
    objs = parse_scene(SCENE)
    assert [o.id for o in objs] == ["floor", "ball", "b1"]
    assert objs[0].stiffness == 200 and objs[0].damping == 0.5
    assert objs[1].texture == Texture(0.001, 1.5) and objs[1].radius == 0.01
    assert objs[2].button_travel == 0.002


@pytest.mark.parametrize("line", [
    "cube c 0 0 0 1 1",
    "plane p 0 0 0 0 0 1 200",
    "sphere s 0 0 0 x 1 0",
    "sphere s 0 0 0 -1 1 0",
    "plane p 0 0 0 0 0 1 200 0 0 1",
])
def test_parse_scene_errors(line):
    with pytest.raises(MalformedLineError) as info:
        parse_scene("\n" + line)
    assert str(info.value).startswith("line 2")
