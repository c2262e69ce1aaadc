import math

import numpy as np
import pytest

from fusionsteer import synth as S
from fusionsteer.tensor import make_rng


def empty_world(width=2.0, length=10.0, light=1.0):
    return S.WorldSpec(width, length, S.corridor_walls(width, length), np.zeros((0, 6)), light)


def test_generate_world_basics():
    assert len(S.generate_world(make_rng(0), 0).obstacles) == 0
    assert S.generate_world(make_rng(3), 1) == S.generate_world(make_rng(3), 1)
    assert S.generate_world(make_rng(3), 1) != S.generate_world(make_rng(4), 1)
    for seed in range(100):
        w = S.generate_world(make_rng(seed), 2)
        assert 3 <= len(w.obstacles) <= 8
        assert 0.3 <= w.light <= 1.0
        for x, y, r, *_ in w.obstacles:
            assert r > 0
            assert 0 < x < w.length
            assert abs(y) + r <= w.width / 2 + 1e-12


def test_dynamic_obstacles_stay_inside():
    w = S.generate_world(make_rng(1), 2)
    obs = w.obstacles.copy()
    obs[:, 5] = 0.5
    w = S.WorldSpec(w.width, w.length, w.walls, obs, w.light)
    for _ in range(200):
        w = S.advance_world(w, S.DT)
        assert np.all(np.abs(w.obstacles[:, 1]) + w.obstacles[:, 2] <= w.width / 2 + 1e-9)


def test_render_shapes_and_ranges():
    w = S.generate_world(make_rng(2), 1)
    rgb, depth = S.render(w, S.RobotState(0.5, 0.0, 0.1))
    assert rgb.shape == (3, 240, 240) and rgb.dtype == np.uint8
    assert depth.shape == (1, 240, 240) and depth.dtype == np.uint16
    assert depth.min() >= 300 and depth.max() <= 10000
    again = S.render(w, S.RobotState(0.5, 0.0, 0.1))
    assert again[0].tobytes() == rgb.tobytes() and again[1].tobytes() == depth.tobytes()


def test_empty_corridor_depth_symmetric():
    _, depth = S.render(empty_world(), S.RobotState(2.0, 0.0, 0.0))
    d = depth[0].astype(int)
    assert np.abs(d - d[:, ::-1]).max() <= 1


def test_wall_ahead_one_meter():
    w = empty_world(width=6.0, length=5.0)
    _, depth = S.render(w, S.RobotState(4.0, 0.0, 0.0))
    center = depth[0, 110:130, 115:125].astype(int)  # rows near the horizon, central columns
    assert np.all(np.abs(center - 1000) <= 1)


def test_lighting_scales_rgb_only():
    bright, dim = empty_world(light=1.0), empty_world(light=0.5)
    s = S.RobotState(1.0, 0.2, 0.1)
    rgb1, d1 = S.render(bright, s)
    rgb2, d2 = S.render(dim, s)
    assert d1.tobytes() == d2.tobytes()
    assert np.abs(rgb2.astype(float) / 255 - 0.5 * rgb1.astype(float) / 255).max() <= 1 / 255 + 1e-12


def test_render_outside_raises():
    with pytest.raises(ValueError):
        S.render(empty_world(), S.RobotState(-1.0, 0.0, 0.0))


def test_quantize_omega():
    assert S.quantize_omega(0.0) == 0.0
    assert S.quantize_omega(0.06) == 0.1
    assert S.quantize_omega(0.15) == 0.1  # tie toward zero
    assert S.quantize_omega(-0.25) == -0.2
    assert S.quantize_omega(0.34) == 0.3
    assert S.quantize_omega(-5) == -0.3
    for v in np.linspace(-1, 1, 401):
        assert S.quantize_omega(v) in S.OMEGA_GRID


def test_expert_straight_corridor():
    assert S.expert_policy(empty_world(), S.RobotState(2.0, 0.0, 0.0)) == 0.0


def test_expert_avoids_right_blockage():
    # a large obstacle filling the right half of the view
    obs = np.array([[2.0, -0.45, 0.5, 2, 0, 0]])
    w = S.WorldSpec(2.0, 10.0, S.corridor_walls(2.0, 10.0), obs, 1.0)
    s = S.RobotState(1.0, 0.0, 0.0)
    dist, _ = S.raycast(w, s)
    assert np.all(dist[120:] < S.FREE_DISTANCE)
    assert S.expert_policy(w, s) > 0


def test_expert_fully_blocked_turns_left():
    w = empty_world(width=6.0, length=5.0)
    assert S.expert_policy(w, S.RobotState(4.0, 0.0, 0.0)) == S.MAX_OMEGA


def test_expert_mirror_antisymmetry():
    checked = 0
    for seed in range(50):
        rng = make_rng(1000 + seed)
        w = S.generate_world(rng, 2)
        s = S.initial_state(w, rng)
        s = S.RobotState(float(rng.uniform(0.4, w.length - 3)), s.y, s.heading)
        if S.clearance(w, s) < S.COLLISION_DISTANCE or not np.any(S.raycast(w, s)[0] > S.FREE_DISTANCE):
            continue
        assert S.expert_policy(S.mirror_world(w), S.mirror_state(s)) == -S.expert_policy(w, s)
        checked += 1
    assert checked >= 40


def test_mirror_render_flips_depth():
    w = S.generate_world(make_rng(8), 1)
    s = S.RobotState(1.0, 0.1, 0.2)
    _, d = S.render(w, s)
    _, dm = S.render(S.mirror_world(w), S.mirror_state(s))
    assert np.abs(d.astype(int) - dm[:, :, ::-1].astype(int)).max() <= 1


def test_wrap_and_step():
    assert S.wrap_angle(math.pi) == pytest.approx(math.pi)
    assert S.wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert S.wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    s = S.step(S.RobotState(0.0, 0.0, 0.0), 0.3)
    assert s.x == pytest.approx(0.02) and s.y == 0.0 and s.heading == pytest.approx(0.06)


def test_episode_labels_on_grid():
    w = S.generate_world(make_rng(5), 1)
    labels = [lab for _, _, lab in S.run_episode(w, make_rng(6), max_steps=60)]
    assert labels and all(lab in S.OMEGA_GRID for lab in labels)
