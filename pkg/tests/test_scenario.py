import math

import numpy as np
import pytest

from berthtrack import kernels
from berthtrack.dynamics import ACT_HIGH, ACT_LOW
from berthtrack.geometry import ObstacleSet, Pose, ShipGeometry, footprint_collides
from berthtrack.scenario import (INIT_VEL_HIGH, INIT_VEL_LOW, DesiredTrajectory, GridSpec, ScenarioFormatError,
                                 generate_berthing_scenario, generate_harbor_obstacles, generate_random_trajectory,
                                 generate_training_obstacles, grid_cover, load_obstacles, load_trajectory,
                                 sample_random_command, save_obstacles, save_trajectory, swept_region)
from oracles import ellipse_polygon_overlap


def _clamped_normal_mean(mu, sd, lo, hi, n=200001):
    # numerical quadrature of E[clip(X, lo, hi)]
    x = np.linspace(mu - 12 * sd, mu + 12 * sd, n)
    pdf = np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    return float(np.trapezoid(np.clip(x, lo, hi) * pdf, x))


def test_random_command_statistics_and_bounds():
    rng = np.random.default_rng(0)
    cmds = np.array([sample_random_command(rng) for _ in range(100_000)])
    assert np.all(cmds >= ACT_LOW) and np.all(cmds <= ACT_HIGH)
    assert np.all(cmds[:, 2] == 10.0)
    assert abs(cmds[:, 0].mean() - _clamped_normal_mean(-75, 30, -105, 35)) < 1.5
    assert abs(cmds[:, 1].mean() - _clamped_normal_mean(75, 30, -35, 105)) < 1.5
    assert abs(cmds[:, 3].mean()) < 0.5 and cmds[:, 3].min() < -29 and cmds[:, 3].max() > 29


def test_random_trajectory_initial_conditions():
    rng = np.random.default_rng(1)
    lo = np.array(INIT_VEL_LOW)
    hi = np.array(INIT_VEL_HIGH)
    np.testing.assert_array_equal(lo, [-0.072, -0.07, -0.1])
    np.testing.assert_array_equal(hi, [0.437, 0.07, 0.1])
    v0 = []
    for _ in range(1000):
        traj = generate_random_trajectory(5.0, 5.0, rng)
        np.testing.assert_array_equal(traj.poses[0], [0.0, 0.0, 0.0])
        v0.append(traj.vels[0] * [1, 1, 180 / math.pi])
    v0 = np.array(v0)
    assert np.all(v0 >= lo - 1e-12) and np.all(v0 <= hi + 1e-12)
    # the intervals are actually explored
    assert np.all(v0.min(axis=0) < lo + 0.05 * (hi - lo))
    assert np.all(v0.max(axis=0) > hi - 0.05 * (hi - lo))


def test_random_trajectory_shape_and_determinism():
    a, ca = generate_random_trajectory(200.0, 5.0, np.random.default_rng(2), return_commands=True)
    b, cb = generate_random_trajectory(200.0, 5.0, np.random.default_rng(2), return_commands=True)
    assert len(a) == 41 and a.duration == 200.0
    assert ca.shape == (40, 4)
    np.testing.assert_array_equal(a.poses, b.poses)
    np.testing.assert_array_equal(a.vels, b.vels)
    np.testing.assert_array_equal(ca, cb)
    assert a.path.shape == (2001, 3)
    np.testing.assert_array_equal(a.path[::50], a.poses)
    with pytest.raises(ValueError):
        generate_random_trajectory(4.0, 5.0, np.random.default_rng())


def test_random_trajectory_command_interval():
    traj, cmds = generate_random_trajectory(20.0, 5.0, np.random.default_rng(3), command_interval=1.0,
                                            return_commands=True)
    assert len(traj) == 5 and len(cmds) == 20


def test_trajectory_validation():
    with pytest.raises(ValueError):
        DesiredTrajectory(1.0, np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        DesiredTrajectory(0.0, np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DesiredTrajectory(1.0, np.zeros((3, 3)), np.zeros((2, 3)))


# --- swept region -----------------------------------------------------------

def _still(n=2):
    return DesiredTrajectory(1.0, np.zeros((n, 3)), np.zeros((n, 3)))


def test_swept_region_single_pose(geom):
    reg = swept_region(_still(), geom)
    assert len(reg.ellipses) == 3
    np.testing.assert_allclose(reg.ellipses[-1], [0, 0, 0, 1.9 * geom.L, 1.9 * geom.L])
    assert reg.contains((1.9 * geom.L, 0.0))
    assert not reg.contains((1.9 * geom.L + 1e-6, 0.0))


def test_swept_region_contains_samples_and_is_bounded(geom):
    rng = np.random.default_rng(4)
    traj = generate_random_trajectory(100.0, 5.0, rng)
    reg = swept_region(traj, geom)
    for p in traj.positions:
        assert reg.contains(p)
    lo = traj.path[:, :2].min(axis=0) - 7.0
    hi = traj.path[:, :2].max(axis=0) + 7.0
    pts = rng.uniform(lo, hi, (3000, 2))
    inside = 0
    for q in pts:
        if reg.contains(q):
            inside += 1
            d_path = np.min(np.hypot(*(traj.path[:, :2] - q).T))
            assert d_path <= geom.semi_major + 1e-9 or math.hypot(*q) <= 1.9 * geom.L + 1e-9
    assert inside > 0


def test_swept_region_unknown_footprint(geom):
    with pytest.raises(ValueError):
        swept_region(_still(), geom, "square")


# --- pseudo-obstacles -------------------------------------------------------

def _straight(n=21, dt=5.0, speed=0.2):
    t = np.arange(n) * dt
    return DesiredTrajectory(dt, np.c_[speed * t, np.zeros(n), np.zeros(n)], np.c_[np.full(n, speed), np.zeros((n, 2))])


def test_straight_trajectory_obstacles(geom):
    traj = _straight()
    cover = grid_cover(traj, geom)
    obs = cover.obstacles()
    c = cover.cell
    assert c == 2 * geom.L
    # the corridor cells straddling y = 0 are free
    for x in np.arange(0.5, traj.poses[-1, 0], c):
        for y in (-0.1, 0.1):
            i = int(math.floor(x / c)) - cover.i0
            j = int(math.floor(y / c)) - cover.j0
            assert not cover.solid[i, j]
    # outer ring is always obstacle
    assert cover.solid[0].all() and cover.solid[-1].all() and cover.solid[:, 0].all() and cover.solid[:, -1].all()
    assert len(obs.polygons) == int(cover.solid.sum())
    assert not obs.dummy


def test_training_obstacles_never_touch_trajectory(geom):
    rng = np.random.default_rng(5)
    for _ in range(10):
        traj = generate_random_trajectory(200.0, 5.0, rng)
        obs = generate_training_obstacles(traj, geom)
        assert len(obs.polygons) > 0
        for p in traj.path[::5]:
            assert not footprint_collides(Pose(*p), geom, obs)
        for ring in obs.polygons:
            edges = np.hypot(*(np.roll(ring, -1, axis=0) - ring).T)
            assert edges.min() >= geom.L


def test_free_cells_match_overlap_oracle(geom):
    traj = _straight(n=5)
    cover = grid_cover(traj, geom)
    reg = swept_region(traj, geom)
    ni, nj = cover.solid.shape
    for a in range(ni):
        for b in range(nj):
            ring = cover.ring(cover.i0 + a, cover.j0 + b)
            touched = any(ellipse_polygon_overlap(e[:2], e[2], e[3], e[4], ring) for e in reg.ellipses)
            assert cover.solid[a, b] == (not touched)


def test_grid_area_accounting(geom):
    traj = generate_random_trajectory(150.0, 5.0, np.random.default_rng(6))
    cover = grid_cover(traj, geom)
    x0, y0, x1, y1 = cover.extent
    total = (x1 - x0) * (y1 - y0)
    obs_area = sum(abs(_shoelace(r)) for r in cover.obstacles().polygons)
    free_area = np.count_nonzero(~cover.solid) * cover.cell ** 2
    assert obs_area + free_area == pytest.approx(total, rel=1e-9)


def _shoelace(ring):
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def test_obstacle_generation_is_pure(geom):
    traj = generate_random_trajectory(100.0, 5.0, np.random.default_rng(7))
    a = generate_training_obstacles(traj, geom)
    b = generate_training_obstacles(traj, geom)
    assert len(a.polygons) == len(b.polygons)
    for p, q in zip(a.polygons, b.polygons):
        np.testing.assert_array_equal(p, q)


def test_grid_spec_options(geom):
    traj = _straight(n=5)
    assert grid_cover(traj, geom, GridSpec(cell=1.5)).cell == 1.5
    with pytest.raises(ValueError):
        grid_cover(traj, geom, GridSpec(cell=0.0))
    wide = grid_cover(traj, geom, GridSpec(padding=4))
    narrow = grid_cover(traj, geom, GridSpec(padding=2))
    assert wide.solid.shape[0] == narrow.solid.shape[0] + 4


def test_harbor_obstacles(geom):
    traj = generate_random_trajectory(100.0, 5.0, np.random.default_rng(8))
    harbor = generate_harbor_obstacles(traj, geom)
    assert harbor.dummy
    disk = ShipGeometry(L=geom.L, B=1.9 * geom.L, footprint_semi_major_ratio=1.9)
    for p in traj.path[::10]:
        assert not footprint_collides(Pose(*p), disk, ObstacleSet(harbor.polygons))
    train = grid_cover(traj, geom, footprint="ellipse")
    harb = grid_cover(traj, geom, footprint="disk")
    assert (train.i0, train.j0, train.solid.shape) == (harb.i0, harb.j0, harb.solid.shape)
    # every free training cell is free in the harbor variant
    assert not np.any(~train.solid & harb.solid)


def test_mark_free_kernel_paths_agree(geom):
    traj = generate_random_trajectory(100.0, 5.0, np.random.default_rng(9))
    e = np.ascontiguousarray(swept_region(traj, geom).ellipses)
    c = 2 * geom.L
    shape = (40, 40)
    a = np.zeros(shape, dtype=bool)
    b = np.zeros(shape, dtype=bool)
    kernels.mark_free_py(e, c, -20, -20, a)
    kernels.mark_free_jit(e, c, -20, -20, b)
    np.testing.assert_array_equal(a, b)
    assert a.any()


# --- files ------------------------------------------------------------------

def test_trajectory_roundtrip(tmp_path):
    traj = generate_random_trajectory(50.0, 5.0, np.random.default_rng(10))
    f = tmp_path / "t.csv"
    save_trajectory(traj, f)
    back = load_trajectory(f)
    assert back.dt == traj.dt
    np.testing.assert_allclose(back.poses, traj.poses, atol=1e-12)
    np.testing.assert_allclose(back.vels, traj.vels, atol=1e-12)
    f2 = tmp_path / "t2.csv"
    save_trajectory(back, f2)
    assert f.read_text() == f2.read_text()


def test_trajectory_parse_errors(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,x0,y0,psi,u,vm,r\n0,0,0,0,0,0,0\n1,0,0,0,0,0,0\n2.5,0,0,0,0,0,0\n3,0,0,0,0,0,0\n")
    with pytest.raises(ScenarioFormatError, match=r"row 3 \(line 4\): t=2.5 "):
        load_trajectory(f)
    f.write_text("t,x0,y0,psi,u,vm\n0,0,0,0,0,0\n1,0,0,0,0,0\n")
    with pytest.raises(ScenarioFormatError, match="missing column"):
        load_trajectory(f)
    f.write_text("t,x0,y0,psi,u,vm,r\n0,0,0,0,0,0,0\n1,0,zero,0,0,0,0\n")
    with pytest.raises(ScenarioFormatError, match=":3:"):
        load_trajectory(f)
    f.write_text("")
    with pytest.raises(ScenarioFormatError):
        load_trajectory(f)


def test_obstacles_roundtrip_and_errors(tmp_path, geom):
    obs = generate_harbor_obstacles(_straight(n=5), geom)
    f = tmp_path / "o.json"
    save_obstacles(obs, f)
    back = load_obstacles(f)
    assert back.dummy
    assert len(back.polygons) == len(obs.polygons)
    for p, q in zip(back.polygons, obs.polygons):
        np.testing.assert_allclose(p, q, atol=1e-12)
    f.write_text("{ not json")
    with pytest.raises(ScenarioFormatError, match=":1:"):
        load_obstacles(f)
    f.write_text('{"polygons": [[[0, 0], [1, 0]]]}')
    with pytest.raises(ScenarioFormatError, match="polygon 0"):
        load_obstacles(f)
    f.write_text('{"dummy": true}')
    with pytest.raises(ScenarioFormatError, match="polygons"):
        load_obstacles(f)


# --- berthing scene ---------------------------------------------------------

def test_berthing_scenario_ends_alongside_quay(geom):
    traj, quay = generate_berthing_scenario(geom)
    np.testing.assert_allclose(traj.poses[-1], [0.0, 1.49 * geom.B, math.pi], atol=1e-9)
    assert traj.vels[-1, 0] == 0.0
    assert np.all(traj.vels[:, 0] >= 0.0)
    # desired path stays clear of the quay with the full training footprint
    for p in traj.poses:
        assert not footprint_collides(Pose(*p), geom, quay)
    # poses are consistent with the stated speeds
    step = np.hypot(*np.diff(traj.poses[:, :2], axis=0).T)
    mid_u = 0.5 * (traj.vels[1:, 0] + traj.vels[:-1, 0])
    np.testing.assert_allclose(step, mid_u * traj.dt, atol=2e-4)
