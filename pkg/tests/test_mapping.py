import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gateseed import mapping as mp
from gateseed.camera import GateObservation, Pose, default_camera, world_point_to_camera
from gateseed.mapping import GateFilter, GateMap, MappingError

CAM = default_camera()


def anchors(*pts):
    return [{"id": i, "x": p[0], "y": p[1], "z": p[2]} for i, p in enumerate(pts)]


def is_pd(c):
    try:
        np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        return False
    return np.allclose(c, c.T, atol=1e-9)


# -- association --------------------------------------------------------------------

def test_associate_nearest_within_radius():
    m = GateMap.from_anchors(anchors((0, 0, 1), (10.5, 0, 1)))
    assert mp.associate_measurement(m, Pose((0.5, 0, 1))) == 0
    assert mp.associate_measurement(m, Pose((0, 7, 1))) is None


def test_associate_radius_boundary():
    m = GateMap.from_anchors(anchors((0, 0, 0)))
    assert mp.associate_measurement(m, Pose((6.0, 0, 0))) == 0
    assert mp.associate_measurement(m, Pose((6.0001, 0, 0))) is None


def test_associate_tie_lower_id():
    m = GateMap.from_anchors(anchors((-6, 0, 0), (6, 0, 0)))
    assert mp.associate_measurement(m, Pose((0, 0, 0))) == 0
    # same anchors registered in the other order
    m2 = GateMap.from_anchors([{"id": 1, "x": 6, "y": 0, "z": 0}, {"id": 0, "x": -6, "y": 0, "z": 0}])
    assert mp.associate_measurement(m2, Pose((0, 0, 0))) == 0


def test_association_permutation_invariant():
    rng = np.random.default_rng(0)
    pts = [(12.0 * k, 3.0 * (k % 2), 1.0) for k in range(5)]
    a = anchors(*pts)
    for _ in range(50):
        q = Pose(tuple(rng.uniform(-5, 55, 3)))
        perm = [a[i] for i in rng.permutation(5)]
        assert mp.associate_measurement(GateMap.from_anchors(a), q) == mp.associate_measurement(GateMap.from_anchors(perm), q)


def test_anchor_validation():
    with pytest.raises(ValueError):
        GateMap.from_anchors(anchors((0, 0, 0), (3, 0, 0)))
    with pytest.raises(ValueError):
        GateMap.from_anchors([{"id": 1, "x": 0, "y": 0, "z": 0}, {"id": 1, "x": 20, "y": 0, "z": 0}])
    with pytest.raises(ValueError):
        mp.associate_measurement(GateMap(), Pose((0, 0, 0)))


def test_load_anchors(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps(anchors((0, 0, 1), (9, 0, 1))))
    assert len(GateMap.from_anchors(mp.load_anchors(p))) == 2
    p.write_text(json.dumps([{"id": 0, "x": 1}]))
    with pytest.raises(ValueError, match="lacks"):
        mp.load_anchors(p)


# -- filter update -------------------------------------------------------------------

def test_zero_innovation():
    f = GateFilter.from_anchor(0, (1.0, 2.0, 3.0), 0.4)
    out = mp.ekf_update(f, Pose((1.0, 2.0, 3.0), 0.4), mp.measurement_noise(4.0))
    np.testing.assert_allclose(out.state, f.state, atol=1e-15)
    assert np.trace(out.covariance) < np.trace(f.covariance)
    assert out.update_count == 1 and f.update_count == 0  # pure


def test_infinite_noise_leaves_state():
    f = GateFilter.from_anchor(0, (1.0, 2.0, 3.0))
    out = mp.ekf_update(f, Pose((5.0, 5.0, 5.0), 2.0), np.diag([np.inf] * 4))
    np.testing.assert_array_equal(out.state, f.state)
    # partially infinite: only the yaw is ignored
    out = mp.ekf_update(f, Pose((5.0, 5.0, 5.0), 2.0), np.diag([0.01, 0.01, 0.01, np.inf]))
    assert out.state[3] == f.state[3] and out.state[0] > 4.9


def test_kalman_matches_scalar_formula():
    f = GateFilter.from_anchor(0, (0.0, 0.0, 0.0))
    r = mp.measurement_noise(2.0)
    out = mp.ekf_update(f, Pose((1.0, 0.0, 0.0)), r)
    p = 9.0 + mp.PROCESS_NOISE
    k = p / (p + r[0, 0])
    assert out.state[0] == pytest.approx(k * 1.0, rel=1e-12)
    assert out.covariance[0, 0] == pytest.approx((1 - k) * p, rel=1e-12)


def test_non_pd_rejected():
    f = GateFilter.from_anchor(0, (0.0, 0.0, 0.0))
    f.covariance[0, 0] = -1.0
    with pytest.raises(MappingError):
        mp.ekf_update(f, Pose((0, 0, 0)), mp.measurement_noise(1.0))
    g = GateFilter.from_anchor(0, (0.0, 0.0, 0.0))
    g.covariance[0, 1] = 0.5
    with pytest.raises(MappingError):
        mp.ekf_update(g, Pose((0, 0, 0)), mp.measurement_noise(1.0))


def test_yaw_wraps():
    f = GateFilter.from_anchor(0, (0.0, 0.0, 0.0), 3.1)
    for k in range(40):
        yaw = 3.1 if k % 2 else -3.1
        f = mp.ekf_update(f, Pose((0, 0, 0), yaw), mp.measurement_noise(1.0))
        assert -math.pi < f.state[3] <= math.pi
    # the mean of +3.1 and -3.1 on the circle is pi, not 0
    assert abs(abs(f.state[3]) - math.pi) < 0.05


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(-5, 5), st.floats(-10, 10),
                          st.floats(0.1, 15)), min_size=1, max_size=30))
def test_covariance_stays_pd(seq):
    f = GateFilter.from_anchor(0, (0.0, 0.0, 0.0))
    for x, y, z, yaw, d in seq:
        f = mp.ekf_update(f, Pose((x, y, z), yaw), mp.measurement_noise(d))
        assert is_pd(f.covariance)
        assert -math.pi < f.state[3] <= math.pi


def convergence_error(seed, n=50, sigma=0.1):
    rng = np.random.default_rng(seed)
    truth = np.array([3.0, -2.0, 1.5])
    f = GateFilter.from_anchor(0, truth + rng.normal(0, 1.0, 3))
    r = np.diag([sigma**2] * 3 + [0.05**2])
    pd_ok = True
    for _ in range(n):
        z = truth + rng.normal(0, sigma, 3)
        f = mp.ekf_update(f, Pose(tuple(z), 0.3 + rng.normal(0, 0.05)), r)
        pd_ok &= is_pd(f.covariance)
    return float(np.linalg.norm(f.state[:3] - truth)), pd_ok


def test_static_gate_convergence():
    errs = [convergence_error(s) for s in range(20)]
    assert np.mean([e for e, _ in errs]) < 0.05
    assert all(ok for _, ok in errs)


def test_measurement_noise_grows_with_distance():
    assert np.all(np.diag(mp.measurement_noise(8.0))[:3] > np.diag(mp.measurement_noise(2.0))[:3])
    assert mp.measurement_noise(3.0)[3, 3] == pytest.approx(0.05**2)


# -- map update ---------------------------------------------------------------------------

def obs_for(world, pose, yaw=0.0):
    uv = CAM.project(world_point_to_camera(world, pose))
    d = float(np.linalg.norm(world - pose.xyz))
    return GateObservation(float(uv[0]), float(uv[1]), d, yaw)


def test_map_update_empty_and_rejected():
    m = GateMap.from_anchors(anchors((5, 0, 1.5), (5, 20, 1.5)))
    before = {k: f.copy() for k, f in m.filters.items()}
    m, ev = mp.map_update(m, CAM, Pose((0, 0, 1.5)), [])
    assert ev == []
    pose = Pose((0, 0, 1.5))
    m, ev = mp.map_update(m, CAM, pose, [obs_for(np.array([5.0, -9.0, 1.5]), pose)])
    assert [e["event"] for e in ev] == ["rejected"]
    for k, f in m.filters.items():
        np.testing.assert_array_equal(f.state, before[k].state)
        assert f.update_count == 0


def test_map_update_fuses():
    m = GateMap.from_anchors(anchors((5, 0.5, 1.5), (5, 20, 1.5)))
    pose = Pose((0, 0, 1.5))
    m, ev = mp.map_update(m, CAM, pose, [obs_for(np.array([5.0, 0.0, 1.5]), pose, 0.2)])
    assert ev[0]["event"] == "fused" and ev[0]["gate"] == 0
    assert m.filters[0].update_count == 1 and m.filters[1].update_count == 0
    assert np.linalg.norm(m.filters[0].state[:3] - [5, 0, 1.5]) < 0.1


def test_dump_map(tmp_path):
    m = GateMap.from_anchors(anchors((5, 0.5, 1.5)))
    pose = Pose((0, 0, 1.5))
    m, _ = mp.map_update(m, CAM, pose, [obs_for(np.array([5.0, 0.0, 1.5]), pose)])
    mp.dump_map(tmp_path / "map.json", m)
    d = json.loads((tmp_path / "map.json").read_text())
    g = d["gates"][0]
    assert set(g) >= {"id", "estimate", "last_measurement", "covariance", "updates"}
    assert g["last_measurement"]["x"] == pytest.approx(5.0)


def test_simulated_flight_converges():
    gate_map, gates, events = mp.simulate_flight(CAM, mp.FlightConfig(), seed=0)
    assert all(e["event"] == "fused" for e in events)
    for k, g in enumerate(gates):
        f = gate_map.filters[k]
        assert f.update_count > 0
        assert np.linalg.norm(f.state[:3] - np.array(g.center)) < 0.1
        assert is_pd(f.covariance)
