import numpy as np
import pytest

from hptr.config import ModelConfig
from hptr.geometry import compose, rotate_vectors
from hptr.polylines import (_derivative, agent_features, encode_agent, encode_agents, encode_map,
                            encode_map_polyline, encode_traffic_light, encode_traffic_lights, init_encoder_params,
                            map_features, pointnet)
from hptr.scenario import C_MP, C_TL, RawAgent, RawMapPolyline, RawTrafficLight
from hptr.tensor import EmptyGroupError, Tensor
from hptr.nn import init_mlp, mlp


@pytest.fixture
def params():
    p = {}
    init_encoder_params(p, np.random.default_rng(0), ModelConfig.tiny(), np.float64)
    return p


def lane(start=(0.0, 0.0), heading=0.0, n=5, curvature=0.0):
    pos, dirs, h, p = [], [], heading, np.array(start, dtype=float)
    for _ in range(n):
        pos.append(p.copy())
        dirs.append([np.cos(h), np.sin(h)])
        p = p + dirs[-1]
        h += curvature
    lt = np.zeros(C_MP)
    lt[2] = 1
    return RawMapPolyline(np.array(pos), np.array(dirs), np.ones(n, bool), lt)


def agent(x0=0.0, y0=0.0, th=0.0, v=5.0, w=0.0, t_h=6, missing=0):
    rows = []
    for t in range(-t_h + 1, 1):
        tt = t * 0.1
        heading = th + w * tt
        if abs(w) < 1e-12:
            x, y = x0 + v * tt * np.cos(th), y0 + v * tt * np.sin(th)
        else:
            x = x0 + v / w * (np.sin(heading) - np.sin(th))
            y = y0 - v / w * (np.cos(heading) - np.cos(th))
        rows.append([x, y, heading, v * np.cos(heading), v * np.sin(heading), 1.0])
    hist = np.array(rows)
    hist[:missing] = 0.0
    return RawAgent(hist, np.array([4.5, 2.0, 1.6]), np.array([1.0, 0, 0]), True, True)


def transformed_lane(m, g):
    from hptr.geometry import transform_points
    return RawMapPolyline(transform_points(g, m.node_pos), rotate_vectors(g[2], m.node_dir), m.node_valid,
                          m.lane_type)


def transformed_agent(a, g):
    h = a.history.copy()
    ok = h[:, 5] > 0.5
    h[ok, :3] = compose(g, h[ok, :3])
    h[ok, 3:5] = rotate_vectors(g[2], h[ok, 3:5])
    return RawAgent(h, a.size, a.agent_type, a.is_target, a.optimize)


# -- pointnet -------------------------------------------------------------------
def pn_params():
    p = {}
    init_mlp(p, np.random.default_rng(3), "pn", [4, 8, 8, 8], np.float64)
    return p


def test_pointnet_single_node_and_duplicates(rng):
    p = pn_params()
    feats = rng.normal(size=(3, 4))
    single = pointnet(Tensor(feats), np.array([False, True, False]), p, "pn").data
    # batched matmul over 3 rows vs 1 row may differ in the last ulp
    np.testing.assert_allclose(single, mlp(Tensor(feats[1:2]), p, "pn").data[0], atol=1e-14)
    dup = np.stack([feats[0], feats[0], feats[1]])
    a = pointnet(Tensor(feats[:2]), np.ones(2, bool), p, "pn").data
    b = pointnet(Tensor(dup), np.ones(3, bool), p, "pn").data
    np.testing.assert_array_equal(a, b)
    with pytest.raises(EmptyGroupError):
        pointnet(Tensor(feats), np.zeros(3, bool), p, "pn")


def test_pointnet_permutation_invariant():
    p = pn_params()
    for seed in range(20):
        r = np.random.default_rng(seed)
        feats = r.normal(size=(7, 4))
        valid = r.random(7) < 0.7
        valid[0] = True
        perm = r.permutation(7)
        a = pointnet(Tensor(feats), valid, p, "pn").data
        b = pointnet(Tensor(feats[perm]), valid[perm], p, "pn").data
        np.testing.assert_array_equal(a, b)


# -- map ----------------------------------------------------------------------
def test_straight_lane_features():
    pose, feats, valid = map_features(lane())
    np.testing.assert_allclose(pose, [0, 0, 0])
    np.testing.assert_allclose(feats[:, :2], [[i, 0] for i in range(5)], atol=1e-12)
    np.testing.assert_allclose(feats[:, 2:4], [[1, 0]] * 5, atol=1e-12)


def test_map_pose_uses_first_valid_node():
    m = lane(start=(2.0, 1.0), heading=0.5, n=4)
    m.node_valid[0] = False
    pose, _, _ = map_features(m)
    np.testing.assert_allclose(pose[:2], m.node_pos[1])


def test_map_rigid_invariance(params):
    m = lane(start=(3.0, -2.0), heading=0.7, n=8, curvature=0.08)
    g = np.array([11.0, -4.0, 2.1])
    a = encode_map_polyline(m, params)
    b = encode_map_polyline(transformed_lane(m, g), params)
    np.testing.assert_allclose(b.pose, compose(g, a.pose), atol=1e-9)
    np.testing.assert_allclose(a.attr, b.attr, atol=1e-9)


def test_map_padding_invariance(params):
    m = lane(n=5, curvature=0.05)
    padded = RawMapPolyline(np.vstack([m.node_pos, np.full((3, 2), 99.0)]), np.vstack([m.node_dir, np.zeros((3, 2))]),
                            np.concatenate([m.node_valid, np.zeros(3, bool)]), m.lane_type)
    np.testing.assert_array_equal(encode_map_polyline(m, params).attr, encode_map_polyline(padded, params).attr)
    # batched padding to a longer neighbour changes nothing either
    batch = encode_map([m, lane(n=12)], params)
    np.testing.assert_array_equal(batch.attr.data[0], encode_map_polyline(m, params).attr)


# -- agents -------------------------------------------------------------------
def test_stationary_agent_features():
    pose, feats, _ = agent_features(agent(v=0.0))
    np.testing.assert_allclose(pose, [0, 0, 0])
    np.testing.assert_allclose(feats[:, :2], 0.0)
    np.testing.assert_allclose(feats[:, 6], 0.0)


def test_constant_velocity_has_no_yaw_rate_or_accel():
    _, feats, _ = agent_features(agent(x0=3, y0=1, th=0.4, v=7.0))
    np.testing.assert_allclose(feats[:, 7], 0.0, atol=1e-9)
    np.testing.assert_allclose(feats[:, 8], 0.0, atol=1e-9)
    np.testing.assert_allclose(feats[:, 6], 7.0)


def test_turning_agent_yaw_rate():
    _, feats, _ = agent_features(agent(th=3.1, v=4.0, w=0.5))   # heading crosses +-pi
    np.testing.assert_allclose(feats[:, 7], 0.5, atol=1e-9)


def test_derivative_rules():
    vals = np.array([0.0, 1.0, 4.0, 0.0, 10.0, 12.0])
    valid = np.array([True, True, True, False, True, False])
    np.testing.assert_allclose(_derivative(vals, valid, 1.0), [1.0, 2.0, 3.0, 0.0, 0.0, 0.0])


def test_agent_requires_current_step():
    a = agent()
    a.history[-1, 5] = 0
    with pytest.raises(ValueError):
        agent_features(a)


def test_agent_rigid_invariance(params):
    a = agent(x0=5, y0=2, th=1.0, v=6.0, w=0.3, missing=2)
    g = np.array([-20.0, 7.0, -2.5])
    x = encode_agent(a, params)
    y = encode_agent(transformed_agent(a, g), params)
    np.testing.assert_allclose(y.pose, compose(g, x.pose), atol=1e-9)
    np.testing.assert_allclose(x.attr, y.attr, atol=1e-9)


def test_agent_padding_steps_do_not_matter(params):
    a = agent(missing=3)
    b = agent(missing=3)
    b.history[:3, :5] = 123.0   # junk under invalid flags
    np.testing.assert_array_equal(encode_agent(a, params).attr, encode_agent(b, params).attr)


# -- traffic lights ---------------------------------------------------------------
def test_light_attr_depends_only_on_state(params):
    s = np.eye(C_TL)
    a = encode_traffic_light(RawTrafficLight(np.array([0.0, 0, 0]), s[1]), params)
    b = encode_traffic_light(RawTrafficLight(np.array([40.0, -3, 2]), s[1]), params)
    np.testing.assert_array_equal(a.attr, b.attr)
    assert a.attr.shape == (16,)
    toks = encode_traffic_lights([RawTrafficLight(np.zeros(3), s[i]) for i in range(C_TL)], params)
    attrs = toks.attr.data
    for i in range(C_TL):
        for j in range(i + 1, C_TL):
            assert not np.allclose(attrs[i], attrs[j])


def test_batched_agents_match_single(params):
    agents = [agent(x0=i, th=0.3 * i, v=2.0 + i, missing=i % 3) for i in range(4)]
    batch = encode_agents(agents, params)
    for i, a in enumerate(agents):
        np.testing.assert_array_equal(batch.attr.data[i], encode_agent(a, params).attr)
