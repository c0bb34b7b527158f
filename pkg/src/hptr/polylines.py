"""Polyline-level encoders: raw map / traffic-light / agent records to (global pose, local attribute) tokens."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .geometry import rotate_vectors, transform_points, wrap_angle
from .nn import init_mlp, mlp
from .scenario import RawAgent, RawMapPolyline, RawTrafficLight
from .tensor import Tensor, masked_max

AGENT_STEP_FEATURES = 9  # local pos(2), local dir(2), local vel(2), speed, yaw rate, accel
AGENT_ATTR_FEATURES = 6  # size(3), type one-hot(3)


@dataclass
class PolylineToken:
    cls: str
    pose: np.ndarray
    attr: np.ndarray
    valid: bool = True


@dataclass
class TokenSet:
    """A batch of same-class tokens: poses ``[N, 3]`` float64 and attributes ``[N, D]``."""
    cls: str
    poses: np.ndarray
    attr: Tensor

    def __len__(self):
        return self.poses.shape[0]

    def tokens(self) -> List[PolylineToken]:
        return [PolylineToken(self.cls, self.poses[i], self.attr.data[i]) for i in range(len(self))]


def init_encoder_params(params: dict, rng, cfg, dtype=np.float64):
    d = cfg.d
    init_mlp(params, rng, "enc_mp.mlp", [4 + cfg.c_mp, d, d, d], dtype)
    init_mlp(params, rng, "enc_ag.mlp", [AGENT_STEP_FEATURES + AGENT_ATTR_FEATURES, d, d, d], dtype)
    init_mlp(params, rng, "enc_tl.mlp", [cfg.c_tl, d, d, d], dtype)


def pointnet(features: Tensor, valid, params: dict, name: str) -> Tensor:
    """Per-node 3-layer MLP followed by max-pooling over the valid nodes (axis -2)."""
    return masked_max(mlp(features, params, name), valid)


# -- feature construction (float64, no gradients) ---------------------------
def map_features(p: RawMapPolyline):
    """Returns (pose[3], features[n, 4 + C_MP], valid[n]) in the frame of the first valid node."""
    valid = np.asarray(p.node_valid, dtype=bool)
    first = int(np.argmax(valid))
    d0 = p.node_dir[first]
    pose = np.array([p.node_pos[first, 0], p.node_pos[first, 1], wrap_angle(np.arctan2(d0[1], d0[0]))])
    pos = transform_points(pose, p.node_pos, "global_to_local")
    dirs = rotate_vectors(pose[2], p.node_dir, inverse_=True)
    feats = np.concatenate([pos, dirs, np.broadcast_to(p.lane_type, (len(valid), len(p.lane_type)))], axis=1)
    feats[~valid] = 0.0
    return pose, feats, valid


def _derivative(values: np.ndarray, valid: np.ndarray, dt: float, angular: bool = False) -> np.ndarray:
    """Central differences over valid neighbours, one-sided at gaps and ends, 0 where undefined."""
    n = len(values)
    out = np.zeros(n)

    def diff(a, b):
        d = values[a] - values[b]
        return wrap_angle(d) if angular else d

    for t in range(n):
        if not valid[t]:
            continue
        prev_ok = t > 0 and valid[t - 1]
        next_ok = t < n - 1 and valid[t + 1]
        if prev_ok and next_ok:
            out[t] = diff(t + 1, t - 1) / (2 * dt)
        elif next_ok:
            out[t] = diff(t + 1, t) / dt
        elif prev_ok:
            out[t] = diff(t, t - 1) / dt
    return out


def agent_features(a: RawAgent, dt: float = 0.1):
    """Returns (pose[3], features[T_h, 15], valid[T_h]) normalised to the t=0 pose."""
    hist = np.asarray(a.history, dtype=np.float64)
    valid = hist[:, 5] > 0.5
    if not valid[-1]:
        raise ValueError("agent history must be valid at t=0")
    pose = hist[-1, :3].copy()
    pos = transform_points(pose, hist[:, :2], "global_to_local")
    rel_heading = wrap_angle(hist[:, 2] - pose[2])
    dirs = np.stack([np.cos(rel_heading), np.sin(rel_heading)], axis=-1)
    vel = rotate_vectors(pose[2], hist[:, 3:5], inverse_=True)
    speed = np.hypot(hist[:, 3], hist[:, 4])
    yaw_rate = _derivative(hist[:, 2], valid, dt, angular=True)
    accel = _derivative(speed, valid, dt)
    static = np.concatenate([a.size, a.agent_type])
    feats = np.concatenate([pos, dirs, vel, speed[:, None], yaw_rate[:, None], accel[:, None],
                            np.broadcast_to(static, (len(hist), len(static)))], axis=1)
    feats[~valid] = 0.0
    return pose, feats, valid


def _stack_padded(items):
    """Pad variable-length (feats, valid) pairs into [N, L, F] / [N, L]."""
    n_max = max(f.shape[0] for f, _ in items)
    nf = items[0][0].shape[1]
    feats = np.zeros((len(items), n_max, nf))
    valid = np.zeros((len(items), n_max), dtype=bool)
    for i, (f, v) in enumerate(items):
        feats[i, :len(f)] = f
        valid[i, :len(v)] = v
    return feats, valid


# -- encoders ----------------------------------------------------------------
def encode_map(polylines: Sequence[RawMapPolyline], params: dict, dtype=np.float64) -> TokenSet:
    if isinstance(polylines, RawMapPolyline):
        polylines = [polylines]
    out = [map_features(p) for p in polylines]
    poses = np.stack([o[0] for o in out])
    feats, valid = _stack_padded([(o[1], o[2]) for o in out])
    return TokenSet("MP", poses, pointnet(Tensor(feats.astype(dtype)), valid, params, "enc_mp.mlp"))


def encode_agents(agents: Sequence[RawAgent], params: dict, dt: float = 0.1, dtype=np.float64) -> TokenSet:
    if isinstance(agents, RawAgent):
        agents = [agents]
    out = [agent_features(a, dt) for a in agents]
    poses = np.stack([o[0] for o in out])
    feats, valid = _stack_padded([(o[1], o[2]) for o in out])
    return TokenSet("AG", poses, pointnet(Tensor(feats.astype(dtype)), valid, params, "enc_ag.mlp"))


def encode_traffic_lights(lights: Sequence[RawTrafficLight], params: dict, dtype=np.float64) -> TokenSet:
    if isinstance(lights, RawTrafficLight):
        lights = [lights]
    poses = np.stack([np.array([t.stop_point[0], t.stop_point[1], wrap_angle(t.stop_point[2])])
                      for t in lights])
    states = np.stack([t.state for t in lights]).astype(dtype)
    return TokenSet("TL", poses, mlp(Tensor(states), params, "enc_tl.mlp"))


def encode_map_polyline(p: RawMapPolyline, params: dict, dtype=np.float64) -> PolylineToken:
    return encode_map([p], params, dtype).tokens()[0]


def encode_agent(a: RawAgent, params: dict, dt: float = 0.1, dtype=np.float64) -> PolylineToken:
    return encode_agents([a], params, dt, dtype).tokens()[0]


def encode_traffic_light(t: RawTrafficLight, params: dict, dtype=np.float64) -> PolylineToken:
    return encode_traffic_lights([t], params, dtype).tokens()[0]
