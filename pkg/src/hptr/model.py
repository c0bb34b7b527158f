"""Hierarchical polyline transformer: stage pipeline, anchors, output heads.

Each stage is a public method so the streaming runtime can cache and reuse
upstream outputs while running exactly the same code path as an offline pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ModelConfig
from .geometry import NeighborIndex, compose, rotate_vectors, transform_points, wrap_angle
from .knarpe import Neighborhood, build_neighborhood, init_block_params, knarpe_block
from .nn import init_linear, init_mlp, linear, mlp, param, xavier
from .polylines import TokenSet, encode_agents, encode_map, encode_traffic_lights, init_encoder_params
from .scenario import Scenario
from .tensor import Tensor, clamp, concat, gather_rows, no_grad, tanh

TRAJ_FIELDS = ("mu_x", "mu_y", "log_sigma_x", "log_sigma_y", "rho", "vx", "vy", "theta", "speed")
LOG_SIGMA_LIMIT = 5.0
RHO_LIMIT = 0.99


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    params: dict = {}
    init_encoder_params(params, rng, cfg, dtype)
    for stage in cfg.stages:
        for layer in range(cfg.layers[stage]):
            init_block_params(params, rng, f"{stage}.{layer}", cfg.d, cfg.ff_dim, dtype)
    emb = xavier(rng, cfg.n_anchors, cfg.d, shape=(cfg.agent_types, cfg.n_anchors, cfg.d),
                 scale=cfg.anchor_init_scale)
    params["anchors.emb"] = param(emb, dtype)
    init_linear(params, rng, "anchors.proj", 2 * cfg.d, cfg.d, dtype)
    init_mlp(params, rng, "head_conf", [cfg.d, cfg.d, cfg.d, 1], dtype)
    init_mlp(params, rng, "head_traj", [cfg.d, cfg.d, cfg.d, cfg.t_f * len(TRAJ_FIELDS)], dtype)
    return params


@dataclass
class ModelOutput:
    conf_logits: Tensor   # [T, N_AC]
    traj: Tensor          # [T, N_AC, T_f, 9], each agent's t=0 frame
    target_index: np.ndarray
    agent_pose: np.ndarray
    agent_type: np.ndarray


@dataclass
class PredictionSet:
    """Per target agent: N_AC modes of confidence + per-step Gaussian and kinematics (agent frame)."""
    agent_index: np.ndarray
    agent_type: np.ndarray
    agent_pose: np.ndarray
    conf_logits: np.ndarray
    confidences: np.ndarray
    traj: np.ndarray

    @classmethod
    def from_output(cls, out: ModelOutput) -> "PredictionSet":
        logits = np.asarray(out.conf_logits.data, dtype=np.float64)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return cls(out.target_index.copy(), out.agent_type.copy(), out.agent_pose.copy(),
                   logits, z / z.sum(axis=1, keepdims=True), np.asarray(out.traj.data, dtype=np.float64))

    @property
    def positions(self) -> np.ndarray:
        return self.traj[..., :2]

    def with_confidences(self, conf: np.ndarray) -> "PredictionSet":
        return PredictionSet(self.agent_index, self.agent_type, self.agent_pose, self.conf_logits,
                             np.asarray(conf, dtype=np.float64), self.traj)


def predictions_to_global(traj, agent_pose) -> np.ndarray:
    """Map ``[..., 9]`` step predictions from an agent's t=0 frame to the world.

    Positions are rotated and translated, velocities rotated, headings shifted and
    wrapped; log-sigmas, rho and speed are frame independent and left alone.
    """
    traj = np.asarray(traj, dtype=np.float64)
    out = traj.copy()
    out[..., 0:2] = transform_points(agent_pose, traj[..., 0:2], "local_to_global")
    out[..., 5:7] = rotate_vectors(agent_pose[2], traj[..., 5:7])
    out[..., 7] = wrap_angle(traj[..., 7] + agent_pose[2])
    return out


def predictions_to_local(traj, agent_pose) -> np.ndarray:
    traj = np.asarray(traj, dtype=np.float64)
    out = traj.copy()
    out[..., 0:2] = transform_points(agent_pose, traj[..., 0:2], "global_to_local")
    out[..., 5:7] = rotate_vectors(agent_pose[2], traj[..., 5:7], inverse_=True)
    out[..., 7] = wrap_angle(traj[..., 7] - agent_pose[2])
    return out


def global_predictions(pred: PredictionSet) -> np.ndarray:
    """All targets' trajectories in the world frame, ``[T, N_AC, T_f, 9]``."""
    return np.stack([predictions_to_global(pred.traj[i], pred.agent_pose[i]) for i in range(len(pred.agent_index))])


class HPTR:
    def __init__(self, cfg: ModelConfig, params: Optional[dict] = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.params = init_params(cfg, seed, dtype) if params is None else params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    # -- encoders ---------------------------------------------------------
    def encode_map(self, polylines) -> TokenSet:
        if not polylines:
            raise ValueError("map must contain at least one polyline")
        return encode_map(polylines, self.params, self.dtype)

    def encode_lights(self, lights) -> Optional[TokenSet]:
        return encode_traffic_lights(lights, self.params, self.dtype) if lights else None

    def encode_agents(self, agents, dt: float = 0.1) -> TokenSet:
        return encode_agents(agents, self.params, dt, self.dtype)

    # -- transformer stages ------------------------------------------------
    def _self_stage(self, stage: str, x: TokenSet, training=False, rng=None) -> TokenSet:
        n_layers = self.cfg.layers[stage]
        nb = build_neighborhood(x.poses, x.poses, np.ones(len(x), bool), self.cfg.k, self.cfg.encoding)
        attr = x.attr
        for layer in range(n_layers):
            attr = knarpe_block(attr, None, x.poses, x.poses, nb, self.params, f"{stage}.{layer}",
                                self.cfg, "self", training, rng)
        return TokenSet(x.cls, x.poses, attr)

    def _enhance_stage(self, stage: str, x: TokenSet, upstream, training=False, rng=None) -> TokenSet:
        """``x`` attends to the fixed upstream tokens plus its own current state."""
        upstream = [u for u in upstream if u is not None]
        ctx_poses = np.concatenate([u.poses for u in upstream] + [x.poses])
        nb = build_neighborhood(x.poses, ctx_poses, np.ones(len(ctx_poses), bool),
                                self.cfg.neighbors(stage), self.cfg.encoding)
        attr = x.attr
        for layer in range(self.cfg.layers[stage]):
            ctx = concat([u.attr for u in upstream] + [attr], axis=0)
            attr = knarpe_block(attr, ctx, x.poses, ctx_poses, nb, self.params, f"{stage}.{layer}",
                                self.cfg, "cross", training, rng)
        return TokenSet(x.cls, x.poses, attr)

    def map_stage(self, mp: TokenSet, training=False, rng=None) -> TokenSet:
        if "intra_mp" in self.cfg.stages:
            return self._self_stage("intra_mp", mp, training, rng)
        return mp

    def light_stage(self, tl: Optional[TokenSet], mp: TokenSet, training=False, rng=None) -> Optional[TokenSet]:
        if tl is None:
            return None
        if "enhance_tl" in self.cfg.stages:
            return self._enhance_stage("enhance_tl", tl, [mp], training, rng)
        if "intra_tl" in self.cfg.stages:
            return self._self_stage("intra_tl", tl, training, rng)
        return tl

    def agent_stage(self, ag: TokenSet, mp: TokenSet, tl: Optional[TokenSet], training=False, rng=None) -> TokenSet:
        if "enhance_ag" in self.cfg.stages:
            return self._enhance_stage("enhance_ag", ag, [mp, tl], training, rng)
        if "intra_ag" in self.cfg.stages:
            return self._self_stage("intra_ag", ag, training, rng)
        return ag

    def all2all_stage(self, mp: TokenSet, tl: Optional[TokenSet], ag: TokenSet, training=False, rng=None):
        if "all2all" not in self.cfg.stages:
            return mp, tl, ag
        parts = [s for s in (mp, tl, ag) if s is not None]
        joint = TokenSet("ALL", np.concatenate([s.poses for s in parts]), concat([s.attr for s in parts], axis=0))
        joint = self._self_stage("all2all", joint, training, rng)
        out, start = [], 0
        for s in parts:
            out.append(TokenSet(s.cls, s.poses, joint.attr[start:start + len(s)]))
            start += len(s)
        if tl is None:
            return out[0], None, out[1]
        return tuple(out)

    def anchor_tokens(self, ag: TokenSet, target_index, agent_type) -> TokenSet:
        """N_AC tokens per target: linear([agent attr; type anchor]) at the agent's t=0 pose."""
        n_ac, d = self.cfg.n_anchors, self.cfg.d
        target_index = np.asarray(target_index, dtype=np.int64)
        t = len(target_index)
        rows = np.repeat(target_index, n_ac).reshape(t, n_ac)
        agent_part = gather_rows(ag.attr, rows)                           # [T, N_AC, D]
        emb = self.params["anchors.emb"][np.asarray(agent_type, dtype=np.int64)]  # [T, N_AC, D]
        merged = linear(concat([agent_part, emb], axis=-1), self.params, "anchors.proj")
        poses = np.repeat(ag.poses[target_index], n_ac, axis=0)
        return TokenSet("AC", poses, merged.reshape(t * n_ac, d))

    def anchor_stage(self, anchors: TokenSet, context, training=False, rng=None) -> Tensor:
        context = [c for c in context if c is not None]
        ctx_poses = np.concatenate([c.poses for c in context])
        ctx_attr = concat([c.attr for c in context], axis=0)
        n_ac = self.cfg.n_anchors
        # all anchors of one agent share its pose, hence its neighbors
        per_agent = build_neighborhood(anchors.poses[::n_ac], ctx_poses, np.ones(len(ctx_poses), bool),
                                       self.cfg.neighbors("ac2all"), self.cfg.encoding)
        idx = np.repeat(per_agent.idx, n_ac, axis=0)
        valid = np.repeat(per_agent.valid, n_ac, axis=0)
        nb = Neighborhood(NeighborIndex(idx, valid), np.repeat(per_agent.rpe, n_ac, axis=0))
        attr = anchors.attr
        for layer in range(self.cfg.layers["ac2all"]):
            attr = knarpe_block(attr, ctx_attr, anchors.poses, ctx_poses, nb, self.params, f"ac2all.{layer}",
                                self.cfg, "cross", training, rng)
        return attr

    def decode(self, z: Tensor, n_targets: int):
        """Confidence logits ``[T, N_AC]`` and clamped trajectories ``[T, N_AC, T_f, 9]``."""
        n_ac, t_f = self.cfg.n_anchors, self.cfg.t_f
        logits = mlp(z, self.params, "head_conf").reshape(n_targets, n_ac)
        raw = mlp(z, self.params, "head_traj").reshape(n_targets, n_ac, t_f, len(TRAJ_FIELDS))
        traj = concat([raw[..., 0:2],
                       clamp(raw[..., 2:4], -LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT),
                       tanh(raw[..., 4:5]) * RHO_LIMIT,
                       raw[..., 5:9]], axis=-1)
        return logits, traj

    # -- full passes ------------------------------------------------------
    def forward_tokens(self, mp: TokenSet, tl: Optional[TokenSet], ag: TokenSet, target_index, agent_type,
                       training=False, rng=None) -> Tensor:
        """Encoded tokens to anchor features ``[T * N_AC, D]``."""
        if len(target_index) == 0:
            raise ValueError("no target agents to predict")
        mp = self.map_stage(mp, training, rng)
        tl = self.light_stage(tl, mp, training, rng)
        ag = self.agent_stage(ag, mp, tl, training, rng)
        return self.finish(mp, tl, ag, target_index, agent_type, training, rng)

    def finish(self, mp, tl, ag, target_index, agent_type, training=False, rng=None) -> Tensor:
        mp, tl, ag = self.all2all_stage(mp, tl, ag, training, rng)
        anchors = self.anchor_tokens(ag, target_index, agent_type)
        return self.anchor_stage(anchors, [mp, tl, ag], training, rng)

    def forward(self, sc: Scenario, training=False, rng=None) -> ModelOutput:
        targets = sc.target_indices
        if len(targets) == 0:
            raise ValueError("scenario has no target agents")
        types = np.array([sc.agents[i].type_index for i in targets], dtype=np.int64)
        mp = self.encode_map(sc.map)
        tl = self.encode_lights(sc.lights)
        ag = self.encode_agents(sc.agents, sc.dt)
        z = self.forward_tokens(mp, tl, ag, targets, types, training, rng)
        return self.output(z, ag, targets, types)

    def output(self, z: Tensor, ag: TokenSet, targets, types) -> ModelOutput:
        logits, traj = self.decode(z, len(targets))
        return ModelOutput(logits, traj, np.asarray(targets), ag.poses[targets].copy(), np.asarray(types))

    def predict(self, sc: Scenario) -> PredictionSet:
        with no_grad():
            return PredictionSet.from_output(self.forward(sc))


def hptr_forward(tokens: dict, cfg: ModelConfig, params: dict, target_index, agent_type) -> Tensor:
    """Functional entry: ``tokens`` maps "MP"/"TL"/"AG" to TokenSets (TL may be missing)."""
    return HPTR(cfg, params).forward_tokens(tokens["MP"], tokens.get("TL"), tokens["AG"], target_index, agent_type)


def decode_heads(z: Tensor, cfg: ModelConfig, params: dict, n_targets: int):
    return HPTR(cfg, params).decode(z, n_targets)


def make_anchor_tokens(ag: TokenSet, target_index, agent_type, cfg: ModelConfig, params: dict) -> TokenSet:
    return HPTR(cfg, params).anchor_tokens(ag, target_index, agent_type)


# -- analytic cost model -------------------------------------------------------
def _attn_layer_flops(m: int, n: int, k: int, d: int, ff: int) -> int:
    k = min(k, n)
    proj_q = 2 * m * d * d
    proj_kv = 2 * 2 * n * d * d
    proj_rpe = 2 * 2 * m * k * 3 * d * d
    attn = 2 * 2 * m * k * d
    out = 2 * m * d * d
    ffn = 2 * 2 * m * d * ff
    return proj_q + proj_kv + proj_rpe + attn + out + ffn


def forward_flops(cfg: ModelConfig, n_mp: int, n_tl: int, n_ag: int, n_targets: int,
                  n_nodes: int = 20, t_h: int = 11) -> dict:
    """Multiply-add count of one offline forward pass, derived from tensor shapes, per stage."""
    d, ff = cfg.d, cfg.ff_dim
    layer = lambda m, n, k: _attn_layer_flops(m, n, k, d, ff)  # noqa: E731
    flops = {
        "enc_mp": n_mp * n_nodes * 2 * ((4 + cfg.c_mp) * d + 2 * d * d),
        "enc_tl": n_tl * 2 * (cfg.c_tl * d + 2 * d * d),
        "enc_ag": n_ag * t_h * 2 * (15 * d + 2 * d * d),
    }
    n_all = n_mp + n_tl + n_ag
    for stage in cfg.stages:
        L, k = cfg.layers[stage], cfg.neighbors(stage)
        if stage == "intra_mp":
            cost = layer(n_mp, n_mp, k)
        elif stage == "intra_tl":
            cost = layer(n_tl, n_tl, k) if n_tl else 0
        elif stage == "intra_ag":
            cost = layer(n_ag, n_ag, k)
        elif stage == "enhance_tl":
            cost = layer(n_tl, n_mp + n_tl, k) if n_tl else 0
        elif stage == "enhance_ag":
            cost = layer(n_ag, n_all, k)
        elif stage == "all2all":
            cost = layer(n_all, n_all, k)
        else:  # ac2all
            cost = layer(n_targets * cfg.n_anchors, n_all, k)
        flops[stage] = L * cost
    m_ac = n_targets * cfg.n_anchors
    flops["anchors"] = 2 * m_ac * 2 * d * d
    flops["heads"] = 2 * m_ac * (4 * d * d + d + d * cfg.t_f * len(TRAJ_FIELDS))
    flops["total"] = sum(flops.values())
    return flops


def transform_scenario(sc: Scenario, g) -> Scenario:
    """Apply one rigid SE(2) transform ``g`` to every global quantity of a scenario."""
    from .scenario import GroundTruthTrack, RawAgent, RawMapPolyline, RawTrafficLight

    g = np.asarray(g, dtype=np.float64)
    mp = [RawMapPolyline(transform_points(g, m.node_pos), rotate_vectors(g[2], m.node_dir), m.node_valid.copy(),
                         m.lane_type.copy()) for m in sc.map]
    tl = [RawTrafficLight(compose(g, t.stop_point), t.state.copy()) for t in sc.lights]
    agents = []
    for a in sc.agents:
        h = a.history.copy()
        ok = h[:, 5] > 0.5
        h[ok, :3] = compose(g, h[ok, :3])
        h[ok, 3:5] = rotate_vectors(g[2], h[ok, 3:5])
        agents.append(RawAgent(h, a.size.copy(), a.agent_type.copy(), a.is_target, a.optimize, a.agent_id))
    futures = []
    for f in sc.futures:
        if f is None:
            futures.append(None)
            continue
        s = f.steps.copy()
        s[:, 0:2] = transform_points(g, s[:, 0:2])
        s[:, 2:4] = rotate_vectors(g[2], s[:, 2:4])
        s[:, 4] = wrap_angle(s[:, 4] + g[2])
        futures.append(GroundTruthTrack(s))
    return Scenario(sc.scenario_id, sc.t_h, sc.t_f, mp, tl, agents, futures, sc.dt)
