"""Scenario records, the JSON scenario file format, and a synthetic scenario generator.

File layout (``schema_version`` 1)::

    {"schema_version": 1,
     "meta": {"id": str, "T_h": int, "T_f": int, "dt": float},
     "map": [{"node_pos": [[x, y], ...], "node_dir": [[dx, dy], ...],
              "node_valid": [bool, ...], "lane_type": one-hot[C_MP]}],
     "lights": [{"stop_point": [x, y, theta], "state": one-hot[C_TL]}],
     "agents": [{"id": int, "history": [[x, y, theta, vx, vy, valid], ...] (oldest first, last row is t=0),
                 "size": [length, width, height], "agent_type": one-hot[3],
                 "is_target": bool, "optimize": bool,
                 "future": [[x, y, vx, vy, theta, speed, valid], ...] or null}]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .geometry import wrap_angle

SCHEMA_VERSION = 1
MAX_MP, MAX_TL, MAX_AG = 1024, 40, 64
MAX_NODES = 20
C_MP = 11
C_TL = 5
LIGHT_STATES = ("stop", "caution", "go", "unknown", "flashing")
AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
DT = 0.1


class ScenarioError(ValueError):
    """Schema violation; the message starts with the offending field path."""


class CapacityError(ScenarioError):
    pass


@dataclass
class RawMapPolyline:
    node_pos: np.ndarray    # [n, 2]
    node_dir: np.ndarray    # [n, 2] unit vectors
    node_valid: np.ndarray  # [n] bool
    lane_type: np.ndarray   # [C_MP] one-hot


@dataclass
class RawTrafficLight:
    stop_point: np.ndarray  # (x, y, theta)
    state: np.ndarray       # [C_TL] one-hot


@dataclass
class RawAgent:
    history: np.ndarray     # [T_h, 6] (x, y, theta, vx, vy, valid)
    size: np.ndarray        # (length, width, height)
    agent_type: np.ndarray  # [3] one-hot
    is_target: bool = False
    optimize: bool = False
    agent_id: int = 0

    @property
    def type_index(self) -> int:
        return int(np.argmax(self.agent_type))

    @property
    def current_pose(self) -> np.ndarray:
        return self.history[-1, :3].copy()


@dataclass
class GroundTruthTrack:
    steps: np.ndarray  # [T_f, 7] (x, y, vx, vy, theta, speed, valid), global frame

    @property
    def valid(self) -> np.ndarray:
        return self.steps[:, 6] > 0.5


@dataclass
class Scenario:
    scenario_id: str
    t_h: int
    t_f: int
    map: List[RawMapPolyline]
    lights: List[RawTrafficLight]
    agents: List[RawAgent]
    futures: List[Optional[GroundTruthTrack]] = field(default_factory=list)
    dt: float = DT

    @property
    def target_indices(self) -> np.ndarray:
        return np.array([i for i, a in enumerate(self.agents) if a.is_target], dtype=np.int64)

    def token_counts(self) -> dict:
        return {"MP": len(self.map), "TL": len(self.lights), "AG": len(self.agents),
                "targets": int(len(self.target_indices))}


# -- serialisation -----------------------------------------------------------
def _one_hot(value, n: int, path: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (n,) or not np.all((arr == 0) | (arr == 1)) or arr.sum() != 1:
        raise ScenarioError(f"{path}: expected a one-hot vector of length {n}")
    return arr


def _matrix(value, cols: int, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise ScenarioError(f"{path}: not numeric ({err})") from None
    if arr.ndim != 2 or arr.shape[1] != cols:
        raise ScenarioError(f"{path}: expected shape [n, {cols}], got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{path}: non-finite values")
    return arr


def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioError(f"{path}.{key}: missing required field")
    return obj[key]


def _check_angles(values, path):
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= -np.pi) or np.any(values > np.pi):
        raise ScenarioError(f"{path}: angle outside (-pi, pi]")


def scenario_from_dict(doc: dict) -> Scenario:
    version = _req(doc, "schema_version", "$")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"$.schema_version: unsupported version {version!r}")
    meta = _req(doc, "meta", "$")
    t_h = int(_req(meta, "T_h", "$.meta"))
    t_f = int(_req(meta, "T_f", "$.meta"))
    dt = float(meta.get("dt", DT))
    sid = str(_req(meta, "id", "$.meta"))

    raw_map = _req(doc, "map", "$")
    raw_lights = _req(doc, "lights", "$")
    raw_agents = _req(doc, "agents", "$")
    for key, items, cap in (("map", raw_map, MAX_MP), ("lights", raw_lights, MAX_TL),
                            ("agents", raw_agents, MAX_AG)):
        if len(items) > cap:
            raise CapacityError(f"$.{key}: {len(items)} entries exceed capacity {cap}")

    polylines = []
    for i, m in enumerate(raw_map):
        p = f"$.map[{i}]"
        pos = _matrix(_req(m, "node_pos", p), 2, f"{p}.node_pos")
        dirs = _matrix(_req(m, "node_dir", p), 2, f"{p}.node_dir")
        valid = np.asarray(_req(m, "node_valid", p), dtype=bool)
        if not (len(pos) == len(dirs) == len(valid)):
            raise ScenarioError(f"{p}: node arrays differ in length")
        if len(pos) > MAX_NODES:
            raise CapacityError(f"{p}.node_pos: {len(pos)} nodes exceed {MAX_NODES}")
        if not valid.any():
            raise ScenarioError(f"{p}.node_valid: no valid node")
        polylines.append(RawMapPolyline(pos, dirs, valid, _one_hot(_req(m, "lane_type", p), C_MP, f"{p}.lane_type")))

    lights = []
    for i, tl in enumerate(raw_lights):
        p = f"$.lights[{i}]"
        sp = np.asarray(_req(tl, "stop_point", p), dtype=np.float64)
        if sp.shape != (3,):
            raise ScenarioError(f"{p}.stop_point: expected [x, y, theta]")
        _check_angles(sp[2], f"{p}.stop_point")
        lights.append(RawTrafficLight(sp, _one_hot(_req(tl, "state", p), C_TL, f"{p}.state")))

    agents, futures = [], []
    for i, a in enumerate(raw_agents):
        p = f"$.agents[{i}]"
        hist = _matrix(_req(a, "history", p), 6, f"{p}.history")
        if len(hist) != t_h:
            raise ScenarioError(f"{p}.history: expected {t_h} steps, got {len(hist)}")
        if hist[-1, 5] < 0.5:
            raise ScenarioError(f"{p}.history: current step (t=0) must be valid")
        _check_angles(hist[hist[:, 5] > 0.5, 2], f"{p}.history")
        size = np.asarray(_req(a, "size", p), dtype=np.float64)
        if size.shape != (3,):
            raise ScenarioError(f"{p}.size: expected [length, width, height]")
        agents.append(RawAgent(hist, size, _one_hot(_req(a, "agent_type", p), 3, f"{p}.agent_type"),
                               bool(a.get("is_target", False)), bool(a.get("optimize", False)),
                               int(a.get("id", i))))
        fut = a.get("future")
        if fut is None:
            futures.append(None)
        else:
            steps = _matrix(fut, 7, f"{p}.future")
            if len(steps) != t_f:
                raise ScenarioError(f"{p}.future: expected {t_f} steps, got {len(steps)}")
            futures.append(GroundTruthTrack(steps))
    return Scenario(sid, t_h, t_f, polylines, lights, agents, futures, dt)


def scenario_to_dict(sc: Scenario) -> dict:
    def lst(a):
        return np.asarray(a).tolist()

    futures = sc.futures or [None] * len(sc.agents)
    return {
        "schema_version": SCHEMA_VERSION,
        "meta": {"id": sc.scenario_id, "T_h": sc.t_h, "T_f": sc.t_f, "dt": sc.dt},
        "map": [{"node_pos": lst(m.node_pos), "node_dir": lst(m.node_dir),
                 "node_valid": [bool(v) for v in m.node_valid], "lane_type": [int(v) for v in m.lane_type]}
                for m in sc.map],
        "lights": [{"stop_point": lst(t.stop_point), "state": [int(v) for v in t.state]} for t in sc.lights],
        "agents": [{"id": a.agent_id, "history": lst(a.history), "size": lst(a.size),
                    "agent_type": [int(v) for v in a.agent_type], "is_target": a.is_target,
                    "optimize": a.optimize, "future": None if f is None else lst(f.steps)}
                   for a, f in zip(sc.agents, futures)],
    }


def dumps_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":"))


def save_scenario(sc: Scenario, path):
    Path(path).write_text(dumps_scenario(sc))


def load_scenario(path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ScenarioError(f"$: invalid JSON ({err})") from None
    return scenario_from_dict(doc)


# -- synthetic generator -----------------------------------------------------
@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_lanes: int = 32
    n_agents: int = 8
    n_lights: int = 4
    arc_fraction: float = 0.5       # lanes that curve
    turn_fraction: float = 0.3      # agents with nonzero turn rate
    speed_range: tuple = (2.0, 10.0)
    target_fraction: float = 0.5
    lane_length: tuple = (5.0, 20.0)
    extent: float = 80.0            # side of the square the lanes start in [m]
    t_h: int = 11
    t_f: int = 20
    dt: float = DT
    missing_history_prob: float = 0.2


_SIZES = {0: (4.5, 2.0, 1.6), 1: (0.6, 0.6, 1.8), 2: (1.8, 0.7, 1.7)}
_SPEED_SCALE = {0: 1.0, 1: 0.2, 2: 0.5}


def _lane(rng, cfg: SynthConfig):
    length = rng.uniform(*cfg.lane_length)
    n_seg = int(np.ceil(length - 1e-9))
    start = rng.uniform(0, cfg.extent, size=2)
    heading = rng.uniform(-np.pi, np.pi)
    curvature = 0.0
    if rng.random() < cfg.arc_fraction:
        curvature = rng.choice([-1, 1]) * rng.uniform(0.02, 0.1)
    pos = np.zeros((n_seg, 2))
    dirs = np.zeros((n_seg, 2))
    p, h = start.copy(), heading
    for i in range(n_seg):
        pos[i] = p
        dirs[i] = (np.cos(h), np.sin(h))
        seg = min(1.0, length - i)
        p = p + seg * dirs[i]
        h += curvature
    end_heading = float(wrap_angle(np.arctan2(dirs[-1, 1], dirs[-1, 0])))
    lane_type = np.zeros(C_MP)
    lane_type[rng.integers(C_MP)] = 1
    poly = RawMapPolyline(pos, dirs, np.ones(n_seg, dtype=bool), lane_type)
    return poly, np.array([p[0], p[1], end_heading]), length


def _kinematics(x0, y0, th0, v, w, times):
    """Constant speed ``v`` and turn rate ``w`` from pose at time 0; returns [T, 6] (x, y, th, vx, vy, s)."""
    th = th0 + w * times
    if abs(w) < 1e-12:
        x = x0 + v * times * np.cos(th0)
        y = y0 + v * times * np.sin(th0)
    else:
        x = x0 + v / w * (np.sin(th) - np.sin(th0))
        y = y0 - v / w * (np.cos(th) - np.cos(th0))
    return np.stack([x, y, wrap_angle(th), v * np.cos(th), v * np.sin(th), np.full_like(times, v)], axis=-1)


@dataclass
class _AgentSpec:
    x0: float
    y0: float
    th0: float
    speed: float
    turn: float
    kind: int
    missing: int
    is_target: bool


def _draw_world(cfg: SynthConfig, rng):
    lanes, ends = [], []
    for _ in range(cfg.n_lanes):
        poly, end, _ = _lane(rng, cfg)
        lanes.append(poly)
        ends.append(end)
    light_lanes = rng.choice(len(lanes), size=min(cfg.n_lights, len(lanes)), replace=False)
    light_poses = [ends[i] for i in sorted(light_lanes)]

    specs = []
    n_targets = max(1, int(round(cfg.target_fraction * cfg.n_agents))) if cfg.n_agents else 0
    for j in range(cfg.n_agents):
        lane = lanes[rng.integers(len(lanes))]
        node = rng.integers(len(lane.node_pos))
        offset = rng.uniform(0, 1)
        xy = lane.node_pos[node] + offset * lane.node_dir[node]
        th = float(np.arctan2(lane.node_dir[node, 1], lane.node_dir[node, 0]))
        kind = int(rng.choice(3, p=[0.6, 0.25, 0.15]))
        speed = rng.uniform(*cfg.speed_range) * _SPEED_SCALE[kind]
        turn = rng.uniform(-0.3, 0.3) if rng.random() < cfg.turn_fraction else 0.0
        missing = int(rng.integers(1, cfg.t_h)) if (cfg.t_h > 1 and rng.random() < cfg.missing_history_prob) else 0
        specs.append(_AgentSpec(float(xy[0]), float(xy[1]), th, float(speed), float(turn), kind, missing,
                                j < n_targets))
    return lanes, light_poses, specs


def _light_states(seed: int, epoch: int, n: int) -> list:
    rng = np.random.default_rng([seed, 7919, epoch])
    out = []
    for _ in range(n):
        s = np.zeros(C_TL)
        s[rng.integers(C_TL)] = 1
        out.append(s)
    return out


def _materialize(cfg: SynthConfig, lanes, light_poses, specs, t0: int, light_epoch: int,
                 scenario_id: str) -> Scenario:
    lights = [RawTrafficLight(np.asarray(p, dtype=np.float64), s)
              for p, s in zip(light_poses, _light_states(cfg.seed, light_epoch, len(light_poses)))]
    agents, futures = [], []
    hist_t = (np.arange(-cfg.t_h + 1, 1) + t0) * cfg.dt
    fut_t = (np.arange(1, cfg.t_f + 1) + t0) * cfg.dt
    for j, sp in enumerate(specs):
        h = _kinematics(sp.x0, sp.y0, sp.th0, sp.speed, sp.turn, hist_t)
        valid = np.ones(cfg.t_h)
        valid[:max(0, sp.missing - t0)] = 0
        history = np.concatenate([h[:, :5], valid[:, None]], axis=1)
        history[valid < 0.5, :5] = 0.0
        f = _kinematics(sp.x0, sp.y0, sp.th0, sp.speed, sp.turn, fut_t)
        fut = np.stack([f[:, 0], f[:, 1], f[:, 3], f[:, 4], f[:, 2], f[:, 5], np.ones(cfg.t_f)], axis=-1)
        a_type = np.zeros(3)
        a_type[sp.kind] = 1
        agents.append(RawAgent(history, np.array(_SIZES[sp.kind]), a_type, sp.is_target, sp.is_target, j))
        futures.append(GroundTruthTrack(fut))
    return Scenario(scenario_id, cfg.t_h, cfg.t_f, list(lanes), lights, agents, futures, cfg.dt)


def generate_synthetic(cfg: SynthConfig) -> Scenario:
    """Lanes made of 1 m segments (straight or constant curvature), agents on lanes with
    constant speed / constant turn rate, futures from the same kinematics, lights at lane ends."""
    if cfg.n_lanes > MAX_MP or cfg.n_lights > MAX_TL or cfg.n_agents > MAX_AG:
        raise CapacityError("synthetic config exceeds scenario capacity")
    rng = np.random.default_rng(cfg.seed)
    lanes, light_poses, specs = _draw_world(cfg, rng)
    return _materialize(cfg, lanes, light_poses, specs, 0, 0, f"synth-{cfg.seed}")


def synthetic_stream(cfg: SynthConfig, n_steps: int, light_period: int = 10) -> List[Scenario]:
    """Successive observations of one synthetic world: agents advance one step per query,
    the map is fixed and light states are redrawn every ``light_period`` steps."""
    rng = np.random.default_rng(cfg.seed)
    lanes, light_poses, specs = _draw_world(cfg, rng)
    return [_materialize(cfg, lanes, light_poses, specs, s, s // max(1, light_period),
                         f"synth-{cfg.seed}-step{s}") for s in range(n_steps)]
