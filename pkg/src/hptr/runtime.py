"""Streaming inference with cached static features, confidence post-processing, and metrics."""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .model import HPTR, PredictionSet, global_predictions
from .scenario import RawAgent, RawTrafficLight, Scenario
from .tensor import no_grad

NMS_THRESHOLDS = {0: 2.5, 1: 1.0, 2: 1.5}  # vehicle, pedestrian, cyclist [m]
MISS_THRESHOLD = 2.0


def light_digest(lights: Sequence[RawTrafficLight]) -> str:
    h = hashlib.sha256()
    for t in lights:
        h.update(np.asarray(t.stop_point, dtype="<f8").tobytes())
        h.update(np.asarray(t.state, dtype="<f8").tobytes())
    h.update(str(len(lights)).encode())
    return h.hexdigest()


@dataclass
class StepRecord:
    step: int
    latency_us: float
    stages: str


@dataclass
class Session:
    """Online inference state for one map. One writer at a time."""
    model: HPTR
    map_tokens: object
    map_features: object
    tl_digest: Optional[str] = None
    tl_features: object = None
    steps: int = 0
    log: List[StepRecord] = field(default_factory=list)
    dt: float = 0.1

    def step(self, lights: Sequence[RawTrafficLight], agents: Sequence[RawAgent]) -> PredictionSet:
        return session_step(self, lights, agents)[0]

    def latency_log(self, sep: str = ",") -> str:
        lines = [sep.join(["step", "latency_us", "stages"])]
        lines += [sep.join([str(r.step), f"{r.latency_us:.1f}", r.stages]) for r in self.log]
        return "\n".join(lines) + "\n"


def session_init(map_polylines, model: HPTR, dt: float = 0.1) -> Session:
    if not map_polylines:
        raise ValueError("session_init: empty map")
    with no_grad():
        mp = model.encode_map(map_polylines)
        feats = model.map_stage(mp)
    return Session(model, mp, feats, dt=dt)


def session_step(session: Session, lights: Sequence[RawTrafficLight], agents: Sequence[RawAgent]):
    """Predict for the current observations, rerunning the light stage only when lights changed.

    Returns ``(PredictionSet, latency_us)``.
    """
    model = session.model
    start = time.perf_counter()
    ran = []
    with no_grad():
        digest = light_digest(lights)
        if digest != session.tl_digest:
            tl = model.encode_lights(lights)
            session.tl_features = model.light_stage(tl, session.map_features)
            session.tl_digest = digest
            ran.append("tl")
        targets = np.array([i for i, a in enumerate(agents) if a.is_target], dtype=np.int64)
        if len(targets) == 0:
            raise ValueError("session_step: no target agents")
        types = np.array([agents[i].type_index for i in targets], dtype=np.int64)
        ag = model.encode_agents(agents, session.dt)
        ag_feat = model.agent_stage(ag, session.map_features, session.tl_features)
        z = model.finish(session.map_features, session.tl_features, ag_feat, targets, types)
        pred = PredictionSet.from_output(model.output(z, ag, targets, types))
        ran += ["ag", "ac"]
    latency = (time.perf_counter() - start) * 1e6
    session.log.append(StepRecord(session.steps, latency, "+".join(ran)))
    session.steps += 1
    return pred, latency


def offline_predict(model: HPTR, sc: Scenario) -> PredictionSet:
    """From-scratch forward pass (no caching)."""
    return model.predict(sc)


# -- post-processing -------------------------------------------------------------
def softmax_temperature(logits, tau: float = 0.5) -> np.ndarray:
    if tau <= 0:
        raise ValueError("softmax_temperature: tau must be positive")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = np.exp(z - z.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def nms_modes(positions, conf, threshold: float) -> np.ndarray:
    """Greedy confidence NMS for one agent.

    Modes are visited by descending confidence (ties: lower index first). A mode whose
    mean displacement to any already kept mode is below ``threshold`` gets confidence 0;
    survivors are renormalised. Trajectories are not touched.
    """
    positions = np.asarray(positions, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    kept: List[int] = []
    out = np.zeros_like(conf)
    for m in order:
        close = any(np.linalg.norm(positions[m] - positions[k], axis=-1).mean() < threshold for k in kept)
        if not close:
            kept.append(m)
            out[m] = conf[m]
    total = out.sum()
    return out / total if total > 0 else out


def nms_confidences(pred: PredictionSet, thresholds=None) -> PredictionSet:
    thresholds = NMS_THRESHOLDS if thresholds is None else thresholds
    conf = np.stack([nms_modes(pred.positions[i], pred.confidences[i], thresholds[int(pred.agent_type[i])])
                     for i in range(len(pred.agent_index))])
    return pred.with_confidences(conf)


# -- metrics ---------------------------------------------------------------------
@dataclass
class MetricReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    per_agent: list


def evaluate_arrays(positions, gt_xy, gt_valid, miss_threshold: float = MISS_THRESHOLD) -> MetricReport:
    """``positions`` ``[A, M, T, 2]``, ``gt_xy`` ``[A, T, 2]``, ``gt_valid`` ``[A, T]``; one frame for all.

    minADE and minFDE are independent minima over modes; FDE uses the last valid step.
    """
    rows = []
    for a in range(len(positions)):
        v = np.asarray(gt_valid[a], dtype=bool)
        if not v.any():
            continue
        d = np.linalg.norm(np.asarray(positions[a])[:, v] - np.asarray(gt_xy[a])[v], axis=-1)  # [M, T_valid]
        ade, fde = float(d.mean(axis=1).min()), float(d[:, -1].min())
        rows.append({"agent": a, "min_ade": ade, "min_fde": fde, "miss": fde > miss_threshold})
    if not rows:
        return MetricReport(float("nan"), float("nan"), float("nan"), [])
    return MetricReport(float(np.mean([r["min_ade"] for r in rows])), float(np.mean([r["min_fde"] for r in rows])),
                        float(np.mean([r["miss"] for r in rows])), rows)


def evaluate(preds: PredictionSet, gts) -> MetricReport:
    """Metrics in the world frame. ``gts`` is a Scenario with futures, or one track (or None) per predicted agent."""
    glob = global_predictions(preds)[..., :2]
    if isinstance(gts, Scenario):
        gts = [gts.futures[i] if gts.futures else None for i in preds.agent_index]
    if len(gts) != len(preds.agent_index):
        raise ValueError(f"evaluate: {len(gts)} ground-truth tracks for {len(preds.agent_index)} predicted agents")
    n = glob.shape[2]
    gt = np.zeros((len(gts), n, 2))
    valid = np.zeros((len(gts), n), dtype=bool)
    for i, track in enumerate(gts):
        if track is not None:
            m = min(n, len(track.steps))
            gt[i, :m] = track.steps[:m, :2]
            valid[i, :m] = track.valid[:m]
    rep = evaluate_arrays(glob, gt, valid)
    for r in rep.per_agent:
        r["agent"] = int(preds.agent_index[r["agent"]])
    return rep
