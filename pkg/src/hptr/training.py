"""Losses with hard assignment, AdamW, and a toy training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .model import HPTR, ModelOutput, predictions_to_local
from .scenario import GroundTruthTrack, Scenario, SynthConfig, generate_synthetic
from .tensor import Tensor, clamp, cos, exp, finite_diff_check, log, log_softmax, no_grad

LOG_2PI = math.log(2.0 * math.pi)


class TrainingDivergedError(RuntimeError):
    pass


# -- scalar reference forms ----------------------------------------------------
def nll_gaussian_2d(mu_x, mu_y, log_sx, log_sy, rho, x, y) -> float:
    """Negative log density of a bivariate normal at (x, y)."""
    sx, sy = math.exp(log_sx), math.exp(log_sy)
    zx, zy = (x - mu_x) / sx, (y - mu_y) / sy
    one_m = 1.0 - rho * rho
    return LOG_2PI + log_sx + log_sy + 0.5 * math.log(one_m) + (zx * zx + zy * zy - 2 * rho * zx * zy) / (2 * one_m)


def cos_loss(theta, theta_gt):
    return -np.cos(np.asarray(theta_gt) - np.asarray(theta))


def huber(residual, delta: float = 1.0):
    r = np.abs(np.asarray(residual, dtype=np.float64))
    out = np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))
    return out if out.ndim else float(out)


# -- differentiable forms ------------------------------------------------------
def nll_gaussian_2d_t(mu_x, mu_y, log_sx, log_sy, rho, x, y) -> Tensor:
    zx = (x - mu_x) / exp(log_sx)
    zy = (y - mu_y) / exp(log_sy)
    one_m = 1.0 - rho * rho
    quad = (zx * zx + zy * zy - 2.0 * rho * zx * zy) / (2.0 * one_m)
    return LOG_2PI + log_sx + log_sy + 0.5 * log(one_m) + quad


def huber_t(r: Tensor, delta: float = 1.0) -> Tensor:
    c = clamp(r, -delta, delta)
    sign = Tensor(np.sign(r.data).astype(r.dtype))
    return 0.5 * c * c + delta * (r - c) * sign


def hard_assign(positions, gt_xy, gt_valid) -> int:
    """Index of the mode with the smallest mean displacement over valid steps (lowest index on ties).

    ``positions`` is ``[N_AC, T_f, 2]``, ``gt_xy`` ``[T_f, 2]``, ``gt_valid`` ``[T_f]``.
    """
    gt_valid = np.asarray(gt_valid, dtype=bool)
    if not gt_valid.any():
        raise ValueError("hard_assign: ground truth has no valid step")
    err = np.linalg.norm(np.asarray(positions)[:, gt_valid] - np.asarray(gt_xy)[gt_valid], axis=-1)
    return int(np.argmin(err.mean(axis=1)))


@dataclass
class LossReport:
    l_pos: float
    l_rot: float
    l_vel: float
    l_traj: float
    l_conf: float
    l_total: float
    chosen: np.ndarray
    total: Optional[Tensor] = field(default=None, repr=False)


def gt_in_agent_frame(track: GroundTruthTrack, agent_pose) -> np.ndarray:
    """``[T_f, 6]`` (x, y, vx, vy, theta, speed) in the agent's t=0 frame; invalid rows zeroed."""
    s = track.steps
    as_pred = np.zeros((len(s), 9))
    as_pred[:, 0:2] = s[:, 0:2]
    as_pred[:, 5:7] = s[:, 2:4]
    as_pred[:, 7] = s[:, 4]
    loc = predictions_to_local(as_pred, agent_pose)
    out = np.stack([loc[:, 0], loc[:, 1], loc[:, 5], loc[:, 6], loc[:, 7], s[:, 5]], axis=-1)
    out[~track.valid] = 0.0
    return out


def total_loss(conf_logits: Tensor, traj: Tensor, gt: np.ndarray, gt_valid: np.ndarray,
               rows: Optional[Sequence[int]] = None) -> LossReport:
    """Hard-assignment loss for the agents in ``rows`` (default: all).

    ``traj`` ``[T, N_AC, T_f, 9]``, ``gt`` ``[T, T_f, 6]`` and ``gt_valid`` ``[T, T_f]`` share the
    agent frame. Trajectory terms are averaged over valid steps of the chosen mode, then every
    term is averaged over agents.
    """
    rows = np.arange(traj.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    gt, gt_valid = np.asarray(gt)[rows], np.asarray(gt_valid, dtype=bool)[rows]
    if len(rows) == 0:
        raise ValueError("total_loss: no agents to optimise")
    chosen = np.array([hard_assign(traj.data[r, :, :, :2], gt[i, :, :2], gt_valid[i])
                       for i, r in enumerate(rows)], dtype=np.int64)
    sel = traj[rows, chosen]  # [A, T_f, 9]
    dtype = traj.dtype
    g = Tensor(gt.astype(dtype))
    mask = gt_valid.astype(dtype)
    weight = Tensor(mask / mask.sum(axis=1, keepdims=True) / len(rows))

    col = lambda t, i: t[..., i]  # noqa: E731
    l_pos = nll_gaussian_2d_t(col(sel, 0), col(sel, 1), col(sel, 2), col(sel, 3), col(sel, 4), col(g, 0), col(g, 1))
    l_rot = -cos(col(g, 4) - col(sel, 7))
    l_vel = huber_t(col(g, 2) - col(sel, 5)) + huber_t(col(g, 3) - col(sel, 6)) + huber_t(col(g, 5) - col(sel, 8))
    pos = (l_pos * weight).sum()
    rot = (l_rot * weight).sum()
    vel = (l_vel * weight).sum()
    traj_loss = pos + rot + vel
    conf = -(log_softmax(conf_logits[rows], axis=-1)[np.arange(len(rows)), chosen]).sum() * (1.0 / len(rows))
    total = traj_loss + conf
    return LossReport(pos.item(), rot.item(), vel.item(), traj_loss.item(), conf.item(), total.item(),
                      chosen, total)


def scenario_targets(out: ModelOutput, sc: Scenario):
    """Ground truth for the optimisable targets of a scenario, in each agent's frame."""
    rows, gts, valids = [], [], []
    for row, agent_idx in enumerate(out.target_index):
        track = sc.futures[agent_idx] if sc.futures else None
        if track is None or not sc.agents[agent_idx].optimize or not track.valid.any():
            gts.append(np.zeros((sc.t_f, 6)))
            valids.append(np.zeros(sc.t_f, dtype=bool))
            continue
        rows.append(row)
        gts.append(gt_in_agent_frame(track, out.agent_pose[row]))
        valids.append(track.valid)
    return np.array(rows, dtype=np.int64), np.stack(gts), np.stack(valids)


def scenario_loss(out: ModelOutput, sc: Scenario) -> LossReport:
    rows, gt, valid = scenario_targets(out, sc)
    return total_loss(out.conf_logits, out.traj, gt, valid, rows)


class AdamW:
    def __init__(self, params: dict, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class EpochLog:
    epoch: int
    l_pos: float
    l_rot: float
    l_vel: float
    l_conf: float
    l_total: float


def min_ade(model: HPTR, scenarios: Sequence[Scenario]) -> float:
    """Mean over optimised agents of the best-mode average displacement."""
    errs = []
    with no_grad():
        for sc in scenarios:
            out = model.forward(sc)
            rows, gt, valid = scenario_targets(out, sc)
            for r in rows:
                pos = out.traj.data[r, :, :, :2]
                d = np.linalg.norm(pos[:, valid[r]] - gt[r, valid[r], :2], axis=-1).mean(axis=1)
                errs.append(d.min())
    return float(np.mean(errs))


def toy_train(scenarios: Sequence[Scenario], cfg: ModelConfig, epochs: int, seed: int = 0, lr: float = 1e-4,
              weight_decay: float = 0.01, dtype=np.float64, model: Optional[HPTR] = None, log_fn=None):
    """Full-batch AdamW on a handful of scenarios. Returns (model, list of EpochLog).

    Each epoch averages the per-scenario losses, back-propagates once, and takes one step;
    the logged losses are those evaluated before the step.
    """
    model = model or HPTR(cfg, seed=seed, dtype=dtype)
    opt = AdamW(model.params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    usable = [sc for sc in scenarios if any(sc.agents[i].optimize for i in sc.target_indices)]
    if not usable:
        raise ValueError("toy_train: no scenario has an optimisable target")
    curve: List[EpochLog] = []
    for epoch in range(epochs):
        opt.zero_grad()
        sums = np.zeros(5)
        for sc in usable:
            out = model.forward(sc, training=True, rng=rng)
            rep = scenario_loss(out, sc)
            if not np.isfinite(rep.l_total):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, scenario {sc.scenario_id}: {rep}")
            (rep.total * (1.0 / len(usable))).backward()
            sums += [rep.l_pos, rep.l_rot, rep.l_vel, rep.l_conf, rep.l_total]
        sums /= len(usable)
        curve.append(EpochLog(epoch, *map(float, sums)))
        if log_fn is not None:
            log_fn(curve[-1])
        opt.step()
    return model, curve


def format_curve(curve: Sequence[EpochLog], sep: str = ",") -> str:
    lines = [sep.join(["epoch", "L_pos", "L_rot", "L_vel", "L_conf", "L_total"])]
    for e in curve:
        lines.append(sep.join([str(e.epoch)] + [f"{v:.6f}" for v in (e.l_pos, e.l_rot, e.l_vel, e.l_conf, e.l_total)]))
    return "\n".join(lines) + "\n"


# Gradients that are identically zero (e.g. key biases, which shift every logit of a softmax
# equally) leave only central-difference roundoff of order eps * |L| / h, about 1e-10 here.
# Entries with both magnitudes below the floor are therefore judged on absolute error.
GRADCHECK_FLOOR = 1e-5


def gradcheck_scenario(seed: int = 7) -> Scenario:
    return generate_synthetic(SynthConfig(seed=seed, n_lanes=6, n_agents=3, n_lights=2, t_h=4, t_f=4,
                                          target_fraction=1.0))


def gradcheck_model(seed: int = 7, topology: str = "lower_tri", h: float = 1e-5, tol: float = 1e-4,
                    names=None) -> dict:
    """Finite-difference check of L_total over every parameter of the tiny float64 model."""
    sc = gradcheck_scenario(seed)
    model = HPTR(ModelConfig.tiny(topology), seed=seed, dtype=np.float64)
    return finite_diff_check(lambda: scenario_loss(model.forward(sc), sc).total, model.params, h=h, tol=tol,
                             floor=GRADCHECK_FLOOR, names=names)
