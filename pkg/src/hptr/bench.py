"""Memory / latency scaling benchmark: shared pairwise-relative context vs agent-centric duplication."""
from __future__ import annotations

import time
from dataclasses import dataclass, fields
from typing import List, Sequence

import numpy as np

from .config import ModelConfig
from .geometry import inverse
from .model import HPTR, transform_scenario
from .runtime import session_init, session_step
from .scenario import Scenario, SynthConfig, generate_synthetic
from .tensor import MemoryTracker, no_grad

MODES = ("pairwise_relative", "agent_centric_emulation")
WARMUP = 3
REPEAT = 20


@dataclass
class BenchResult:
    mode: str
    n_agents: int
    peak_bytes: int        # summed live tensor buffers: contexts plus one forward pass
    context_bytes: int     # pose + attribute buffers of every context token materialised
    forward_ms: float      # median offline forward
    cached_step_ms: float  # median online step with cached map/light features (pairwise only)

    @staticmethod
    def header(sep: str = ",") -> str:
        return sep.join(f.name for f in fields(BenchResult))

    def row(self, sep: str = ",") -> str:
        vals = [self.mode, str(self.n_agents), str(self.peak_bytes), str(self.context_bytes),
                f"{self.forward_ms:.3f}", f"{self.cached_step_ms:.3f}"]
        return sep.join(vals)


def bench_config(d: int = 64, **overrides) -> ModelConfig:
    """Default layer/neighbour structure at reduced width, so the sweep fits a desktop CPU."""
    base = dict(d=d, heads=4, ff_dim=4 * d, dropout=0.0)
    base.update(overrides)
    return ModelConfig.for_topology(base.pop("topology", "lower_tri"), **base)


def bench_scenario(n_agents: int, n_map: int = 1024, n_lights: int = 40, seed: int = 0, t_f: int = 80) -> Scenario:
    """Scenario family with a fixed map (same seed, same lane count) and a varying number of agents,
    all of which are prediction targets."""
    return generate_synthetic(SynthConfig(seed=seed, n_lanes=n_map, n_agents=n_agents, n_lights=n_lights,
                                          target_fraction=1.0, extent=400.0, t_f=t_f))


def _median_ms(fn, repeat: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t) * 1e3)
    return float(np.median(times))


def _token_bytes(tokens) -> int:
    return sum(t.poses.nbytes + t.attr.data.nbytes for t in tokens if t is not None)


def pairwise_context(model: HPTR, sc: Scenario):
    return [model.encode_map(sc.map), model.encode_lights(sc.lights), model.encode_agents(sc.agents, sc.dt)]


def agent_centric_contexts(model: HPTR, sc: Scenario):
    """One full copy of the scene per target, re-expressed in that target's t=0 frame."""
    out = []
    for i in sc.target_indices:
        local = transform_scenario(sc, inverse(sc.agents[i].current_pose))
        # the emulated agent-centric model predicts only its own target
        for j, a in enumerate(local.agents):
            a.is_target = j == i
        out.append((local, pairwise_context(model, local)))
    return out


def bench_point(sc: Scenario, mode: str, cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                repeat: int = REPEAT, warmup: int = WARMUP, measure_latency: bool = True) -> BenchResult:
    if mode not in MODES:
        raise ValueError(f"unknown bench mode {mode!r}")
    with no_grad():
        if mode == "pairwise_relative":
            model = HPTR(cfg, seed=seed, dtype=dtype)
            with MemoryTracker() as mem:
                ctx = pairwise_context(model, sc)
                model.forward(sc)
            context = _token_bytes(ctx)
            del ctx
            fwd = step = float("nan")
            if measure_latency:
                fwd = _median_ms(lambda: model.forward(sc), repeat, warmup)
                session = session_init(sc.map, model, sc.dt)
                step = _median_ms(lambda: session_step(session, sc.lights, sc.agents), repeat, warmup)
        else:
            model = HPTR(cfg.for_topology("full", **_width(cfg)), seed=seed, dtype=dtype)
            with MemoryTracker() as mem:
                per_target = agent_centric_contexts(model, sc)
                context = sum(_token_bytes(c) for _, c in per_target)
                # per-target passes run one after another, so one pass sets the activation peak
                model.forward(per_target[0][0])
            fwd, step = float("nan"), float("nan")
            if measure_latency:
                locals_ = [local for local, _ in per_target]
                fwd = _median_ms(lambda: [model.forward(s) for s in locals_], repeat, warmup)
            del per_target
    return BenchResult(mode, len(sc.agents), int(mem.peak), int(context), fwd, step)


def _width(cfg: ModelConfig) -> dict:
    return dict(d=cfg.d, heads=cfg.heads, ff_dim=cfg.ff_dim, dropout=cfg.dropout, k=cfg.k, t_f=cfg.t_f)


def bench_scaling(agent_counts: Sequence[int] = (8, 16, 32, 64), mode: str = "pairwise_relative",
                  cfg: ModelConfig = None, n_map: int = 1024, seed: int = 0, dtype=np.float32,
                  repeat: int = REPEAT, warmup: int = WARMUP, measure_latency: bool = True) -> List[BenchResult]:
    cfg = cfg or bench_config()
    return [bench_point(bench_scenario(n, n_map, seed=seed, t_f=cfg.t_f), mode, cfg, seed, dtype, repeat, warmup,
                        measure_latency)
            for n in agent_counts]


def format_results(rows: Sequence[BenchResult], sep: str = ",") -> str:
    return "\n".join([BenchResult.header(sep)] + [r.row(sep) for r in rows]) + "\n"
