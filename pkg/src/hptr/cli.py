"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 invalid input (scenario, weights, config), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import fnmatch
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import bench
from .config import TOPOLOGIES, ModelConfig
from .model import HPTR, global_predictions, init_params
from .runtime import evaluate, nms_confidences, session_init, session_step
from .scenario import ScenarioError, SynthConfig, dumps_scenario, generate_synthetic, load_scenario, synthetic_stream
from .training import TrainingDivergedError, format_curve, gradcheck_model, min_ade, toy_train
from .weights import WeightFileError, load_weights, save_weights

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _dtype(args):
    return np.float64 if args.precision == "f64" else np.float32


def _build_model(args, t_f: int = None) -> HPTR:
    if args.config:
        cfg = ModelConfig.load(args.config)
    else:
        cfg = ModelConfig.for_topology(args.topology, **({"t_f": t_f} if t_f else {}))
    dtype = _dtype(args)
    if getattr(args, "zero_weights", False):
        params = init_params(cfg, args.seed, dtype)
        for t in params.values():
            t.data[...] = 0.0
        return HPTR(cfg, params)
    if args.weights:
        params = load_weights(args.weights, dtype)
        expected = set(init_params(cfg, 0, dtype))
        if set(params) != expected:
            missing, extra = sorted(expected - set(params)), sorted(set(params) - expected)
            raise WeightFileError(f"weights do not match config: missing {missing[:3]}, unexpected {extra[:3]}")
        return HPTR(cfg, params)
    return HPTR(cfg, seed=args.seed, dtype=dtype)


def _check_finite(pred):
    if not (np.isfinite(pred.traj).all() and np.isfinite(pred.confidences).all()):
        raise NumericalError("non-finite prediction")


def _prediction_rows(pred, sep=","):
    glob = global_predictions(pred)
    yield sep.join(["agent", "mode", "confidence", "step", "x", "y", "theta"])
    for i, agent in enumerate(pred.agent_index):
        for m in range(pred.traj.shape[1]):
            for t in range(pred.traj.shape[2]):
                x, y, th = glob[i, m, t, 0], glob[i, m, t, 1], glob[i, m, t, 7]
                yield sep.join([str(agent), str(m), f"{pred.confidences[i, m]:.6f}", str(t + 1),
                                f"{x:.4f}", f"{y:.4f}", f"{th:.5f}"])


def _metric_rows(rep, sep=","):
    yield sep.join(["agent", "min_ade", "min_fde", "miss"])
    for r in rep.per_agent:
        yield sep.join([str(r["agent"]), f"{r['min_ade']:.4f}", f"{r['min_fde']:.4f}", str(int(r["miss"]))])
    yield sep.join(["mean", f"{rep.min_ade:.4f}", f"{rep.min_fde:.4f}", f"{rep.miss_rate:.4f}"])


# -- subcommands -----------------------------------------------------------------
def cmd_gen(args):
    out_dir = Path(args.out) if args.out else None
    if out_dir is None and args.count > 1:
        raise UsageError("gen: --out DIR is required when --count > 1")
    for i in range(args.count):
        cfg = SynthConfig(seed=args.seed + i, n_lanes=args.lanes, n_agents=args.agents, n_lights=args.lights,
                          t_h=args.t_h, t_f=args.t_f, target_fraction=args.target_fraction)
        text = dumps_scenario(generate_synthetic(cfg))
        if out_dir is None:
            sys.stdout.write(text + "\n")
        else:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / f"scenario_{args.seed + i:04d}.json").write_text(text + "\n")
    return EXIT_OK


def cmd_predict(args):
    sc = load_scenario(args.scenario)
    model = _build_model(args, sc.t_f)
    pred = model.predict(sc)
    if args.nms:
        pred = nms_confidences(pred)
    _check_finite(pred)
    with _output(args.out) as fh:
        for line in _prediction_rows(pred):
            fh.write(line + "\n")
    if any(f is not None for f in sc.futures):
        for line in _metric_rows(evaluate(pred, sc)):
            sys.stderr.write(line + "\n")
    return EXIT_OK


def cmd_eval(args):
    sc = load_scenario(args.scenario)
    if not any(f is not None for f in sc.futures):
        raise ScenarioError("$.futures: evaluation needs ground-truth futures")
    model = _build_model(args, sc.t_f)
    pred = model.predict(sc)
    if args.nms:
        pred = nms_confidences(pred)
    _check_finite(pred)
    with _output(args.out) as fh:
        for line in _metric_rows(evaluate(pred, sc)):
            fh.write(line + "\n")
    return EXIT_OK


def cmd_stream(args):
    if args.scenario:
        base = load_scenario(args.scenario)
        steps = [base] * args.steps
    else:
        cfg = SynthConfig(seed=args.seed, n_lanes=args.lanes, n_agents=args.agents, n_lights=args.lights,
                          t_f=args.t_f, target_fraction=1.0)
        steps = synthetic_stream(cfg, args.steps, args.light_period)
    model = _build_model(args, steps[0].t_f)
    session = session_init(steps[0].map, model, steps[0].dt)
    worst = 0.0
    for sc in steps:
        pred, _ = session_step(session, sc.lights, sc.agents)
        _check_finite(pred)
        if args.check:
            ref = model.predict(sc)
            worst = max(worst, float(np.abs(ref.traj - pred.traj).max()),
                        float(np.abs(ref.conf_logits - pred.conf_logits).max()))
    with _output(args.out) as fh:
        fh.write(session.latency_log())
    if args.check:
        sys.stderr.write(f"max deviation from offline forward: {worst:.3e}\n")
        if worst > 1e-5:
            raise NumericalError("cached stream diverged from offline forward")
    return EXIT_OK


def cmd_gradcheck(args):
    names = None
    if args.params:
        probe = HPTR(ModelConfig.tiny(args.topology), seed=args.seed, dtype=np.float64)
        names = [n for n in probe.params if fnmatch.fnmatch(n, args.params)]
        if not names:
            raise UsageError(f"gradcheck: no parameter matches {args.params!r}")
    rep = gradcheck_model(args.seed, args.topology, names=names)
    with _output(args.out) as fh:
        fh.write("param,max_rel_err\n")
        for name, err in sorted(rep["per_param"].items()):
            fh.write(f"{name},{err:.3e}\n")
    status = "PASS" if rep["passed"] else "FAIL"
    print(f"{status} max_rel_err={rep['max_rel_err']:.3e} tol={rep['tol']:.0e}")
    return EXIT_OK if rep["passed"] else EXIT_NUMERIC


def cmd_train_toy(args):
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig.tiny(args.topology, t_f=args.t_f)
    scenarios = [generate_synthetic(SynthConfig(seed=args.seed + i, n_lanes=8, n_agents=4, n_lights=2,
                                                t_f=cfg.t_f, target_fraction=0.5))
                 for i in range(args.scenarios)]
    model, curve = toy_train(scenarios, cfg, args.epochs, seed=args.seed, lr=args.lr, dtype=_dtype(args))
    with _output(args.out) as fh:
        fh.write(format_curve(curve))
    sys.stderr.write(f"minADE after training: {min_ade(model, scenarios):.4f} m\n")
    if args.save_weights:
        save_weights(args.save_weights, model.params)
        cfg.save(Path(args.save_weights).with_suffix(".config.json"))
    return EXIT_OK


def _bench_job(job):
    mode, n, cfg, n_map, seed, repeat, latency = job
    sc = bench.bench_scenario(n, n_map, seed=seed, t_f=cfg.t_f)
    return bench.bench_point(sc, mode, cfg, seed, repeat=repeat, measure_latency=latency)


def cmd_bench(args):
    try:
        counts = [int(v) for v in args.agents.split(",")]
    except ValueError:
        raise UsageError(f"bench: --agents expects comma-separated integers, got {args.agents!r}") from None
    modes = bench.MODES if args.mode == "both" else (args.mode,)
    cfg = ModelConfig.load(args.config) if args.config else bench.bench_config(args.width, topology=args.topology)
    jobs = [(m, n, cfg, args.map, args.seed, args.repeat, not args.no_latency) for m in modes for n in counts]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_bench_job, jobs))
    else:
        rows = [_bench_job(j) for j in jobs]
    with _output(args.out) as fh:
        fh.write(bench.format_results(rows))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--topology", choices=TOPOLOGIES, default="lower_tri")
    common.add_argument("--precision", choices=("f32", "f64"), default="f32")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--weights", help="weight file written by save_weights")
    common.add_argument("--config", help="model config JSON")
    common.add_argument("--out", help="output path (default: stdout)")

    parser = _Parser(prog="hptr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write synthetic scenarios")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--lanes", type=int, default=32)
    p.add_argument("--agents", type=int, default=8)
    p.add_argument("--lights", type=int, default=4)
    p.add_argument("--t-h", type=int, default=11)
    p.add_argument("--t-f", type=int, default=80)
    p.add_argument("--target-fraction", type=float, default=0.5)
    p.set_defaults(fn=cmd_gen)

    for name, fn, helptext in (("predict", cmd_predict, "offline forward, prediction table"),
                               ("eval", cmd_eval, "offline forward, metrics table")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("scenario")
        p.add_argument("--nms", action="store_true", help="suppress near-duplicate modes")
        p.add_argument("--zero-weights", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("stream", parents=[common], help="cached online session, latency log")
    p.add_argument("scenario", nargs="?", help="repeat one scenario (default: synthetic stream)")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--light-period", type=int, default=10)
    p.add_argument("--lanes", type=int, default=64)
    p.add_argument("--agents", type=int, default=16)
    p.add_argument("--lights", type=int, default=8)
    p.add_argument("--t-f", type=int, default=80)
    p.add_argument("--check", action="store_true", help="compare every step with an offline forward")
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("gradcheck", parents=[common], help="finite differences on the tiny model")
    p.add_argument("--params", help="glob over parameter names (default: all)")
    p.set_defaults(fn=cmd_gradcheck, seed=7)

    p = sub.add_parser("train-toy", parents=[common], help="overfit a few synthetic scenarios")
    p.add_argument("--scenarios", type=int, default=8)
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--t-f", type=int, default=10)
    p.add_argument("--save-weights")
    p.set_defaults(fn=cmd_train_toy, precision="f64")

    p = sub.add_parser("bench", parents=[common], help="memory / latency scaling sweep")
    p.add_argument("--agents", default="8,16,32,64")
    p.add_argument("--mode", choices=bench.MODES + ("both",), default="both")
    p.add_argument("--map", type=int, default=1024)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--repeat", type=int, default=bench.REPEAT)
    p.add_argument("--no-latency", action="store_true", help="memory counts only")
    p.add_argument("--workers", type=int, default=1, help="run sweep points in parallel processes")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return args.fn(args)
    except UsageError as err:
        sys.stderr.write(f"hptr: usage error: {err}\n")
        return EXIT_USAGE
    except (ScenarioError, WeightFileError, FileNotFoundError, json.JSONDecodeError, KeyError, TypeError,
            ValueError) as err:
        sys.stderr.write(f"hptr: invalid input: {err}\n")
        return EXIT_INVALID
    except (NumericalError, TrainingDivergedError, FloatingPointError) as err:
        sys.stderr.write(f"hptr: numerical failure: {err}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
