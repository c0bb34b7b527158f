import json

import numpy as np
import pytest

from hptr import bench
from hptr.cli import main
from hptr.config import ModelConfig
from hptr.model import init_params
from hptr.scenario import load_scenario
from hptr.weights import save_weights


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    ModelConfig.tiny(t_f=20).save(path)
    return path


def test_gen_writes_valid_scenarios(tmp_path, capsys):
    assert main(["gen", "--count", "2", "--lanes", "5", "--agents", "3", "--out", str(tmp_path / "g")]) == 0
    files = sorted((tmp_path / "g").glob("*.json"))
    assert len(files) == 2
    assert load_scenario(files[0]).token_counts()["MP"] == 5
    assert main(["gen", "--count", "2"]) == 1


def test_predict_table(fixture_dir, tiny_config, capsys):
    assert main(["predict", str(fixture_dir / "scenario_a.json"), "--config", str(tiny_config)]) == 0
    out = capsys.readouterr()
    lines = out.out.splitlines()
    assert lines[0] == "agent,mode,confidence,step,x,y,theta"
    assert len(lines) == 1 + 3 * 6 * 20
    assert "min_ade" in out.err


def test_predict_zero_weights_gives_uniform_confidence(fixture_dir, capsys):
    assert main(["predict", str(fixture_dir / "scenario_no_lights.json"), "--zero-weights"]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert {r.split(",")[2] for r in rows} == {"0.166667"}


def test_eval_with_weights_and_nms(fixture_dir, tmp_path, tiny_config, capsys):
    save_weights(tmp_path / "w.bin", init_params(ModelConfig.load(tiny_config), seed=3))
    argv = ["eval", str(fixture_dir / "scenario_c.json"), "--config", str(tiny_config),
            "--weights", str(tmp_path / "w.bin"), "--nms"]
    assert main(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "agent,min_ade,min_fde,miss" and lines[-1].startswith("mean,")
    # a config that does not match the weights is invalid input
    ModelConfig.tiny(t_f=20, d=32, heads=4).save(tmp_path / "other.json")
    argv[argv.index(str(tiny_config))] = str(tmp_path / "other.json")
    assert main(argv) == 2


def test_invalid_inputs(tmp_path, fixture_dir, capsys):
    assert main(["predict", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{")
    assert main(["eval", str(tmp_path / "bad.json")]) == 2
    doc = json.loads((fixture_dir / "scenario_a.json").read_text())
    doc["agents"][0]["history"] = "nope"
    (tmp_path / "broken.json").write_text(json.dumps(doc))
    assert main(["predict", str(tmp_path / "broken.json")]) == 2
    assert "$.agents[0].history" in capsys.readouterr().err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["predict"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    assert main(["bench", "--agents", "a,b"]) == 1
    assert main(["gradcheck", "--params", "no.such.*"]) == 1


def test_stream_check(tmp_path, tiny_config, capsys):
    out = tmp_path / "lat.csv"
    argv = ["stream", "--steps", "4", "--lanes", "6", "--agents", "3", "--lights", "2", "--light-period", "2",
            "--config", str(tiny_config), "--check", "--out", str(out)]
    assert main(argv) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,latency_us,stages" and len(lines) == 5
    assert lines[1].endswith("tl+ag+ac") and lines[2].endswith(",ag+ac")
    assert "max deviation" in capsys.readouterr().err


def test_gradcheck_subset(capsys):
    assert main(["gradcheck", "--params", "head_conf.*"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "param,max_rel_err"
    assert "PASS" in out


def test_train_toy(tmp_path, capsys):
    w = tmp_path / "toy.bin"
    assert main(["train-toy", "--scenarios", "2", "--epochs", "3", "--t-f", "4", "--save-weights", str(w)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("epoch,") and len(lines) == 4
    assert w.exists() and w.with_suffix(".config.json").exists()


def test_bench_command(tmp_path, capsys):
    argv = ["bench", "--agents", "2,4", "--map", "16", "--width", "16", "--no-latency", "--out", str(tmp_path / "b")]
    assert main(argv) == 0
    lines = (tmp_path / "b").read_text().splitlines()
    assert lines[0] == "mode,n_agents,peak_bytes,context_bytes,forward_ms,cached_step_ms"
    assert len(lines) == 5


# -- bench library --------------------------------------------------------------
def test_bench_point_counts():
    cfg = bench.bench_config(16, t_f=4)
    small, big = (bench.bench_scenario(n, 32, n_lights=4, t_f=4) for n in (4, 8))
    pw = [bench.bench_point(s, "pairwise_relative", cfg, measure_latency=False) for s in (small, big)]
    ac = [bench.bench_point(s, "agent_centric_emulation", cfg, measure_latency=False) for s in (small, big)]
    assert all(r.peak_bytes > 0 for r in pw + ac)
    # every target copies the whole scene in the agent-centric emulation
    assert ac[1].context_bytes / ac[0].context_bytes > 1.8
    assert pw[1].context_bytes / pw[0].context_bytes < 1.2
    assert np.isnan(pw[0].forward_ms)
    with pytest.raises(ValueError):
        bench.bench_point(small, "sideways", cfg)


def test_bench_latency_fields():
    cfg = bench.bench_config(16, t_f=4)
    sc = bench.bench_scenario(3, 16, n_lights=2, t_f=4)
    r = bench.bench_point(sc, "pairwise_relative", cfg, repeat=2, warmup=0)
    assert r.forward_ms > 0 and r.cached_step_ms > 0
    assert bench.format_results([r]).count("\n") == 2
