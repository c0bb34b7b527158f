# Why a shared pairwise-relative context scales better than one scene copy per agent.
# Run: python demos/05_context_memory.py
from hptr import bench

cfg = bench.bench_config(32, t_f=20)
rows = []
for n in (4, 8, 16):
    sc = bench.bench_scenario(n, n_map=256, n_lights=8, t_f=20)
    for mode in bench.MODES:
        rows.append(bench.bench_point(sc, mode, cfg, measure_latency=False))
print(bench.format_results(rows, sep="\t"))
# context_bytes stays flat for pairwise_relative (the map dominates) and doubles with the
# number of agents for the agent-centric emulation, which re-encodes the scene per target.
