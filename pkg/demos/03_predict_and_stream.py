# Offline prediction on a synthetic scene, then the same scene as a cached online stream.
# Run: python demos/03_predict_and_stream.py
import numpy as np

from hptr.config import ModelConfig
from hptr.model import HPTR, global_predictions
from hptr.runtime import evaluate, nms_confidences, session_init, session_step
from hptr.scenario import SynthConfig, generate_synthetic, synthetic_stream

sc = generate_synthetic(SynthConfig(seed=4, n_lanes=40, n_agents=8, n_lights=4, t_f=20))
print("tokens:", sc.token_counts())

# Untrained weights: the numbers are meaningless, the shapes and frames are not.
model = HPTR(ModelConfig.for_topology("lower_tri", d=64, heads=4, ff_dim=256, t_f=sc.t_f), seed=0)
pred = model.predict(sc)
print("trajectories [targets, modes, steps, fields]:", pred.traj.shape)
print("confidences of the first target:", np.round(pred.confidences[0], 3))
print("after NMS:", np.round(nms_confidences(pred).confidences[0], 3))
print("world-frame end point of mode 0:", np.round(global_predictions(pred)[0, 0, -1, :2], 2))
print(evaluate(pred, sc).min_ade, "m minADE (random weights)")

# Online: the map stage runs once; lights are re-encoded only when their state changes.
steps = synthetic_stream(SynthConfig(seed=5, n_lanes=40, n_agents=8, n_lights=4, t_f=20), 6, light_period=3)
session = session_init(steps[0].map, model)
for s in steps:
    p, latency = session_step(session, s.lights, s.agents)
    same = np.abs(p.traj - model.predict(s).traj).max()
    print(f"step {session.steps - 1}: {latency / 1e3:7.1f} ms, stages {session.log[-1].stages:9s} "
          f"max diff vs offline {same:.1e}")
