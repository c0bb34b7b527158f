# Overfit a tiny model on a few synthetic scenes and watch the loss terms.
# Run: python demos/04_overfit_toy.py   (about half a minute)
import numpy as np

from hptr.config import ModelConfig
from hptr.scenario import SynthConfig, generate_synthetic
from hptr.training import min_ade, toy_train

scenes = [generate_synthetic(SynthConfig(seed=i, n_lanes=8, n_agents=4, n_lights=2, t_f=10, target_fraction=0.5))
          for i in range(4)]
cfg = ModelConfig.tiny(d=32, heads=4, ff_dim=64, t_f=10)


def show(e):
    if e.epoch % 20 == 0:
        print(f"epoch {e.epoch:3d}  pos {e.l_pos:8.3f}  rot {e.l_rot:6.3f}  vel {e.l_vel:7.3f}  "
              f"conf {e.l_conf:5.3f}  total {e.l_total:8.3f}")


# a raised learning rate keeps the demo short; the acceptance run uses 1e-4 for 3000 epochs
model, curve = toy_train(scenes, cfg, epochs=150, lr=1e-3, log_fn=show)
print("minADE on the training scenes: %.3f m" % min_ade(model, scenes))
print("total loss fell from %.1f to %.1f" % (curve[0].l_total, curve[-1].l_total))
