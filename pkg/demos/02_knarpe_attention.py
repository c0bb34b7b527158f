# KNARPE: attention over K nearest neighbours, with the relative pose added to keys and values.
# Run: python demos/02_knarpe_attention.py
import numpy as np

from hptr.encoding import EncodingConfig
from hptr.geometry import compose, knn_indices
from hptr.knarpe import init_knarpe_params, knarpe_attend
from hptr.tensor import Tensor

rng = np.random.default_rng(1)
d, heads, n = 16, 4, 12
params = {}
init_knarpe_params(params, rng, "attn", d, np.float64)

tokens = rng.normal(size=(n, d))          # local attributes, frame independent
poses = np.concatenate([rng.normal(size=(n, 2)) * 15, rng.uniform(-np.pi, np.pi, (n, 1))], axis=1)

nb = knn_indices(poses, poses, np.ones(n, bool), 5)
out, weights = knarpe_attend(Tensor(tokens), Tensor(tokens), poses, poses, nb, params, "attn", heads,
                             EncodingConfig(dim=d), return_weights=True)
print("output", out.shape, "weights per row and head sum to", weights.sum(axis=-1)[0])

# The layer only sees relative poses, so a rigid move of all poses leaves the output unchanged.
g = np.array([250.0, -80.0, 2.0])
moved = compose(g, poses)
out2 = knarpe_attend(Tensor(tokens), Tensor(tokens), moved, moved, knn_indices(moved, moved, np.ones(n, bool), 5),
                     params, "attn", heads, EncodingConfig(dim=d))
print("max change after rigid move:", np.abs(out.data - out2.data).max())

# Gradients flow back to tokens and every projection.
x = Tensor(tokens, requires_grad=True)
knarpe_attend(x, x, poses, poses, nb, params, "attn", heads, EncodingConfig(dim=d)).sum().backward()
print("grad norms: tokens %.3f, k_rpe %.3f" % (np.linalg.norm(x.grad), np.linalg.norm(params["attn.k_rpe.w"].grad)))
