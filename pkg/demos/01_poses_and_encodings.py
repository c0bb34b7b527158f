# Poses, relative poses and the sinusoidal relative-pose encoding.
# Run: python demos/01_poses_and_encodings.py
import numpy as np

from hptr.encoding import EncodingConfig, pe, rpe
from hptr.geometry import Pose2, compose, knn_indices, relative_pose, relative_pose_array

# A pose is (x, y, heading). relative_pose(a, b) expresses b in a's frame.
a = Pose2(1.0, 1.0, np.pi / 2)
b = Pose2(1.0, 2.0, np.pi)
print("b seen from a:", relative_pose(a, b))   # one metre straight ahead, turned left by 90 deg

# Moving the whole scene rigidly does not change what a sees.
g = np.array([40.0, -7.0, 1.2])
moved = relative_pose_array(compose(g, a.as_array()), compose(g, b.as_array()))
print("after a rigid move:", np.round(moved, 12))

# Each of dx, dy, dtheta becomes D sinusoid features; the RPE is their concatenation.
cfg = EncodingConfig(dim=8)
print("PE(0.37):", np.round(pe(0.37, cfg), 4))
print("RPE width for D=8:", rpe(np.array([1.0, 0.0, np.pi / 2]), cfg).shape)

# Every token keeps only its K nearest valid neighbours (ties go to the lower index).
rng = np.random.default_rng(0)
poses = np.concatenate([rng.integers(-3, 4, (6, 2)), rng.uniform(-3, 3, (6, 1))], axis=1).astype(float)
valid = np.array([True, True, False, True, True, True])
nb = knn_indices(poses, poses, valid, 3)
print("neighbour indices:\n", nb.idx)
print("slot valid:\n", nb.valid)
