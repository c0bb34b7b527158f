"""K-nearest-neighbor attention with relative pose encoding.

Layout of one attention call (M sources, N targets, K neighbor slots, width D):

    targets [N, D] --project--> [N, D] --gather_rows(idx)--> [M, K, D]
    poses --relative pose--> [M, K, 3] --rpe--> [M, K, 3D] --project--> [M, K, D]
    keys/values = gathered + projected RPE; queries never see the RPE
    logits [M, H, 1, K], invalid slots at -inf, softmax over K, weighted sum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encoding import EncodingConfig, rpe
from .geometry import EmptyNeighborhoodError, NeighborIndex, knn_indices, relative_pose_array
from .nn import init_layer_norm, init_linear, linear
from .tensor import Tensor, dropout, gather_rows, layer_norm, masked_fill, relu, softmax

def init_knarpe_params(params: dict, rng, name: str, d: int, dtype=np.float64):
    for t in ("q", "k", "v"):
        init_linear(params, rng, f"{name}.{t}", d, d, dtype)
    for t in ("k_rpe", "v_rpe"):
        init_linear(params, rng, f"{name}.{t}", 3 * d, d, dtype)


def init_block_params(params: dict, rng, name: str, d: int, ff_dim: int, dtype=np.float64):
    init_layer_norm(params, f"{name}.ln_attn", d, dtype)
    init_knarpe_params(params, rng, f"{name}.attn", d, dtype)
    init_linear(params, rng, f"{name}.attn_out", d, d, dtype)
    init_layer_norm(params, f"{name}.ln_ff", d, dtype)
    init_linear(params, rng, f"{name}.ff1", d, ff_dim, dtype)
    init_linear(params, rng, f"{name}.ff2", ff_dim, d, dtype)


@dataclass
class Neighborhood:
    """Neighbor index plus the per-pair RPE, computed once per stage and shared by its layers."""
    index: NeighborIndex
    rpe: np.ndarray  # [M, K, 3D] float64

    @property
    def idx(self):
        return self.index.idx

    @property
    def valid(self):
        return self.index.valid


def pair_rpe(src_poses, tgt_poses, idx, enc: EncodingConfig) -> np.ndarray:
    src = np.asarray(src_poses, dtype=np.float64)
    tgt = np.asarray(tgt_poses, dtype=np.float64)
    r = relative_pose_array(src[:, None, :], tgt[idx])
    return rpe(r, enc)


def build_neighborhood(src_poses, tgt_poses, tgt_valid, k: int, enc: EncodingConfig) -> Neighborhood:
    index = knn_indices(src_poses, tgt_poses, tgt_valid, k)
    return Neighborhood(index, pair_rpe(src_poses, tgt_poses, index.idx, enc))


def knarpe_attend(src_attr: Tensor, tgt_attr: Tensor, src_poses, tgt_poses, neighbors,
                  params: dict, name: str, heads: int, enc: EncodingConfig,
                  scale: str = "per_head", rpe_pairs: Optional[np.ndarray] = None,
                  return_weights: bool = False):
    """Let every source token attend to its neighbor slots among the targets.

    ``neighbors`` is a NeighborIndex or Neighborhood; a Neighborhood (or explicit
    ``rpe_pairs``) skips recomputing the pair encodings.
    """
    if isinstance(neighbors, Neighborhood):
        rpe_pairs = neighbors.rpe if rpe_pairs is None else rpe_pairs
        neighbors = neighbors.index
    idx, valid = neighbors.idx, neighbors.valid
    if not np.all(valid.any(axis=1)):
        raise EmptyNeighborhoodError("knarpe_attend: a source row has no valid neighbors")
    m, k = idx.shape
    d = src_attr.shape[-1]
    if d % heads:
        raise ValueError("heads must divide the model width")
    dh = d // heads
    if rpe_pairs is None:
        rpe_pairs = pair_rpe(src_poses, tgt_poses, idx, enc)
    pairs = Tensor(rpe_pairs.astype(src_attr.dtype, copy=False))

    q = linear(src_attr, params, f"{name}.q")
    keys = gather_rows(linear(tgt_attr, params, f"{name}.k"), idx) + linear(pairs, params, f"{name}.k_rpe")
    vals = gather_rows(linear(tgt_attr, params, f"{name}.v"), idx) + linear(pairs, params, f"{name}.v_rpe")

    qh = q.reshape(m, heads, 1, dh)
    kh = keys.reshape(m, k, heads, dh).transpose(0, 2, 3, 1)
    vh = vals.reshape(m, k, heads, dh).transpose(0, 2, 1, 3)
    denom = dh if scale == "per_head" else d
    logits = (qh @ kh) * (1.0 / np.sqrt(denom))
    logits = masked_fill(logits, ~valid[:, None, None, :], -np.inf)
    alpha = softmax(logits, axis=-1)
    z = (alpha @ vh).reshape(m, d)
    if return_weights:
        return z, alpha.data[:, :, 0, :]
    return z


def knarpe_block(x: Tensor, context: Optional[Tensor], x_poses, ctx_poses, neighbors, params: dict,
                 name: str, cfg, mode: str = "self", training: bool = False, rng=None) -> Tensor:
    """Pre-LN transformer layer around knarpe_attend.

    ``mode="self"``: keys/values come from LN(x) itself. ``mode="cross"``: keys/values
    come from ``context`` as given (no normalisation of the context).
    """
    h = layer_norm(x, params[f"{name}.ln_attn.gain"], params[f"{name}.ln_attn.bias"])
    if mode == "self":
        tgt, tgt_poses = h, x_poses
    elif mode == "cross":
        tgt, tgt_poses = context, ctx_poses
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a = knarpe_attend(h, tgt, x_poses, tgt_poses, neighbors, params, f"{name}.attn",
                      cfg.heads, cfg.encoding, cfg.attn_scale)
    a = linear(a, params, f"{name}.attn_out")
    x = x + dropout(a, cfg.dropout, rng, training)
    h = layer_norm(x, params[f"{name}.ln_ff.gain"], params[f"{name}.ln_ff.bias"])
    f = linear(relu(linear(h, params, f"{name}.ff1")), params, f"{name}.ff2")
    return x + dropout(f, cfg.dropout, rng, training)
