"""Independent reference implementations used as test oracles.

Everything here is plain float64 numpy written from the definitions, without
sharing code paths with the library (no Tensor, no gather, no vectorised RPE).
"""
import math

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def masked_max_loops(x, mask):
    out = np.full(x.shape[1], -np.inf)
    for n in range(x.shape[0]):
        if mask[n]:
            out = np.maximum(out, x[n])
    return out


def homogeneous(p):
    c, s = math.cos(p[2]), math.sin(p[2])
    return np.array([[c, -s, p[0]], [s, c, p[1]], [0.0, 0.0, 1.0]])


def relative_pose_matrix(p_i, p_j):
    r = np.linalg.inv(homogeneous(p_i)) @ homogeneous(p_j)
    return np.array([r[0, 2], r[1, 2], math.atan2(r[1, 0], r[0, 0])])


def knn_full_sort(query, targets, valid, k):
    """Per query: sort (distance, index) pairs of valid targets, take the first k."""
    width = min(k, len(targets))
    idx = np.zeros((len(query), width), dtype=np.int64)
    ok = np.zeros((len(query), width), dtype=bool)
    for i, q in enumerate(query):
        cands = sorted(((q[0] - t[0]) ** 2 + (q[1] - t[1]) ** 2, j) for j, t in enumerate(targets) if valid[j])
        for s, (_, j) in enumerate(cands[:width]):
            idx[i, s] = j
            ok[i, s] = True
    return idx, ok


def pe_scalar(x, dim, omega, sign=1):
    out = []
    for i in range(dim // 2):
        f = omega ** (sign * 2 * i / dim)
        out += [math.sin(x * f), math.cos(x * f)]
    return np.array(out)


def ae_scalar(theta, dim):
    out = []
    for i in range(dim // 2):
        out += [math.sin(theta * (i + 1)), math.cos(theta * (i + 1))]
    return np.array(out)


def rpe_scalar(r, dim, omega, sign=1):
    return np.concatenate([pe_scalar(r[0], dim, omega, sign), pe_scalar(r[1], dim, omega, sign),
                           ae_scalar(r[2], dim)])


def _p(params, name):
    return np.asarray(params[name].data, dtype=np.float64)


def lin(x, params, name):
    return x @ _p(params, name + ".w") + _p(params, name + ".b")


def dense_attention(src, tgt, src_poses, tgt_poses, params, name, heads, omega, tgt_mask=None, sign=1,
                    scale="per_head"):
    """Every source attends to every (unmasked) target; RPE added to each key/value pair."""
    m, d = src.shape
    dh = d // heads
    tgt_mask = np.ones(len(tgt), bool) if tgt_mask is None else tgt_mask
    q = lin(src, params, name + ".q")
    k0 = lin(tgt, params, name + ".k")
    v0 = lin(tgt, params, name + ".v")
    denom = math.sqrt(dh if scale == "per_head" else d)
    out = np.zeros((m, d))
    for i in range(m):
        cols = [j for j in range(len(tgt)) if tgt_mask[j]]
        r = np.stack([rpe_scalar(relative_pose_matrix(src_poses[i], tgt_poses[j]), d, omega, sign) for j in cols])
        keys = k0[cols] + lin(r, params, name + ".k_rpe")
        vals = v0[cols] + lin(r, params, name + ".v_rpe")
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            e = keys[:, sl] @ q[i, sl] / denom
            a = np.exp(e - e.max())
            a /= a.sum()
            out[i, sl] = a @ vals[:, sl]
    return out


def layer_norm_two_pass(x, gain, bias, eps=1e-5):
    mu = x.sum(axis=-1, keepdims=True) / x.shape[-1]
    var = ((x - mu) ** 2).sum(axis=-1, keepdims=True) / x.shape[-1]
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def dense_block(x, ctx, x_poses, ctx_poses, params, name, cfg, cross):
    h = layer_norm_two_pass(x, _p(params, name + ".ln_attn.gain"), _p(params, name + ".ln_attn.bias"))
    tgt, tgt_poses = (ctx, ctx_poses) if cross else (h, x_poses)
    a = dense_attention(h, tgt, x_poses, tgt_poses, params, name + ".attn", cfg.heads, cfg.omega,
                        sign=cfg.pe_exponent_sign, scale=cfg.attn_scale)
    x = x + lin(a, params, name + ".attn_out")
    h = layer_norm_two_pass(x, _p(params, name + ".ln_ff.gain"), _p(params, name + ".ln_ff.bias"))
    return x + lin(np.maximum(lin(h, params, name + ".ff1"), 0.0), params, name + ".ff2")


def mlp3(x, params, name):
    x = np.maximum(lin(x, params, name + ".0"), 0.0)
    x = np.maximum(lin(x, params, name + ".1"), 0.0)
    return lin(x, params, name + ".2")


def dense_full_topology(mp, tl, ag, targets, types, params, cfg):
    """Reference forward of the `full` topology from encoded (poses, attr) pairs with dense attention.

    Returns (conf_logits [T, N_AC], traj [T, N_AC, T_f, 9]) before clamping of sigma/rho.
    """
    parts = [p for p in (mp, tl, ag) if p is not None]
    poses = np.concatenate([p[0] for p in parts])
    x = np.concatenate([p[1] for p in parts])
    for layer in range(cfg.layers["all2all"]):
        x = dense_block(x, None, poses, None, params, f"all2all.{layer}", cfg, cross=False)
    n_ag = len(ag[0])
    ag_attr = x[-n_ag:]
    n_ac = cfg.n_anchors
    emb = _p(params, "anchors.emb")
    tokens, tok_poses = [], []
    for t, ty in zip(targets, types):
        for a in range(n_ac):
            tokens.append(lin(np.concatenate([ag_attr[t], emb[ty, a]]), params, "anchors.proj"))
            tok_poses.append(ag[0][t])
    z = np.stack(tokens)
    tok_poses = np.stack(tok_poses)
    for layer in range(cfg.layers["ac2all"]):
        z = dense_block(z, x, tok_poses, poses, params, f"ac2all.{layer}", cfg, cross=True)
    logits = mlp3(z, params, "head_conf").reshape(len(targets), n_ac)
    traj = mlp3(z, params, "head_traj").reshape(len(targets), n_ac, cfg.t_f, 9)
    return logits, traj
