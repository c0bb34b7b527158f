"""Sinusoidal position / angle encodings and the relative pose encoding built from them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    dim: int = 256
    omega: float = 1000.0
    # +1 multiplies x by omega**(2i/D) (frequency grows with i); -1 is the usual inverse form.
    pe_exponent_sign: int = 1

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2:
            raise ValueError(f"encoding dim must be even and positive, got {self.dim}")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.pe_exponent_sign not in (1, -1):
            raise ValueError("pe_exponent_sign must be +1 or -1")

    def frequencies(self) -> np.ndarray:
        i = np.arange(self.dim // 2, dtype=np.float64)
        return self.omega ** (self.pe_exponent_sign * 2.0 * i / self.dim)


def _interleave(arg: np.ndarray) -> np.ndarray:
    out = np.empty(arg.shape[:-1] + (2 * arg.shape[-1],), dtype=np.float64)
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def pe(x, cfg: EncodingConfig) -> np.ndarray:
    """Position encoding; ``x`` of any shape maps to ``[..., D]``."""
    x = np.asarray(x, dtype=np.float64)
    return _interleave(x[..., None] * cfg.frequencies())


def ae(theta, cfg: EncodingConfig) -> np.ndarray:
    """Angle encoding with integer harmonics 1..D/2, hence 2*pi periodic."""
    theta = np.asarray(theta, dtype=np.float64)
    k = np.arange(1, cfg.dim // 2 + 1, dtype=np.float64)
    return _interleave(theta[..., None] * k)


def rpe(r, cfg: EncodingConfig) -> np.ndarray:
    """Relative pose encoding ``[pe(dx); pe(dy); ae(dtheta)]`` of width ``3 * D``.

    ``r`` is an array ``[..., 3]`` or anything with ``dx, dy, dtheta`` attributes.
    """
    if hasattr(r, "dx"):
        r = np.array([r.dx, r.dy, r.dtheta])
    r = np.asarray(r, dtype=np.float64)
    return np.concatenate([pe(r[..., 0], cfg), pe(r[..., 1], cfg), ae(r[..., 2], cfg)], axis=-1)
