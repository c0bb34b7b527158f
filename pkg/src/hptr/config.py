from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

from .encoding import EncodingConfig

TOPOLOGIES = ("lower_tri", "diag", "full", "diag_full")

DEFAULT_LAYERS = {
    "intra_mp": 6,
    "intra_tl": 3,
    "intra_ag": 3,
    "enhance_tl": 2,
    "enhance_ag": 2,
    "all2all": 6,
    "ac2all": 2,
}

# Stages run by each attention topology, in execution order (AC-to-all always last).
TOPOLOGY_STAGES = {
    "lower_tri": ("intra_mp", "enhance_tl", "enhance_ag", "ac2all"),
    "diag": ("intra_mp", "intra_tl", "intra_ag", "ac2all"),
    "full": ("all2all", "ac2all"),
    "diag_full": ("intra_mp", "intra_tl", "intra_ag", "all2all", "ac2all"),
}

# Layer counts of the ablation variants that differ from DEFAULT_LAYERS.
_TOPOLOGY_LAYER_PRESETS = {
    "lower_tri": {},
    "diag": {},
    "full": {"ac2all": 6},
    "diag_full": {"intra_tl": 2, "intra_ag": 2, "all2all": 2},
}


@dataclass(frozen=True)
class ModelConfig:
    d: int = 256
    heads: int = 4
    ff_dim: int = 1024
    dropout: float = 0.1
    omega: float = 1000.0
    pe_exponent_sign: int = 1
    attn_scale: str = "per_head"  # "per_head": sqrt(D/heads); "model_dim": sqrt(D)
    k: int = 36
    gamma_tl: int = 2
    gamma_ag: int = 4
    gamma_ac: int = 10
    n_anchors: int = 6
    layers: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_LAYERS))
    topology: str = "lower_tri"
    t_f: int = 80
    agent_types: int = 3
    c_mp: int = 11
    c_tl: int = 5
    anchor_init_scale: float = 5.0

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.d % self.heads:
            raise ValueError("heads must divide d")
        if self.attn_scale not in ("per_head", "model_dim"):
            raise ValueError(f"unknown attn_scale {self.attn_scale!r}")
        for key in DEFAULT_LAYERS:
            if key not in self.layers:
                raise ValueError(f"layers missing {key!r}")
        counts = [self.d, self.heads, self.ff_dim, self.k, self.gamma_tl, self.gamma_ag,
                  self.gamma_ac, self.n_anchors, self.t_f, self.agent_types, self.c_mp, self.c_tl]
        if min(counts) <= 0 or min(self.layers.values()) <= 0:
            raise ValueError("all counts must be positive")
        # normalise to a plain dict so configs compare equal after a JSON round trip
        object.__setattr__(self, "layers", dict(self.layers))

    @classmethod
    def for_topology(cls, topology: str, **overrides) -> "ModelConfig":
        layers = dict(DEFAULT_LAYERS)
        layers.update(_TOPOLOGY_LAYER_PRESETS[topology])
        layers.update(overrides.pop("layers", {}))
        return cls(topology=topology, layers=layers, **overrides)

    @classmethod
    def tiny(cls, topology: str = "lower_tri", **overrides) -> "ModelConfig":
        """D=16, one layer per stage; the size used for gradient checks."""
        base = dict(d=16, heads=4, ff_dim=32, dropout=0.0, k=4, gamma_tl=2, gamma_ag=2,
                    gamma_ac=4, t_f=4, layers={key: 1 for key in DEFAULT_LAYERS})
        base.update(overrides)
        return cls(topology=topology, **base)

    @property
    def stages(self) -> tuple:
        return TOPOLOGY_STAGES[self.topology]

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(dim=self.d, omega=self.omega, pe_exponent_sign=self.pe_exponent_sign)

    def neighbors(self, stage: str) -> int:
        gamma = {"enhance_tl": self.gamma_tl, "enhance_ag": self.gamma_ag, "ac2all": self.gamma_ac}
        return self.k * gamma.get(stage, 1)

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
