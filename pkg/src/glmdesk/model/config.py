from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..attention import HeadLayout
from ..layers import DEFAULT_EPS, ffn_size
from ..position import RopeConfig

N_SPECIALS = 4


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of a GLM block stack.

    Special token ids default to the four highest ids of the vocabulary
    (MASK, SOP, EOP, PAD in that order).
    """

    n_layers: int
    hidden: int
    n_heads: int
    n_kv_groups: int
    vocab_size: int
    max_positions: int = 512
    d_ffn: int | None = None
    rope_base: float = 10000.0
    rope_scale: float = 1.0
    eps: float = DEFAULT_EPS
    tie_embeddings: bool = True
    qkv_bias: bool = True
    mask_id: int | None = None
    sop_id: int | None = None
    eop_id: int | None = None
    pad_id: int | None = None

    def __post_init__(self):
        if min(self.n_layers, self.hidden, self.n_heads, self.n_kv_groups, self.vocab_size) < 1:
            raise ValueError("model sizes must be positive")
        if self.hidden % self.n_heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by n_heads={self.n_heads}")
        if self.n_heads % self.n_kv_groups:
            raise ValueError(f"n_heads={self.n_heads} is not divisible by n_kv_groups={self.n_kv_groups}")
        if self.head_dim % 4:
            raise ValueError(f"head_dim={self.head_dim} must be divisible by 4 for 2-D RoPE")
        if self.d_ffn is None:
            object.__setattr__(self, "d_ffn", ffn_size(self.hidden))
        elif self.d_ffn != ffn_size(self.hidden):
            raise ValueError(f"d_ffn={self.d_ffn} but ffn_size({self.hidden})={ffn_size(self.hidden)}")
        if self.vocab_size < N_SPECIALS:
            raise ValueError("vocabulary too small to hold the special tokens")
        for offset, name in enumerate(("mask_id", "sop_id", "eop_id", "pad_id")):
            if getattr(self, name) is None:
                object.__setattr__(self, name, self.vocab_size - N_SPECIALS + offset)
            elif not 0 <= getattr(self, name) < self.vocab_size:
                raise ValueError(f"{name} out of vocabulary range")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    @property
    def layout(self) -> HeadLayout:
        return HeadLayout(self.n_heads, self.n_kv_groups, self.head_dim)

    @property
    def rope(self) -> RopeConfig:
        return RopeConfig(self.head_dim, self.rope_base, self.rope_scale)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)
