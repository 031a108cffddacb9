"""Model configuration and architecture identifiers."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple


class ArchitectureId(str, Enum):
    TRANSFORMER = "Transformer"
    TRANSFORMER_NO_PE = "TransformerNoPE"
    MAMBA = "Mamba"
    S4 = "S4"
    S4_MAMBA = "S4Mamba"
    STANDARD_HYBRID = "StandardHybrid"
    MAMBAFORMER = "MambaFormer"
    MAMBA_MIDDLE_HYBRID = "MambaWithMiddleHybrid"


# Block kinds appearing in layouts.
ATTENTION = "attention"
MLP = "mlp"
MAMBA = "mamba"
MAMBA_LTI = "mamba_lti"
S4 = "s4"


@dataclass(frozen=True)
class ModelConfig:
    """Size and structural knobs shared by every architecture.

    ``use_positional_encoding=None`` defers to the architecture's default
    (present for Transformer and StandardHybrid, absent otherwise).
    ``dt_rank=None`` derives max(2, ceil(embed_dim / 16)).
    """

    n_layers: int
    embed_dim: int
    n_heads: int = 8
    state_dim: int = 16
    expansion: int = 2
    dt_rank: Optional[int] = None
    conv_width: int = 4
    use_positional_encoding: Optional[bool] = None
    max_seq_len: int = 1024
    scan_impl: str = "auto"

    def __post_init__(self) -> None:
        for name in ("n_layers", "embed_dim", "n_heads", "state_dim", "conv_width",
                     "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.expansion < 1:
            raise ValueError("expansion must be >= 1")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.dt_rank is not None and self.dt_rank < 1:
            raise ValueError("dt_rank must be >= 1")

    @property
    def resolved_dt_rank(self) -> int:
        if self.dt_rank is not None:
            return self.dt_rank
        return max(2, math.ceil(self.embed_dim / 16))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model fields: {sorted(unknown)}")
        return cls(**data)


def layout(arch: ArchitectureId, n_layers: int) -> Tuple[List[str], bool]:
    """Ordered block-kind list and positional-encoding default for one
    architecture.

    A "layer" is two blocks.  Transformer: [attention, mlp] pairs with a
    positional table.  Mamba: homogeneous gated-SSM blocks, two per layer.
    S4: time-invariant SSM + MLP pairs; S4Mamba keeps the Mamba gating/conv
    wrapper around a time-invariant core.  StandardHybrid replaces the
    transformer MLP with a Mamba block and keeps positional encoding.
    MambaFormer prepends one Mamba block to the hybrid stack and drops the
    positional table.  MambaWithMiddleHybrid is the homogeneous Mamba stack
    with its middle two blocks replaced by one [attention, mamba] pair.
    """
    arch = ArchitectureId(arch)
    if arch is ArchitectureId.TRANSFORMER:
        return [ATTENTION, MLP] * n_layers, True
    if arch is ArchitectureId.TRANSFORMER_NO_PE:
        return [ATTENTION, MLP] * n_layers, False
    if arch is ArchitectureId.MAMBA:
        return [MAMBA] * (2 * n_layers), False
    if arch is ArchitectureId.S4:
        return [S4, MLP] * n_layers, False
    if arch is ArchitectureId.S4_MAMBA:
        return [MAMBA_LTI] * (2 * n_layers), False
    if arch is ArchitectureId.STANDARD_HYBRID:
        return [ATTENTION, MAMBA] * n_layers, True
    if arch is ArchitectureId.MAMBAFORMER:
        return [MAMBA] + [ATTENTION, MAMBA] * n_layers, False
    if arch is ArchitectureId.MAMBA_MIDDLE_HYBRID:
        half = n_layers - 1
        return [MAMBA] * half + [ATTENTION, MAMBA] + [MAMBA] * half, False
    raise ValueError(f"unknown architecture {arch}")
