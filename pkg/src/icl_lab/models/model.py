"""Model assembly: read-in, block stack, read-out."""

from __future__ import annotations

import torch
from torch import nn

from icl_lab.models import config as mc
from icl_lab.models.blocks import (
    CausalSelfAttention,
    MambaBlock,
    MLPBlock,
    ResidualBlock,
    S4Block,
    _init_linear,
)
from icl_lab.models.config import ArchitectureId, ModelConfig, layout


def _make_block(kind: str, cfg: ModelConfig, generator: torch.Generator) -> nn.Module:
    if kind == mc.ATTENTION:
        return CausalSelfAttention(cfg.embed_dim, cfg.n_heads, cfg.max_seq_len, generator)
    if kind == mc.MLP:
        return MLPBlock(cfg.embed_dim, generator)
    if kind == mc.MAMBA:
        return MambaBlock(
            cfg.embed_dim, cfg.state_dim, cfg.expansion, cfg.resolved_dt_rank,
            cfg.conv_width, generator, core="selective", scan_impl=cfg.scan_impl,
        )
    if kind == mc.MAMBA_LTI:
        return MambaBlock(
            cfg.embed_dim, cfg.state_dim, cfg.expansion, cfg.resolved_dt_rank,
            cfg.conv_width, generator, core="lti", scan_impl=cfg.scan_impl,
        )
    if kind == mc.S4:
        return S4Block(cfg.embed_dim, cfg.state_dim, generator, cfg.scan_impl)
    raise ValueError(f"unknown block kind {kind!r}")


class SequenceModel(nn.Module):
    """A read-in affine map, an ordered stack of pre-norm residual blocks,
    a final normalization, and a read-out affine map.

    The forward pass is causal end to end; predictions are gathered at the
    caller-supplied positions.
    """

    def __init__(
        self,
        arch: ArchitectureId,
        cfg: ModelConfig,
        in_width: int,
        out_width: int,
        seed: int = 0,
    ):
        super().__init__()
        self.arch = ArchitectureId(arch)
        self.cfg = cfg
        self.in_width = in_width
        self.out_width = out_width
        self.init_seed = seed
        generator = torch.Generator().manual_seed(seed)

        kinds, pe_default = layout(self.arch, cfg.n_layers)
        use_pe = pe_default if cfg.use_positional_encoding is None else cfg.use_positional_encoding
        self.block_kinds = kinds

        self.read_in = nn.Linear(in_width, cfg.embed_dim)
        _init_linear(self.read_in, generator)
        if use_pe:
            pos = torch.empty(cfg.max_seq_len, cfg.embed_dim)
            with torch.no_grad():
                pos.normal_(0.0, 0.02, generator=generator)
            self.positional = nn.Parameter(pos)
        else:
            self.positional = None
        self.blocks = nn.ModuleList(
            ResidualBlock(cfg.embed_dim, _make_block(kind, cfg, generator))
            for kind in kinds
        )
        self.final_norm = nn.LayerNorm(cfg.embed_dim)
        self.read_out = nn.Linear(cfg.embed_dim, out_width)
        _init_linear(self.read_out, generator)

    @property
    def uses_positional_encoding(self) -> bool:
        return self.positional is not None

    def hidden(self, tokens: torch.Tensor) -> torch.Tensor:
        B, T, W = tokens.shape
        if W != self.in_width:
            raise ValueError(f"token width {W} does not match read-in width {self.in_width}")
        if T > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {T} exceeds max_seq_len {self.cfg.max_seq_len}")
        h = self.read_in(tokens)
        if self.positional is not None:
            h = h + self.positional[:T]
        for block in self.blocks:
            h = block(h)
        return self.final_norm(h)

    def forward(
        self, tokens: torch.Tensor, predict_at: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Outputs at ``predict_at`` positions, shape (B, P, out_width);
        with ``predict_at=None`` returns outputs at every position."""
        out = self.read_out(self.hidden(tokens))
        if predict_at is None:
            return out
        return out[:, predict_at, :]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(
    arch: ArchitectureId | str,
    cfg: ModelConfig,
    in_width: int,
    out_width: int,
    seed: int = 0,
) -> SequenceModel:
    """Assemble one architecture with reproducible initialization."""
    return SequenceModel(ArchitectureId(arch), cfg, in_width, out_width, seed)
