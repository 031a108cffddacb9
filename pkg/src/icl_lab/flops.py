"""Analytic cost model: multiplication counts per block, training FLOPs.

Counts are exact integers for sequence length L, embedding dim D, state dim
N, expansion E, and dt-rank R.  Training FLOPs multiply the per-pass
multiplication count by 6 (multiply-accumulate over forward and backward)
and by batch size and iteration count.  Read-in/read-out maps, positional
tables, and normalization are excluded.
"""

from __future__ import annotations

from typing import Dict

from icl_lab.models.config import (
    ATTENTION,
    MAMBA,
    MAMBA_LTI,
    MLP,
    S4,
    ArchitectureId,
    ModelConfig,
    layout,
)

FORWARD_BACKWARD_FACTOR = 6


def _check_positive(**kwargs: int) -> None:
    for name, value in kwargs.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")


def attention_mults(L: int, D: int) -> int:
    """QKV projections, score/value products, output projection."""
    _check_positive(L=L, D=D)
    return 3 * L * D * D + 2 * L * L * D + L * D * D


def mlp_mults(L: int, D: int) -> int:
    """Feed-forward with hidden width 4D."""
    _check_positive(L=L, D=D)
    return 8 * L * D * D


def transformer_block_mults(L: int, D: int) -> int:
    """One attention + feed-forward layer: 12 L D^2 + 2 L^2 D."""
    return attention_mults(L, D) + mlp_mults(L, D)


def mamba_block_mults(L: int, D: int, N: int, E: int = 2, R: int = 2) -> int:
    """Input projection 2LED^2, SSM 7LEDN + 2RLED, output projection LED^2."""
    _check_positive(L=L, D=D, N=N, E=E, R=R)
    return 2 * L * E * D * D + 7 * L * E * D * N + 2 * R * L * E * D + L * E * D * D


def s4_block_mults(L: int, D: int, N: int) -> int:
    """Time-invariant SSM stack element (extension beyond the published
    table): state update 2LDN, readout LDN, skip LD, output projection LD^2."""
    _check_positive(L=L, D=D, N=N)
    return 2 * L * D * N + L * D * N + L * D + L * D * D


def standard_hybrid_quadratic_mults(L: int, D: int) -> int:
    """Quadratic-term approximation of one attention + Mamba pair,
    ignoring the linear terms (E = 2)."""
    _check_positive(L=L, D=D)
    return 10 * L * D * D + 2 * L * L * D


def _block_mults(kind: str, L: int, cfg: ModelConfig) -> int:
    D = cfg.embed_dim
    if kind == ATTENTION:
        return attention_mults(L, D)
    if kind == MLP:
        return mlp_mults(L, D)
    if kind in (MAMBA, MAMBA_LTI):
        return mamba_block_mults(
            L, D, cfg.state_dim, cfg.expansion, cfg.resolved_dt_rank
        )
    if kind == S4:
        return s4_block_mults(L, D, cfg.state_dim)
    raise ValueError(f"unknown block kind {kind!r}")


def model_mults(arch: ArchitectureId, cfg: ModelConfig, L: int) -> int:
    """Multiplications for one forward pass over one prompt (B = 1)."""
    kinds, _ = layout(arch, cfg.n_layers)
    return sum(_block_mults(kind, L, cfg) for kind in kinds)


def training_flops(
    arch: ArchitectureId,
    cfg: ModelConfig,
    L: int,
    batch_size: int,
    iterations: int,
) -> int:
    """Total training FLOPs: block multiplications x 6 x batch x iterations."""
    if iterations < 0 or batch_size < 1:
        raise ValueError("need iterations >= 0 and batch_size >= 1")
    if iterations == 0:
        return 0
    return model_mults(arch, cfg, L) * FORWARD_BACKWARD_FACTOR * batch_size * iterations


def flops_report(
    arch: ArchitectureId,
    cfg: ModelConfig,
    L: int,
    batch_size: int,
    iterations: int,
) -> Dict:
    """Per-block-kind breakdown plus the x6 training total."""
    kinds, _ = layout(arch, cfg.n_layers)
    per_kind: Dict[str, dict] = {}
    for kind in kinds:
        entry = per_kind.setdefault(kind, {"blocks": 0, "mults_per_block": _block_mults(kind, L, cfg)})
        entry["blocks"] += 1
    total_mults = sum(e["blocks"] * e["mults_per_block"] for e in per_kind.values())
    return {
        "architecture": ArchitectureId(arch).value,
        "L": L,
        "embed_dim": cfg.embed_dim,
        "n_layers": cfg.n_layers,
        "batch_size": batch_size,
        "iterations": iterations,
        "per_block_kind": per_kind,
        "mults_per_pass": total_mults,
        "training_flops": training_flops(arch, cfg, L, batch_size, iterations),
    }
