"""Computational blocks: causal attention, MLP, SSM cores, Mamba wrapper.

Blocks are bare sequence-to-sequence maps (B, T, D) -> (B, T, D); residual
connections and pre-layer normalization are applied by ``ResidualBlock``.
Every block is causal: position t never reads positions > t.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from icl_lab.models.scan import lti_scan, selective_scan

# softplus(dt) is drawn log-uniform in this range at init, following the
# standard selective-SSM recipe.
DT_INIT_MIN = 1e-3
DT_INIT_MAX = 1e-1


def _init_linear(layer: nn.Linear, generator: torch.Generator) -> None:
    # Fan-in scaled Gaussian; biases start at zero.
    std = layer.in_features ** -0.5
    with torch.no_grad():
        layer.weight.normal_(0.0, std, generator=generator)
        if layer.bias is not None:
            layer.bias.zero_()


def _inverse_softplus(y: torch.Tensor) -> torch.Tensor:
    return y + torch.log(-torch.expm1(-y))


class CausalSelfAttention(nn.Module):
    """Multi-head softmax attention with a strict causal mask."""

    def __init__(
        self,
        embed_dim: int,
        n_heads: int,
        max_seq_len: int,
        generator: torch.Generator,
    ):
        super().__init__()
        if embed_dim % n_heads != 0:
            raise ValueError(f"embed_dim {embed_dim} not divisible by {n_heads} heads")
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.head_dim = embed_dim // n_heads
        self.max_seq_len = max_seq_len
        self.qkv = nn.Linear(embed_dim, 3 * embed_dim)
        self.proj = nn.Linear(embed_dim, embed_dim)
        _init_linear(self.qkv, generator)
        _init_linear(self.proj, generator)
        mask = torch.tril(torch.ones(max_seq_len, max_seq_len, dtype=torch.bool))
        self.register_buffer("causal_mask", mask, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        if T > self.max_seq_len:
            raise ValueError(f"sequence length {T} exceeds max_seq_len {self.max_seq_len}")
        q, k, v = self.qkv(x).split(D, dim=2)
        q = q.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att.masked_fill(~self.causal_mask[:T, :T], float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, D)
        return self.proj(y)


class MLPBlock(nn.Module):
    """Position-wise feed-forward block with hidden width 4D."""

    def __init__(self, embed_dim: int, generator: torch.Generator):
        super().__init__()
        self.fc1 = nn.Linear(embed_dim, 4 * embed_dim)
        self.fc2 = nn.Linear(4 * embed_dim, embed_dim)
        _init_linear(self.fc1, generator)
        _init_linear(self.fc2, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class LTISSMCore(nn.Module):
    """Per-channel diagonal time-invariant SSM with skip connection.

    The continuous diagonal A is parameterized as -exp(A_log) with a learned
    per-channel step size, so the discretized a_bar = exp(dt * A) always has
    magnitude strictly below one.
    """

    def __init__(
        self,
        channels: int,
        state_dim: int,
        generator: torch.Generator,
        scan_impl: str = "auto",
    ):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        self.scan_impl = scan_impl
        a_init = torch.arange(1, state_dim + 1, dtype=torch.float32)
        self.A_log = nn.Parameter(a_init.log().repeat(channels, 1))
        log_dt = torch.empty(channels)
        with torch.no_grad():
            log_dt.uniform_(math.log(DT_INIT_MIN), math.log(DT_INIT_MAX), generator=generator)
        self.log_dt = nn.Parameter(log_dt)
        self.B = nn.Parameter(torch.ones(channels, state_dim))
        C = torch.empty(channels, state_dim)
        with torch.no_grad():
            C.normal_(0.0, state_dim ** -0.5, generator=generator)
        self.C = nn.Parameter(C)
        self.D_skip = nn.Parameter(torch.ones(channels))

    def discretized(self):
        dt = torch.exp(self.log_dt).unsqueeze(-1)
        a_bar = torch.exp(dt * (-torch.exp(self.A_log)))
        b_bar = dt * self.B
        return a_bar, b_bar

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a_bar, b_bar = self.discretized()
        return lti_scan(x, a_bar, b_bar, self.C, self.D_skip, impl=self.scan_impl)


class SelectiveSSMCore(nn.Module):
    """Input-dependent (selective) SSM: dt, B, C are projections of x_t."""

    def __init__(
        self,
        channels: int,
        state_dim: int,
        dt_rank: int,
        generator: torch.Generator,
        scan_impl: str = "auto",
    ):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        self.dt_rank = dt_rank
        self.scan_impl = scan_impl
        a_init = torch.arange(1, state_dim + 1, dtype=torch.float32)
        self.A_log = nn.Parameter(a_init.log().repeat(channels, 1))
        self.x_proj = nn.Linear(channels, dt_rank + 2 * state_dim, bias=False)
        _init_linear(self.x_proj, generator)
        self.dt_proj = nn.Linear(dt_rank, channels)
        with torch.no_grad():
            self.dt_proj.weight.uniform_(
                -(dt_rank ** -0.5), dt_rank ** -0.5, generator=generator
            )
            dt = torch.empty(channels)
            dt.uniform_(math.log(DT_INIT_MIN), math.log(DT_INIT_MAX), generator=generator)
            self.dt_proj.bias.copy_(_inverse_softplus(dt.exp()))
        self.D_skip = nn.Parameter(torch.ones(channels))

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        proj = self.x_proj(u)
        dt_low, B_t, C_t = torch.split(
            proj, [self.dt_rank, self.state_dim, self.state_dim], dim=-1
        )
        delta = F.softplus(self.dt_proj(dt_low))
        A = -torch.exp(self.A_log)
        return selective_scan(u, delta, A, B_t, C_t, self.D_skip, impl=self.scan_impl)


class CausalConv1d(nn.Module):
    """Depthwise causal convolution along the sequence axis."""

    def __init__(self, channels: int, width: int, generator: torch.Generator):
        super().__init__()
        self.width = width
        self.conv = nn.Conv1d(channels, channels, width, groups=channels)
        with torch.no_grad():
            self.conv.weight.normal_(0.0, width ** -0.5, generator=generator)
            self.conv.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (B, T, C) -> pad on the left so position t sees only t-width+1..t.
        y = self.conv(F.pad(x.transpose(1, 2), (self.width - 1, 0)))
        return y.transpose(1, 2)


class MambaBlock(nn.Module):
    """Gated SSM block: projection, causal conv, scan on one branch,
    multiplicative SiLU gate on the other.

    ``core="lti"`` swaps the selective scan for an input-independent one
    while keeping the surrounding conv/gating wrapper.
    """

    def __init__(
        self,
        embed_dim: int,
        state_dim: int,
        expansion: int,
        dt_rank: int,
        conv_width: int,
        generator: torch.Generator,
        core: str = "selective",
        scan_impl: str = "auto",
    ):
        super().__init__()
        inner = expansion * embed_dim
        self.inner_dim = inner
        self.in_proj = nn.Linear(embed_dim, 2 * inner, bias=False)
        _init_linear(self.in_proj, generator)
        self.conv = CausalConv1d(inner, conv_width, generator)
        if core == "selective":
            self.ssm = SelectiveSSMCore(inner, state_dim, dt_rank, generator, scan_impl)
        elif core == "lti":
            self.ssm = LTISSMCore(inner, state_dim, generator, scan_impl)
        else:
            raise ValueError(f"unknown core {core!r}")
        self.out_proj = nn.Linear(inner, embed_dim, bias=False)
        _init_linear(self.out_proj, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        xz = self.in_proj(x)
        u, z = xz.split(self.inner_dim, dim=-1)
        u = F.silu(self.conv(u))
        y = self.ssm(u)
        return self.out_proj(y * F.silu(z))


class S4Block(nn.Module):
    """Plain LTI stack element: SSM over the embedding channels, GELU,
    and a position-wise output projection."""

    def __init__(
        self,
        embed_dim: int,
        state_dim: int,
        generator: torch.Generator,
        scan_impl: str = "auto",
    ):
        super().__init__()
        self.ssm = LTISSMCore(embed_dim, state_dim, generator, scan_impl)
        self.out = nn.Linear(embed_dim, embed_dim)
        _init_linear(self.out, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(F.gelu(self.ssm(x)))


class ResidualBlock(nn.Module):
    """Pre-norm residual wrapper: x + inner(layer_norm(x))."""

    def __init__(self, embed_dim: int, inner: nn.Module):
        super().__init__()
        self.norm = nn.LayerNorm(embed_dim)
        self.inner = inner

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.inner(self.norm(x))
