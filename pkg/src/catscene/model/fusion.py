"""Adaptive context fusion: center-queried cross-attention over context tokens.

The pooled center feature queries the surrounding and global token sequences
through two independent multi-head attention modules. The attended context
vectors are concatenated behind the center feature:

    f_s_fused = concat(center, f_s_acf)            -> 2d
    f_g_fused = concat(center, f_s_acf, f_g_acf)   -> 3d
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoder import BranchFeatures

GLOBAL_KV_MODES = ("global", "surround+global")


@dataclass
class FusedFeatures:
    f_s_acf: torch.Tensor  # (B, d)
    f_g_acf: torch.Tensor  # (B, d)
    f_s_fused: torch.Tensor  # (B, 2d)
    f_g_fused: torch.Tensor  # (B, 3d)
    attn_s: torch.Tensor | None = None  # (B, heads, Nq, N_s)
    attn_g: torch.Tensor | None = None


class ContextAttention(nn.Module):
    """Multi-head attention with external queries and context keys/values."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError("dim must be divisible by num_heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: torch.Tensor, kv: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """query: (B, d) or (B, Nq, d); kv: (B, N, d). Returns (output, weights)."""
        if kv.ndim != 3 or kv.shape[1] == 0:
            raise ValueError("kv must be a nonempty (B, N, d) token sequence")
        single = query.ndim == 2
        if single:
            query = query.unsqueeze(1)
        b, nq, _ = query.shape
        n = kv.shape[1]
        h, hd = self.num_heads, self.head_dim
        q = self.q_proj(query).view(b, nq, h, hd).transpose(1, 2)
        k = self.k_proj(kv).view(b, n, h, hd).transpose(1, 2)
        v = self.v_proj(kv).view(b, n, h, hd).transpose(1, 2)
        weights = torch.softmax((q @ k.transpose(-2, -1)) / hd**0.5, dim=-1)  # (B, h, Nq, N)
        out = (weights @ v).transpose(1, 2).reshape(b, nq, self.dim)
        out = self.out_proj(out)
        if single:
            out = out.squeeze(1)
        return out, weights


class AcfModule(nn.Module):
    """Two-level context fusion with independent attention parameter sets.

    ``token_query`` switches the query from the pooled center vector to the
    full center token sequence (outputs mean-pooled before concatenation).
    ``global_kv`` selects keys/values for the global level: the global tokens
    alone, or surrounding and global tokens concatenated.
    """

    def __init__(self, dim: int, num_heads: int, token_query: bool = False, global_kv: str = "global"):
        super().__init__()
        if global_kv not in GLOBAL_KV_MODES:
            raise ValueError(f"global_kv must be one of {GLOBAL_KV_MODES}")
        self.token_query = token_query
        self.global_kv = global_kv
        self.surround_attn = ContextAttention(dim, num_heads)
        self.global_attn = ContextAttention(dim, num_heads)

    def forward(
        self,
        center: BranchFeatures,
        surrounding: BranchFeatures,
        global_: BranchFeatures,
    ) -> FusedFeatures:
        query = center.tokens if self.token_query else center.pooled
        f_s_acf, attn_s = self.surround_attn(query, surrounding.tokens)
        if self.global_kv == "surround+global":
            kv_g = torch.cat([surrounding.tokens, global_.tokens], dim=1)
        else:
            kv_g = global_.tokens
        f_g_acf, attn_g = self.global_attn(query, kv_g)
        if self.token_query:
            f_s_acf = f_s_acf.mean(dim=1)
            f_g_acf = f_g_acf.mean(dim=1)
        return FusedFeatures(
            f_s_acf=f_s_acf,
            f_g_acf=f_g_acf,
            f_s_fused=torch.cat([center.pooled, f_s_acf], dim=-1),
            f_g_fused=torch.cat([center.pooled, f_s_acf, f_g_acf], dim=-1),
            attn_s=attn_s,
            attn_g=attn_g,
        )
