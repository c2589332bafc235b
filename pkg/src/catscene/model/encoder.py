"""Shared frozen transformer encoder with per-branch bottleneck adapters.

Blocks come in pairs: windowed attention (W-MSA) followed by shifted-window
attention (SW-MSA), each with a pre-norm residual layout, and each followed by
an MLP whose output is augmented by a small trainable adapter:

    z_i   = W-MSA(LN(z_{i-1})) + z_{i-1}
    z^_i  = AdaptMLP(LN(z_i)) + z_i
    z_i+1 = SW-MSA(LN(z^_i)) + z^_i
    z^_i+1= AdaptMLP(LN(z_i+1)) + z_i+1

AdaptMLP(x) = FrozenMLP(x) + s * Up(act(Down(x))): the backbone MLP never
receives gradient; only the parallel bottleneck path trains. Each of the
three scene branches owns an independent adapter set while every other
backbone weight is shared. Configuring window_size equal to the full token
grid degenerates to plain attention with the shift a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

BRANCHES = ("center", "surrounding", "global")


@dataclass(frozen=True)
class EncoderConfig:
    input_resize: int = 32
    patch_size: int = 4
    embed_dim: int = 32
    depth: int = 4
    num_heads: int = 4
    window_size: int = 8

    def __post_init__(self):
        if self.input_resize % self.patch_size != 0:
            raise ValueError("input_resize must be divisible by patch_size")
        if self.depth % 2 != 0:
            raise ValueError("depth must be even (W-MSA/SW-MSA block pairs)")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.grid_size % self.window_size != 0:
            raise ValueError("token grid must be divisible by window_size")

    @property
    def grid_size(self) -> int:
        return self.input_resize // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_size**2


@dataclass(frozen=True)
class AdapterConfig:
    bottleneck_dim: int | None = None  # default embed_dim // 4
    scale: float = 0.1
    activation: str = "relu"

    def __post_init__(self):
        if self.bottleneck_dim is not None and self.bottleneck_dim < 1:
            raise ValueError("bottleneck_dim must be >= 1")
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")

    def resolve_bottleneck(self, dim: int) -> int:
        return self.bottleneck_dim if self.bottleneck_dim is not None else max(1, dim // 4)


@dataclass
class BranchFeatures:
    """Token sequence and mean-pooled vector for one branch."""

    branch: str
    tokens: torch.Tensor  # (B, N, d)
    pooled: torch.Tensor  # (B, d)


_ACTIVATIONS = {"relu": F.relu, "gelu": F.gelu, "tanh": torch.tanh}


class Adapter(nn.Module):
    """Bottleneck adapter: scale * Up(act(Down(x))); Up zero-initialized."""

    def __init__(self, dim: int, cfg: AdapterConfig):
        super().__init__()
        bottleneck = cfg.resolve_bottleneck(dim)
        self.down = nn.Linear(dim, bottleneck)
        self.up = nn.Linear(bottleneck, dim)
        self.scale = cfg.scale
        self.act = _ACTIVATIONS[cfg.activation]
        # Zero init keeps the adapted network exactly at the pretrained
        # function before the first optimizer step.
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.scale * self.up(self.act(self.down(x)))


class AdaptMLP(nn.Module):
    """Frozen two-layer MLP plus per-branch parallel adapters."""

    def __init__(self, dim: int, hidden_dim: int, adapter_cfg: AdapterConfig | None, branches: tuple[str, ...]):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)
        if adapter_cfg is not None:
            self.adapters = nn.ModuleDict({b: Adapter(dim, adapter_cfg) for b in branches})
        else:
            self.adapters = nn.ModuleDict()

    def frozen_mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))

    def forward(self, x: torch.Tensor, branch: str) -> torch.Tensor:
        out = self.frozen_mlp(x)
        if self.adapters:
            if branch not in self.adapters:
                raise KeyError(f"no adapter set for branch {branch!r}")
            out = out + self.adapters[branch](x)
        return out


class WindowAttention(nn.Module):
    """Multi-head self-attention within windows, with learned relative position bias."""

    def __init__(self, dim: int, window_size: int, num_heads: int):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, num_heads)
        )
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)

        coords = torch.stack(
            torch.meshgrid(torch.arange(window_size), torch.arange(window_size), indexing="ij")
        ).flatten(1)  # (2, w*w)
        rel = coords[:, :, None] - coords[:, None, :]
        rel = rel.permute(1, 2, 0) + (window_size - 1)
        index = rel[:, :, 0] * (2 * window_size - 1) + rel[:, :, 1]
        self.register_buffer("relative_position_index", index, persistent=False)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: (num_windows * B, w*w, dim)
        bw, n, _ = x.shape
        qkv = self.qkv(x).reshape(bw, n, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) / self.head_dim**0.5
        bias = self.relative_position_bias_table[self.relative_position_index.reshape(-1)]
        bias = bias.reshape(n, n, self.num_heads).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.num_heads, n, n) + mask.unsqueeze(1).unsqueeze(0)
            attn = attn.view(bw, self.num_heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bw, n, self.dim)
        return self.proj(out)


def window_partition(x: torch.Tensor, w: int) -> torch.Tensor:
    b, h, wd, c = x.shape
    x = x.view(b, h // w, w, wd // w, w, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, w * w, c)


def window_reverse(windows: torch.Tensor, w: int, h: int, wd: int) -> torch.Tensor:
    b = windows.shape[0] // (h * wd // (w * w))
    x = windows.view(b, h // w, wd // w, w, w, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, wd, -1)


class EncoderBlock(nn.Module):
    """One attention + AdaptMLP block (pre-norm residuals)."""

    def __init__(
        self,
        dim: int,
        grid: int,
        num_heads: int,
        window_size: int,
        shift: int,
        adapter_cfg: AdapterConfig | None,
        branches: tuple[str, ...],
        mlp_ratio: int = 4,
    ):
        super().__init__()
        self.grid = grid
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = AdaptMLP(dim, dim * mlp_ratio, adapter_cfg, branches)
        if shift > 0:
            self.register_buffer("attn_mask", self._shift_mask(), persistent=False)
        else:
            self.attn_mask = None

    def _shift_mask(self) -> torch.Tensor:
        g, w, s = self.grid, self.window_size, self.shift
        img_mask = torch.zeros(1, g, g, 1)
        regions = (slice(0, -w), slice(-w, -s), slice(-s, None))
        cnt = 0
        for hr in regions:
            for wr in regions:
                img_mask[:, hr, wr, :] = cnt
                cnt += 1
        windows = window_partition(img_mask, w).squeeze(-1)  # (nW, w*w)
        diff = windows.unsqueeze(1) - windows.unsqueeze(2)
        return torch.where(diff == 0, 0.0, float("-inf"))

    def forward(self, x: torch.Tensor, branch: str) -> torch.Tensor:
        b, n, c = x.shape
        g, w = self.grid, self.window_size

        shortcut = x
        y = self.norm1(x).view(b, g, g, c)
        if self.shift > 0:
            y = torch.roll(y, shifts=(-self.shift, -self.shift), dims=(1, 2))
        y = window_partition(y, w)
        y = self.attn(y, self.attn_mask)
        y = window_reverse(y, w, g, g)
        if self.shift > 0:
            y = torch.roll(y, shifts=(self.shift, self.shift), dims=(1, 2))
        x = shortcut + y.reshape(b, n, c)

        return x + self.mlp(self.norm2(x), branch)


class Backbone(nn.Module):
    """Patch embedding + stacked W-MSA/SW-MSA block pairs, shared across branches.

    ``branches`` names the adapter sets that exist; every other parameter is
    treated as pretrained-and-frozen by the classifier wrapper.
    """

    def __init__(
        self,
        cfg: EncoderConfig,
        adapter_cfg: AdapterConfig | None,
        branches: tuple[str, ...] = BRANCHES,
        in_chans: int = 3,
    ):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(in_chans, cfg.embed_dim, cfg.patch_size, stride=cfg.patch_size)
        self.embed_norm = nn.LayerNorm(cfg.embed_dim)
        grid = cfg.grid_size
        # Shift is a no-op when a single window covers the full grid.
        shift = 0 if cfg.window_size == grid else cfg.window_size // 2
        self.blocks = nn.ModuleList(
            EncoderBlock(
                cfg.embed_dim,
                grid,
                cfg.num_heads,
                cfg.window_size,
                shift if i % 2 == 1 else 0,
                adapter_cfg,
                branches,
            )
            for i in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)

    def forward(self, images: torch.Tensor, branch: str) -> BranchFeatures:
        if images.shape[-1] != self.cfg.input_resize or images.shape[-2] != self.cfg.input_resize:
            raise ValueError(
                f"expected {self.cfg.input_resize}px inputs, got {tuple(images.shape[-2:])}"
            )
        x = self.patch_embed(images).flatten(2).transpose(1, 2)  # (B, N, d)
        x = self.embed_norm(x)
        for block in self.blocks:
            x = block(x, branch)
        x = self.norm(x)
        return BranchFeatures(branch=branch, tokens=x, pooled=x.mean(dim=1))


def is_adapter_param(name: str) -> bool:
    return ".adapters." in name
