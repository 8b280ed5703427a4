"""Windowed-attention image generator.

The condition vector is embedded into a small token grid, refined by
shifted-window self-attention blocks, and upsampled stage by stage
(bicubic early, sub-pixel shuffle late, which divides the channel count
by four) until the output resolution is reached. A per-token linear head
plus tanh yields a single-channel image in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class GeneratorConfig:
    condition_dim: int = 128
    bottom_width: int = 4
    embed_dim: int = 256
    n_stages: int = 5
    blocks_per_stage: int = 2
    n_heads: int = 4
    window_size: int = 16
    dropout: float = 0.0
    bicubic_stages: int = 3  # stages 1..bicubic_stages upsample bicubically
    output_size: int = 128
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if min(self.condition_dim, self.bottom_width, self.embed_dim, self.n_stages,
               self.blocks_per_stage, self.n_heads, self.window_size, self.output_size) <= 0:
            raise ValueError("generator sizes must be positive")
        if self.bottom_width * 2**self.n_stages != self.output_size:
            raise ValueError(
                f"bottom_width * 2**n_stages must equal output_size "
                f"({self.bottom_width} * 2**{self.n_stages} != {self.output_size})"
            )
        if self.window_size > self.output_size:
            raise ValueError("window_size cannot exceed output_size")
        if not 0 <= self.bicubic_stages <= self.n_stages:
            raise ValueError("bicubic_stages must lie in [0, n_stages]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for i, ch in enumerate(self.channel_schedule()):
            if ch % self.n_heads != 0:
                raise ValueError(f"stage {i} channel count {ch} not divisible by n_heads")

    def channel_schedule(self) -> list[int]:
        """Channels entering each stage (length n_stages); pixel-shuffle
        stages hand over a quarter of their channels."""
        channels = [self.embed_dim]
        for stage in range(self.n_stages - 1):
            ch = channels[-1]
            if stage >= self.bicubic_stages:  # pixel-shuffle stage
                if ch % 4 != 0:
                    raise ValueError(f"stage {stage + 1} channels {ch} not divisible by 4 for pixel shuffle")
                ch //= 4
            channels.append(ch)
        return channels

    @property
    def head_channels(self) -> int:
        ch = self.channel_schedule()[-1]
        if self.n_stages > self.bicubic_stages:  # last upsample is a shuffle
            if ch % 4 != 0:
                raise ValueError(f"final stage channels {ch} not divisible by 4 for pixel shuffle")
            ch //= 4
        return ch


@dataclass
class FeatureGrid:
    """Token matrix with its attached spatial shape; tokens are
    (batch, height * width, channels)."""

    tokens: torch.Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.tokens.dim() == 2:
            self.tokens = self.tokens.unsqueeze(0)
        if self.tokens.dim() != 3:
            raise ValueError(f"tokens must be 2-D or 3-D, got {self.tokens.dim()}-D")
        if self.tokens.shape[1] != self.height * self.width:
            raise ValueError(
                f"token count {self.tokens.shape[1]} != {self.height}x{self.width}"
            )

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    def to_image(self) -> torch.Tensor:
        b, _, c = self.tokens.shape
        return self.tokens.transpose(1, 2).reshape(b, c, self.height, self.width)

    @staticmethod
    def from_image(x: torch.Tensor) -> "FeatureGrid":
        b, c, h, w = x.shape
        return FeatureGrid(x.reshape(b, c, h * w).transpose(1, 2), h, w)


class ConditionEmbedding(nn.Module):
    """Affine map from the condition vector to a bottom token grid plus a
    learned positional embedding."""

    def __init__(self, condition_dim: int, bottom_width: int, embed_dim: int):
        super().__init__()
        self.condition_dim = condition_dim
        self.bottom_width = bottom_width
        self.embed_dim = embed_dim
        self.proj = nn.Linear(condition_dim, bottom_width * bottom_width * embed_dim)
        self.pos = nn.Parameter(torch.zeros(1, bottom_width * bottom_width, embed_dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

    def forward(self, z: torch.Tensor) -> FeatureGrid:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        if z.shape[-1] != self.condition_dim:
            raise ValueError(f"condition length {z.shape[-1]} != {self.condition_dim}")
        b = self.bottom_width
        tokens = self.proj(z).reshape(z.shape[0], b * b, self.embed_dim) + self.pos
        return FeatureGrid(tokens, b, b)


def embed_condition(module: ConditionEmbedding, z) -> FeatureGrid:
    z = torch.as_tensor(z, dtype=next(module.parameters()).dtype)
    return module(z)


def _partition_windows(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * n_windows, window*window, C)."""
    b, h, w, c = x.shape
    x = x.view(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def _merge_windows(win: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of _partition_windows."""
    b = win.shape[0] // ((h // window) * (w // window))
    x = win.view(b, h // window, w // window, window, window, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


class WindowAttentionBlock(nn.Module):
    """Pre-norm transformer block whose self-attention runs inside
    non-overlapping (optionally cyclically shifted) windows.

    The effective window is clipped to min(window_size, H, W) at call
    time; the shift is applied modulo that effective window.
    """

    def __init__(self, dim: int, n_heads: int, window_size: int, shift: int = 0,
                 mlp_ratio: float = 4.0, dropout: float = 0.0):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, n_heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim), nn.Dropout(dropout)
        )

    def forward(self, grid: FeatureGrid, return_attention: bool = False):
        h, w = grid.height, grid.width
        window = min(self.window_size, h, w)
        if h % window != 0 or w % window != 0:
            raise ValueError(f"grid {h}x{w} not divisible into {window}-sized windows")
        shift = self.shift % window

        x = grid.tokens
        y = self.norm1(x).view(-1, h, w, grid.channels)
        if shift:
            y = torch.roll(y, shifts=(-shift, -shift), dims=(1, 2))
        windows = _partition_windows(y, window)
        attn_out, attn_weights = self.attn(
            windows, windows, windows,
            need_weights=return_attention, average_attn_weights=False,
        )
        y = _merge_windows(attn_out, window, h, w)
        if shift:
            y = torch.roll(y, shifts=(shift, shift), dims=(1, 2))
        x = x + y.reshape(x.shape)
        x = x + self.mlp(self.norm2(x))
        out = FeatureGrid(x, h, w)
        return (out, attn_weights) if return_attention else out


def window_attention_block(grid: FeatureGrid, block: WindowAttentionBlock) -> FeatureGrid:
    return block(grid)


def bicubic_upsample(grid: FeatureGrid) -> FeatureGrid:
    """2x spatial upsampling with the standard bicubic kernel; channels
    are preserved."""
    img = F.interpolate(grid.to_image(), scale_factor=2, mode="bicubic", align_corners=False)
    return FeatureGrid.from_image(img)


def pixel_shuffle_upsample(grid: FeatureGrid) -> FeatureGrid:
    """Sub-pixel rearrangement: 4C channels at HxW become C at 2Hx2W."""
    if grid.channels % 4 != 0:
        raise ValueError(f"pixel shuffle needs channels divisible by 4, got {grid.channels}")
    return FeatureGrid.from_image(F.pixel_shuffle(grid.to_image(), 2))


def upsample_stage(grid: FeatureGrid, mode: str) -> FeatureGrid:
    if mode == "bicubic":
        return bicubic_upsample(grid)
    if mode == "pixel_shuffle":
        return pixel_shuffle_upsample(grid)
    raise ValueError(f"unknown upsample mode {mode!r}")


class SwinGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.embedding = ConditionEmbedding(
            config.condition_dim, config.bottom_width, config.embed_dim
        )
        channels = config.channel_schedule()
        self.stages = nn.ModuleList()
        self.upsample_modes: list[str] = []
        for stage in range(config.n_stages):
            res = config.bottom_width * 2**stage
            window = min(config.window_size, res)
            blocks = nn.ModuleList(
                WindowAttentionBlock(
                    channels[stage],
                    config.n_heads,
                    config.window_size,
                    shift=0 if j % 2 == 0 else window // 2,
                    mlp_ratio=config.mlp_ratio,
                    dropout=config.dropout,
                )
                for j in range(config.blocks_per_stage)
            )
            self.stages.append(blocks)
            self.upsample_modes.append("bicubic" if stage < config.bicubic_stages else "pixel_shuffle")
        self.head = nn.Linear(config.head_channels, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """z: (B, condition_dim) -> images (B, output_size, output_size)."""
        grid = self.embedding(z)
        for stage_idx, blocks in enumerate(self.stages):
            for block in blocks:
                grid = block(grid)
            if not torch.isfinite(grid.tokens).all():
                raise FloatingPointError(f"non-finite activations in stage {stage_idx + 1}")
            grid = upsample_stage(grid, self.upsample_modes[stage_idx])
            if not torch.isfinite(grid.tokens).all():
                raise FloatingPointError(f"non-finite activations after upsample {stage_idx + 1}")
        out = torch.tanh(self.head(grid.tokens))
        return out.squeeze(-1).reshape(-1, grid.height, grid.width)


def build_generator(config: GeneratorConfig, seed: int = 0) -> SwinGenerator:
    torch.manual_seed(seed)
    return SwinGenerator(config)


def generator_forward(model: SwinGenerator, z) -> np.ndarray:
    """Evaluation-mode forward: condition vector(s) in, [-1, 1] image(s) out."""
    arr = np.asarray(z, dtype=np.float32)
    single = arr.ndim == 1
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            p = next(model.parameters())
            t = torch.as_tensor(arr, dtype=p.dtype, device=p.device)
            imgs = model(t).cpu().numpy()
    finally:
        model.train(was_training)
    return imgs[0] if single else imgs
