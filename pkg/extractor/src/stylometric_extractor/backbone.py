"""Offline denoiser backbone with the Stable Diffusion 2.1 contract surface.

The parts downstream code depends on are reproduced exactly: a VAE encoder
mapping 512x512 RGB to a 4x64x64 latent, and a UNet whose four up-blocks
emit (1280, 1280, 640, 320) channels at (16, 32, 64, 64) spatial size, with
timestep conditioning and 77x1024 cross-attention context. Per-block depth
is smaller than the original network (one fused residual unit per level,
grouped+pointwise convolutions, attention at the two lowest resolutions)
to keep CPU forwards tractable; weights are deterministic from a seed.
Feature capture uses forward hooks on the up-block modules.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

LATENT_CHANNELS = 4
LATENT_SCALE = 0.18215
DOWN_CHANNELS = (320, 640, 1280, 1280)
UP_CHANNELS = (1280, 1280, 640, 320)
CONTEXT_DIM = 1024
CONTEXT_TOKENS = 77
TIME_EMBED_DIM = 1280

# fixed seed for the null-conditioning context, a model constant
_NULL_CONTEXT_SEED = 77

# Residual-branch output projections are scaled near zero at init, the
# standard diffusion-UNet initialization (blocks start near identity).
# Without it an untrained network scrambles input statistics into noise.
_RESIDUAL_GAIN = 0.05


def _residual_init(conv: nn.Module) -> nn.Module:
    with torch.no_grad():
        if hasattr(conv, "weight"):
            conv.weight.mul_(_RESIDUAL_GAIN)
        if getattr(conv, "bias", None) is not None:
            conv.bias.zero_()
    return conv


def _groups(c: int) -> int:
    for g in (32, 16, 8, 4, 2, 1):
        if c % g == 0:
            return g
    return 1


def _fused_conv(cin: int, cout: int, stride: int = 1) -> nn.Module:
    """Grouped 3x3 + pointwise 1x1; falls back to a plain 3x3 for widths
    the grouping does not divide."""
    g = math.gcd(math.gcd(cin, cout), 8)
    if g <= 1:
        return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, groups=g),
        nn.Conv2d(cout, cout, 1),
    )


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb_dim: int = TIME_EMBED_DIM):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = _fused_conv(cin, cout)
        self.time_proj = nn.Linear(temb_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = _residual_init(nn.Conv2d(cout, cout, 1))
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class AttnBlock(nn.Module):
    """Self-attention + cross-attention + MLP over flattened spatial tokens."""

    def __init__(self, c: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(c), c)
        self.proj_in = nn.Conv2d(c, c, 1)
        self.self_attn = nn.MultiheadAttention(c, num_heads=8, batch_first=True)
        self.norm_cross = nn.LayerNorm(c)
        self.cross_attn = nn.MultiheadAttention(
            c, num_heads=8, kdim=CONTEXT_DIM, vdim=CONTEXT_DIM, batch_first=True
        )
        self.norm_mlp = nn.LayerNorm(c)
        self.mlp = nn.Sequential(nn.Linear(c, 2 * c), nn.SiLU(), nn.Linear(2 * c, c))
        self.proj_out = _residual_init(nn.Conv2d(c, c, 1))

    def forward(self, x, context):
        b, c, h, w = x.shape
        residual = x
        tokens = self.proj_in(self.norm(x)).flatten(2).transpose(1, 2)  # (b, hw, c)
        attn, _ = self.self_attn(tokens, tokens, tokens, need_weights=False)
        tokens = tokens + attn
        q = self.norm_cross(tokens)
        ctx = context.expand(b, -1, -1)
        cross, _ = self.cross_attn(q, ctx, ctx, need_weights=False)
        tokens = tokens + cross
        tokens = tokens + self.mlp(self.norm_mlp(tokens))
        out = self.proj_out(tokens.transpose(1, 2).reshape(b, c, h, w))
        return residual + out


class DownBlock(nn.Module):
    def __init__(self, cin: int, cout: int, attn: bool, downsample: bool):
        super().__init__()
        self.res = ResBlock(cin, cout)
        self.attn = AttnBlock(cout) if attn else None
        self.downsample = _fused_conv(cout, cout, stride=2) if downsample else None

    def forward(self, x, temb, context):
        h = self.res(x, temb)
        if self.attn is not None:
            h = self.attn(h, context)
        skip = h
        if self.downsample is not None:
            h = self.downsample(h)
        return h, skip


class UpBlock(nn.Module):
    """One decoder stage: skip concat, residual unit, optional attention,
    optional 2x upsample. Its forward output is the captured feature map."""

    def __init__(self, cin: int, cout: int, attn: bool, upsample: bool):
        super().__init__()
        self.res = ResBlock(cin, cout)
        self.attn = AttnBlock(cout) if attn else None
        self.upsample = nn.Conv2d(cout, cout, 1) if upsample else None

    def forward(self, x, skip, temb, context):
        h = self.res(torch.cat([x, skip], dim=1), temb)
        if self.attn is not None:
            h = self.attn(h, context)
        if self.upsample is not None:
            h = self.upsample(F.interpolate(h, scale_factor=2, mode="nearest"))
        return h


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half
    )
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Denoiser(nn.Module):
    """UNet: 4 down blocks, middle, 4 up blocks, epsilon-prediction head."""

    def __init__(self):
        super().__init__()
        self.conv_in = nn.Conv2d(LATENT_CHANNELS, DOWN_CHANNELS[0], 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(DOWN_CHANNELS[0], TIME_EMBED_DIM),
            nn.SiLU(),
            nn.Linear(TIME_EMBED_DIM, TIME_EMBED_DIM),
        )
        self.down_blocks = nn.ModuleList([
            DownBlock(DOWN_CHANNELS[0], DOWN_CHANNELS[0], attn=False, downsample=True),
            DownBlock(DOWN_CHANNELS[0], DOWN_CHANNELS[1], attn=False, downsample=True),
            DownBlock(DOWN_CHANNELS[1], DOWN_CHANNELS[2], attn=False, downsample=True),
            DownBlock(DOWN_CHANNELS[2], DOWN_CHANNELS[3], attn=True, downsample=False),
        ])
        self.mid_res1 = ResBlock(DOWN_CHANNELS[3], DOWN_CHANNELS[3])
        self.mid_attn = AttnBlock(DOWN_CHANNELS[3])
        self.mid_res2 = ResBlock(DOWN_CHANNELS[3], DOWN_CHANNELS[3])
        # skip widths mirror the encoder: 8x8/1280, 16x16/1280, 32x32/640, 64x64/320
        self.up_blocks = nn.ModuleList([
            UpBlock(DOWN_CHANNELS[3] + DOWN_CHANNELS[3], UP_CHANNELS[0],
                    attn=True, upsample=True),
            UpBlock(UP_CHANNELS[0] + DOWN_CHANNELS[2], UP_CHANNELS[1],
                    attn=False, upsample=True),
            UpBlock(UP_CHANNELS[1] + DOWN_CHANNELS[1], UP_CHANNELS[2],
                    attn=False, upsample=True),
            UpBlock(UP_CHANNELS[2] + DOWN_CHANNELS[0], UP_CHANNELS[3],
                    attn=False, upsample=False),
        ])
        self.norm_out = nn.GroupNorm(_groups(UP_CHANNELS[3]), UP_CHANNELS[3])
        self.conv_out = nn.Conv2d(UP_CHANNELS[3], LATENT_CHANNELS, 3, padding=1)

    def forward(self, z, t, context):
        temb = self.time_mlp(timestep_embedding(t, DOWN_CHANNELS[0]))
        h = self.conv_in(z)
        skips = []
        for block in self.down_blocks:
            h, skip = block(h, temb, context)
            skips.append(skip)
        h = self.mid_res1(h, temb)
        h = self.mid_attn(h, context)
        h = self.mid_res2(h, temb)
        for block, skip in zip(self.up_blocks, reversed(skips)):
            h = block(h, skip, temb, context)
        return self.conv_out(F.silu(self.norm_out(h)))


class VaeEncoder(nn.Module):
    """8x-downsampling image encoder; returns the latent distribution mode."""

    def __init__(self):
        super().__init__()
        widths = (32, 48, 64)
        self.conv_in = nn.Conv2d(3, widths[0], 3, padding=1)
        self.down = nn.ModuleList()
        cin = widths[0]
        for cout in widths:
            self.down.append(nn.Sequential(
                nn.GroupNorm(_groups(cin), cin),
                nn.SiLU(),
                nn.Conv2d(cin, cout, 3, stride=2, padding=1),
            ))
            cin = cout
        self.norm_out = nn.GroupNorm(_groups(cin), cin)
        self.conv_out = nn.Conv2d(cin, 2 * LATENT_CHANNELS, 1)

    def forward(self, x):
        h = self.conv_in(x)
        for stage in self.down:
            h = stage(h)
        moments = self.conv_out(F.silu(self.norm_out(h)))
        mean = moments[:, :LATENT_CHANNELS]
        return mean * LATENT_SCALE


class Backbone:
    """VAE encoder + denoiser + null conditioning, seeded deterministically."""

    def __init__(self, arch_seed: int):
        torch.manual_seed(arch_seed)
        self.encoder = VaeEncoder().eval()
        self.denoiser = Denoiser().eval()
        gen = torch.Generator().manual_seed(_NULL_CONTEXT_SEED)
        self.null_context = torch.randn(
            1, CONTEXT_TOKENS, CONTEXT_DIM, generator=gen
        )
        for p in self.encoder.parameters():
            p.requires_grad_(False)
        for p in self.denoiser.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """(b, 3, 512, 512) in [-1, 1] -> (b, 4, 64, 64) latent mode."""
        return self.encoder(images)

    @torch.no_grad()
    def up_block_features(self, z_t: torch.Tensor, t: int, idx: int) -> torch.Tensor:
        """Run one denoiser forward; capture up_blocks[idx] output via a hook."""
        captured: list[torch.Tensor] = []

        def hook(_module, _inputs, output):
            captured.append(output.detach())

        handle = self.denoiser.up_blocks[idx].register_forward_hook(hook)
        try:
            timesteps = torch.full((z_t.shape[0],), t, dtype=torch.long)
            self.denoiser(z_t, timesteps, self.null_context)
        finally:
            handle.remove()
        return captured[0]


_BACKBONE_CACHE: dict[int, Backbone] = {}


def load_backbone(model: str, arch_seed: int) -> Backbone:
    """Instantiate (and cache) the seeded offline backbone.

    `model` is recorded for provenance; pretrained Stable Diffusion weights
    are not importable in this offline build, so every identifier maps to
    the seeded architecture."""
    if arch_seed not in _BACKBONE_CACHE:
        _BACKBONE_CACHE[arch_seed] = Backbone(arch_seed)
    return _BACKBONE_CACHE[arch_seed]
