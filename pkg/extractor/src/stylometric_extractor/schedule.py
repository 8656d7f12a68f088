"""Forward-process noise schedule and latent noising.

Scaled-linear beta schedule over 1000 steps (beta: 0.00085 -> 0.012), the
schedule Stable Diffusion 2.1 ships with. alpha_bar[t] is the cumulative
product of (1 - beta) up to step t.
"""

from __future__ import annotations

import hashlib

import torch

NUM_TRAIN_TIMESTEPS = 1000
BETA_START = 0.00085
BETA_END = 0.012


def alphas_cumprod(dtype=torch.float64) -> torch.Tensor:
    betas = torch.linspace(BETA_START ** 0.5, BETA_END ** 0.5,
                           NUM_TRAIN_TIMESTEPS, dtype=dtype) ** 2
    return torch.cumprod(1.0 - betas, dim=0)


_ALPHAS_CUMPROD = alphas_cumprod()


def alpha_bar(t: int) -> float:
    if not 0 <= t < NUM_TRAIN_TIMESTEPS:
        raise ValueError(f"t={t} outside the schedule [0, {NUM_TRAIN_TIMESTEPS - 1}]")
    return float(_ALPHAS_CUMPROD[t])


def image_noise_seed(run_seed: int, image_id: str) -> int:
    """Stable per-image seed: hash of (run seed, image id)."""
    digest = hashlib.sha256(f"{run_seed}:{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def noise_latent(z0: torch.Tensor, t: int, seed: int) -> torch.Tensor:
    """z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps, eps ~ N(0, I).

    Deterministic for a given (z0, t, seed)."""
    abar = alpha_bar(t)
    generator = torch.Generator().manual_seed(seed)
    eps = torch.randn(z0.shape, generator=generator, dtype=torch.float32)
    return (abar ** 0.5) * z0 + ((1.0 - abar) ** 0.5) * eps
