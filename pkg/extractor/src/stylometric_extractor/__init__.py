"""Diffusion feature extraction: encode, noise, forward, capture, serialize."""

from .backbone import (
    CONTEXT_DIM,
    CONTEXT_TOKENS,
    LATENT_CHANNELS,
    UP_CHANNELS,
    Backbone,
    load_backbone,
)
from .config import ExtractionConfig
from .ift1 import load_manifest, write_ift1
from .pipeline import extract_batch, extract_features, load_image
from .schedule import alpha_bar, alphas_cumprod, image_noise_seed, noise_latent

__version__ = "0.1.0"
