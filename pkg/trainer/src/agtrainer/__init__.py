"""Diffusion denoiser training/inference for channel-map tiles."""

__version__ = "0.1.0"
