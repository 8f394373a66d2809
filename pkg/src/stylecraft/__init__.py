"""Style-adapter conditioning for a toy latent video diffusion model."""

__version__ = "0.1.0"
