"""Scene relighting with illumination swapped in the latent space of a siamese encoder-decoder."""

__version__ = "0.1.0"
