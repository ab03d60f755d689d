"""State-space latent force models: inference, LQ control, certification."""

__version__ = "0.1.0"
