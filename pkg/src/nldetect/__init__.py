"""Output-only damage detection in nonlinear oscillators with 1-D CNN autoencoders and GANs."""

__version__ = "0.1.0"
