"""Adversarial autoencoder pipeline for 3D face shapes on UV position maps."""

__version__ = "0.1.0"
