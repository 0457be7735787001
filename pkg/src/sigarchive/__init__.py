"""Labeled latent-signature archives built by hierarchical NMF, with
reject-option classification of known, rare and novel classes."""

__version__ = "0.1.0"
