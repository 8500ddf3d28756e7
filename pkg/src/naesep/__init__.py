"""Supervised single-channel source separation with end-to-end non-negative
autoencoders: train one generative model per source on raw waveforms, then
separate unseen mixtures by gradient-based inference against the frozen
models."""

__version__ = "0.1.0"
