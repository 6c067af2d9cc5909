"""Mixture-of-experts density models with polynomial GLM experts."""

__version__ = "0.1.0"
