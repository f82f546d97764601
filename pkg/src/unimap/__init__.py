"""Desk-scale DDIM inversion lab with uniform cross-attention maps and adaptive-mask editing."""

__version__ = "0.1.0"
