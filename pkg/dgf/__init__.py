"""Differentiable guided filtering: layer, guidance network and training harness."""

__version__ = '1.0.0'
