"""Anisotropy estimation and isotropy testing for affine Gaussian fields from level curves."""

__version__ = "0.1.0"
