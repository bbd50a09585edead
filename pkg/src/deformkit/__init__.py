"""Deformation analysis of loaded structures from multi-epoch point clouds."""

__version__ = "0.1.0"
