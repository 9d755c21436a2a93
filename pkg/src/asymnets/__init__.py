"""Asymmetric MLPs: parameter-symmetry removal, interpolation barriers and symmetry checks."""

__version__ = "0.1.0"
