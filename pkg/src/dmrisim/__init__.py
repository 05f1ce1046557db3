"""Finite-element diffusion MRI simulation on multi-compartment geometries.

Units throughout: lengths in µm, times in µs, diffusivities in µm²/µs,
permeabilities in µm/µs, b-values in µs/µm² (numerically equal to s/mm²).
"""
__version__ = "0.1.0"
