"""Reference solutions: free diffusion, 1D spectral expansion, random walk."""
import numpy as np

from .spectral import Eigenbasis, SpectralOracle1D, eigenbasis, spectral_signal_1d
from .walker import (BACKEND, Substrate, WalkerOracle, WalkResult, make_substrate, run_walk,
                     substrate_from_mesh, substrate_from_ply, transmission_probability,
                     walker_signal)


def free_signal(b, sigma):
    """Unrestricted attenuation ``exp(-σ b)``.

    Examples
    --------
    >>> round(float(free_signal(1000.0, 2e-3)), 4)
    0.1353
    """
    if np.any(np.asarray(b) < 0) or np.any(np.asarray(sigma) < 0):
        raise ValueError("b and sigma must be nonnegative")
    return np.exp(-np.asarray(sigma) * np.asarray(b))


__all__ = [
    "BACKEND", "Eigenbasis", "SpectralOracle1D", "Substrate", "WalkResult", "WalkerOracle",
    "eigenbasis", "free_signal", "make_substrate", "run_walk", "spectral_signal_1d",
    "substrate_from_mesh", "substrate_from_ply", "transmission_probability", "walker_signal",
]
