"""ADC fitting, the short-time approximation and signal comparison metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientPoints, NonPositiveSignal, ZeroReference
from .sequences import Sequence


@dataclass(frozen=True)
class AdcFit:
    adc: float
    coefficients: np.ndarray  # c0, c1, ... of log|S| in powers of b
    degree: int
    rel_tol: float


def fit_adc(bvalues, signals, rel_tol: float = 1e-2, max_degree: int = 6) -> AdcFit:
    """Fit log|S(b)| by polynomials of increasing degree; ADC = -c1.

    The degree grows from 1 until the linear coefficient changes by at most
    ``rel_tol`` relative to its new value, or no more points are available.

    Examples
    --------
    >>> b = np.array([0.0, 100.0, 200.0])
    >>> round(fit_adc(b, np.exp(-2e-3 * b)).adc, 12)
    0.002
    """
    b = np.asarray(bvalues, float)
    s = np.abs(np.asarray(signals))
    if len(b) != len(s):
        raise ValueError("bvalues and signals differ in length")
    if len(np.unique(b)) < 2:
        raise InsufficientPoints("need at least two distinct b-values")
    if np.any(~(s > 0)):
        raise NonPositiveSignal("signal magnitudes must be positive")
    y = np.log(s)
    # scale b for conditioning
    scale = float(np.max(np.abs(b))) or 1.0
    x = b / scale
    nuniq = len(np.unique(b))
    prev = None
    coef = None
    deg = 1
    for n in range(1, min(max_degree, nuniq - 1) + 1):
        c = np.polynomial.polynomial.polyfit(x, y, n)
        c1 = c[1] / scale
        coef, deg = c / scale ** np.arange(n + 1), n
        if prev is not None and abs(c1 - prev) <= rel_tol * abs(c1):
            break
        prev = c1
    return AdcFit(adc=-float(coef[1]), coefficients=coef, degree=deg, rel_tol=rel_tol)


def c_delta_Delta(delta: float, Delta: float) -> float:
    """Finite-pulse factor of the short-time approximation (PGSE)."""
    d, D = float(delta), float(Delta)
    num = (D + d) ** 3.5 + (D - d) ** 3.5 - 2.0 * (d ** 3.5 + D ** 3.5)
    return 4.0 / 35.0 * num / (d * d * (D - d / 3.0))


def c_delta_Delta_series(delta: float, Delta: float) -> float:
    """Small-δ expansion of :func:`c_delta_Delta` through order (δ/Δ)^{5/2}.

    With r = δ/Δ the factor is √Δ·(1 + r/3 − (8/35)r^{3/2} + (25/144)r² − (8/105)r^{5/2}),
    accurate to O(r³).

    Examples
    --------
    >>> abs(c_delta_Delta_series(100.0, 1e4) / c_delta_Delta(100.0, 1e4) - 1) < 1e-7
    True
    """
    r = delta / Delta
    return math.sqrt(Delta) * (1.0 + r / 3.0 - 8.0 / 35.0 * r ** 1.5 + 25.0 / 144.0 * r * r
                               - 8.0 / 105.0 * r ** 2.5)


@dataclass(frozen=True)
class StaResult:
    adc: float
    C: float
    A_ug: float
    V: float
    sigma: float


def sta_from_factor(sigma, C, A_ug, V) -> StaResult:
    adc = sigma * (1.0 - 4.0 * math.sqrt(sigma) / (3.0 * math.sqrt(math.pi)) * C * A_ug / V)
    return StaResult(adc=adc, C=C, A_ug=A_ug, V=V, sigma=sigma)


def sta_adc(sigma: float, delta: float, Delta: float, A_ug: float, V: float) -> StaResult:
    """Short-time ADC with the finite-pulse PGSE factor.

    Examples
    --------
    >>> round(sta_adc(2e-3, 1000.0, 1000.0, 1.0, 5.0).adc * 1e3, 3)
    1.466
    """
    if not 0 < delta <= Delta:
        raise ValueError("need 0 < delta <= Delta")
    if V <= 0:
        raise ValueError("volume must be positive")
    return sta_from_factor(sigma, c_delta_Delta(delta, Delta), A_ug, V)


def sta_adc_sequence(sigma: float, seq: Sequence, A_ug: float, V: float) -> StaResult:
    """Short-time ADC for any profile through its generalized time factor."""
    return sta_from_factor(sigma, seq.diffusion_time_factor(), A_ug, V)


def combine_allcmpts(bvalues, MF_cmpts, rel_tol: float = 1e-2):
    """Total signal over compartments and the ADC fitted to it.

    ``MF_cmpts`` has compartments on the first axis and b-values on the last.
    """
    total = np.sum(np.asarray(MF_cmpts), axis=0)
    return total, fit_adc(bvalues, total, rel_tol)


def signal_difference(ref, test, mode: str = "abs_ref0") -> np.ndarray:
    """Percent difference E(b) between two signal curves sharing a b-grid."""
    ref = np.abs(np.asarray(ref))
    test = np.abs(np.asarray(test))
    if ref.shape != test.shape:
        raise ValueError("curves must share the b-grid")
    if ref[0] == 0:
        raise ZeroReference("reference signal vanishes at the first b-value")
    if mode == "abs_ref0":
        return np.abs(ref - test) / ref[0] * 100.0
    if mode == "ratio":
        if test[0] == 0:
            raise ZeroReference("test signal vanishes at the first b-value")
        return np.abs(test / test[0] - ref / ref[0]) * 100.0
    raise ValueError(f"unknown mode {mode!r}")
