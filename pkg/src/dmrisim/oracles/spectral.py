"""Laplace-eigenbasis signal of one interval or two intervals joined by a membrane.

Eigenpairs of ``-σ u'' = λ u`` with Neumann ends. For two segments
``[0, L1]`` and ``[L1, L1 + L2]`` with permeability κ at ``x = L1`` the modes
are ``A cos(k1 x)`` and ``B cos(k2 (L - x))``, ``k_j = sqrt(λ/σ_j)``, and λ
solves

    cot(k1 L1)/(σ1 k1) + cot(k2 L2)/(σ2 k2) = 1/κ.

The left side decreases strictly between consecutive Neumann poles
``σ_j (mπ/L_j)²``, so each gap between distinct poles holds one root.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from ..errors import NotConverged, RootBracketFailure
from ..sequences import GAMMA, Sequence


@dataclass(frozen=True)
class SpectralOracle1D:
    lengths: tuple
    sigmas: tuple
    kappa: float = 0.0
    rho: tuple | None = None

    def __post_init__(self):
        if len(self.lengths) not in (1, 2) or len(self.sigmas) != len(self.lengths):
            raise ValueError("one or two segments with one diffusivity each")
        if len(self.lengths) == 2 and self.kappa <= 0:
            raise ValueError("two segments need kappa > 0")

    @property
    def length(self) -> float:
        return float(sum(self.lengths))


@dataclass
class Eigenbasis:
    lam: np.ndarray
    A: np.ndarray  # position matrix ∫ u_m x u_n
    mass: np.ndarray  # (nseg, nmodes) ∫_seg u_n
    c0: np.ndarray  # initial coefficients


def _gauss(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _single_modes(L, sigma, n):
    k = np.arange(n) * math.pi / L
    lam = sigma * k * k

    def ev(x):
        out = np.sqrt(2.0 / L) * np.cos(np.outer(x, k))
        out[:, 0] = 1.0 / math.sqrt(L)
        return out

    return lam, [ev]


def _two_segment_eigenvalues(L1, L2, s1, s2, kappa, n):
    inv_k = 1.0 / kappa

    def phi(lam):
        k1, k2 = math.sqrt(lam / s1), math.sqrt(lam / s2)
        return (math.cos(k1 * L1) / (math.sin(k1 * L1) * s1 * k1)
                + math.cos(k2 * L2) / (math.sin(k2 * L2) * s2 * k2) - inv_k)

    lams = [0.0]
    m = 1
    while True:
        # enough poles to guarantee n eigenvalues below the last one
        top = max(s1 * (m * math.pi / L1) ** 2, s2 * (m * math.pi / L2) ** 2)
        p1 = s1 * (np.arange(1, m + 1) * math.pi / L1) ** 2
        p2 = s2 * (np.arange(1, m + 1) * math.pi / L2) ** 2
        if len(p1) + len(p2) >= n + 2:
            break
        m *= 2
    poles = np.sort(np.concatenate([p1, p2]))
    poles = poles[poles <= top]
    merged, double = [], []
    for p in poles:
        # near-coincident poles act as one double pole; the root between them
        # is the pole itself to within the merge tolerance
        if merged and abs(p - merged[-1]) <= 1e-10 * p:
            double[-1] = True
            continue
        merged.append(p)
        double.append(False)

    def bracket(a, b):
        # phi falls from +inf to -inf between poles; stay clear of the poles
        # by many ulps so rounding cannot flip the sign
        floor = 64.0 * np.spacing(b)
        for rel in 10.0 ** -np.arange(4, 17):
            eps = max(rel * (b - a), floor)
            lo, hi = a + eps, b - eps
            if phi(lo) > 0 > phi(hi):
                return lo, hi
            if eps == floor:
                break
        raise RootBracketFailure(f"no sign change in ({a}, {b})")

    edges = [0.0] + merged
    for i in range(len(edges) - 1):
        a, b = edges[i], edges[i + 1]
        lo, hi = bracket(a, b)
        lams.append(brentq(phi, lo, hi, xtol=1e-15 * b, rtol=1e-15, maxiter=200))
        if double[i]:
            lams.append(b)
        if len(lams) >= n:
            break
    if len(lams) < n:
        raise RootBracketFailure("not enough eigenvalues found")
    return np.array(lams[:n])


def _two_segment_modes(L1, L2, s1, s2, lam):
    L = L1 + L2
    k1 = np.sqrt(lam / s1)
    k2 = np.sqrt(lam / s2)
    c1, sn1 = np.cos(k1 * L1), np.sin(k1 * L1)
    c2, sn2 = np.cos(k2 * L2), np.sin(k2 * L2)
    B = np.ones_like(lam)
    tiny = np.abs(sn2) < 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = -s1 * k1 * sn1 / (s2 * k2 * sn2)
    B = np.where(tiny, c1 / np.where(np.abs(c2) > 0, c2, 1.0), ratio)
    B[0] = 1.0

    def seg1(x):
        return np.cos(np.outer(x, k1))

    def seg2(x):
        return np.cos(np.outer(L - x, k2)) * B

    return [seg1, seg2]


def eigenbasis(oracle: SpectralOracle1D, n: int) -> Eigenbasis:
    L = oracle.lengths
    nq = 4 * n + 64
    if len(L) == 1:
        lam, funcs = _single_modes(L[0], oracle.sigmas[0], n)
        bounds = [(0.0, L[0])]
    else:
        lam = _two_segment_eigenvalues(L[0], L[1], oracle.sigmas[0], oracle.sigmas[1],
                                       oracle.kappa, n)
        funcs = _two_segment_modes(L[0], L[1], oracle.sigmas[0], oracle.sigmas[1], lam)
        bounds = [(0.0, L[0]), (L[0], L[0] + L[1])]
    quad = [_gauss(a, b, nq) for a, b in bounds]
    vals = [f(x) for f, (x, _) in zip(funcs, quad)]
    norm2 = sum((w[:, None] * v * v).sum(axis=0) for v, (_, w) in zip(vals, quad))
    scale = 1.0 / np.sqrt(norm2)
    vals = [v * scale for v in vals]
    A = sum(v.T @ ((w * x)[:, None] * v) for v, (x, w) in zip(vals, quad))
    mass = np.array([(w[:, None] * v).sum(axis=0) for v, (_, w) in zip(vals, quad)])
    rho = oracle.rho or (1.0,) * len(L)
    c0 = sum(r * m for r, m in zip(rho, mass))
    return Eigenbasis(lam=np.asarray(lam, float), A=0.5 * (A + A.T), mass=mass, c0=c0)


def _propagate(basis: Eigenbasis, seq: Sequence, g: float):
    bp = seq.breakpoints()
    c = basis.c0.astype(complex)
    Lam = np.diag(basis.lam)
    for a, b in zip(bp[:-1], bp[1:]):
        if b <= a:
            continue
        fa = seq.f_piece(a, a, b)
        fm = seq.f(0.5 * (a + b))
        if abs(fa - fm) > 1e-12 * max(1.0, abs(fm)):
            raise ValueError("spectral oracle needs a piecewise-constant profile")
        c = expm(-(Lam + 1j * GAMMA * g * fm * basis.A) * (b - a)) @ c
    return c


def spectral_signal_1d(oracle: SpectralOracle1D, seq: Sequence, g: float, *,
                       n_start: int = 16, n_max: int = 512, tol: float = 1e-8,
                       per_segment: bool = False):
    """Signal normalized by the initial total magnetization.

    The number of modes doubles from ``n_start`` until the signal changes by
    less than ``tol``. With ``per_segment`` the per-segment signals are
    returned (same normalization).
    """
    prev = None
    n = n_start
    while n <= n_max:
        basis = eigenbasis(oracle, n)
        c = _propagate(basis, seq, g)
        s0 = float(basis.c0 @ basis.mass.sum(axis=0))
        seg = basis.mass @ c / s0
        total = seg.sum()
        if prev is not None and abs(total - prev) < tol:
            return seg if per_segment else total
        prev = total
        n *= 2
    raise NotConverged(f"spectral signal not converged with {n_max} modes")
