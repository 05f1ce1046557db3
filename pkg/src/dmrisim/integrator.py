"""Adaptive TR-BDF2 for linear mass-matrix systems.

Solves ``M y' = -(K + c(t) L) y + s(t) b`` on ``[t0, t1]`` with restarts at
given breakpoints. Each step is a trapezoidal stage to ``t + γh`` followed by
a BDF2 stage to ``t + h`` (γ = 2 - √2); both stages share the matrix
``M + d(K + cL)`` with ``d = γh/2`` when ``c`` is constant. The local error
estimate is filtered through that matrix, which keeps it bounded for stiff
components.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystem, StepLimitExceeded

GAMMA_TR = 2.0 - math.sqrt(2.0)
_W1 = 1.0 / (GAMMA_TR * (2.0 - GAMMA_TR))
_W0 = (1.0 - GAMMA_TR) ** 2 / (GAMMA_TR * (2.0 - GAMMA_TR))
_ERRC = (-3.0 * GAMMA_TR ** 2 + 4.0 * GAMMA_TR - 2.0) / (12.0 * (2.0 - GAMMA_TR))
_GROW_MAX = 5.0
_SHRINK_MIN = 0.2
_SAFETY = 0.8
_KEEP_BAND = 1.2


@dataclass(frozen=True)
class OdeTolerances:
    rtol: float = 1e-6
    atol: float = 1e-9
    max_steps: int = 100_000

    def __post_init__(self):
        if not (0 < self.rtol < 1) or self.atol <= 0:
            raise ValueError("need 0 < rtol < 1 and atol > 0")


@dataclass
class StepRecord:
    """Accepted steps with stage points, for dense quadrature of observables."""

    t: list = field(default_factory=list)  # (t_n, t_gamma, t_{n+1})
    obs: list = field(default_factory=list)  # (o_n, o_gamma, o_{n+1})


@dataclass
class IntegrationResult:
    y: np.ndarray
    t: float
    nsteps: int
    nreject: int
    nfactor: int
    record: StepRecord | None = None


def _snap(h: float) -> float:
    """Round a step size down to the grid ``2^(k/4)`` so factorizations recur."""
    return 2.0 ** (math.floor(4.0 * math.log2(h)) / 4.0)


class _FactorCache:
    def __init__(self, M, K, L, size=6):
        self.M, self.K, self.L = M, K, L
        self.size = size
        self.store = OrderedDict()
        self.count = 0

    def get(self, d, c):
        key = (d, c)
        if key in self.store:
            self.store.move_to_end(key)
            return self.store[key]
        A = self.M + d * self.K
        if self.L is not None and c != 0:
            A = A + (d * c) * self.L
        A = sp.csc_matrix(A, dtype=complex)
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        self.count += 1
        self.store[key] = lu
        if len(self.store) > self.size:
            self.store.popitem(last=False)
        return lu


def tr_bdf2(M, K, y0, t_span, *, L=None, coef=None, src=None, b=None, breakpoints=(),
            tol: OdeTolerances = OdeTolerances(), h0=None, observe=None) -> IntegrationResult:
    """Integrate ``M y' = -(K + coef(t, a, b) L) y + src(t) b``.

    Parameters
    ----------
    M, K, L : sparse matrices
    y0 : array
    t_span : (t0, t1)
    coef : callable ``(t, a, b) -> scalar`` evaluated on the smooth piece ``[a, b]``
    src : callable ``t -> float`` scaling the constant vector ``b``
    breakpoints : times at which the integration restarts exactly
    observe : optional callable ``y -> array``; values at every step and stage
        point are kept in ``result.record``

    Returns
    -------
    IntegrationResult
    """
    t0, t1 = map(float, t_span)
    bps = sorted({t0, t1, *[float(x) for x in breakpoints if t0 < x < t1]})
    M = sp.csr_matrix(M)
    K = sp.csr_matrix(K)
    Lm = sp.csr_matrix(L) if L is not None else None
    cache = _FactorCache(M, K, Lm)
    y = np.asarray(y0, dtype=complex).copy()
    bv = None if b is None else np.asarray(b, dtype=complex)
    record = StepRecord() if observe is not None else None
    nsteps = nreject = 0

    def rhs(yv, c, s):
        r = -(K @ yv)
        if Lm is not None and c != 0:
            r -= c * (Lm @ yv)
        if bv is not None and s != 0:
            r += s * bv
        return r

    def c_at(t, a, bb):
        return 0.0 if coef is None else coef(t, a, bb)

    def s_at(t):
        return 0.0 if src is None else float(src(t))

    h = h0
    for a, bb in zip(bps[:-1], bps[1:]):
        length = bb - a
        if h is None:
            h = length / 100.0
        h = min(h, length)
        t = a
        while t < bb - 1e-14 * max(abs(bb), 1.0):
            last = t + h >= bb - 1e-12 * length
            hs = bb - t if last else h
            d = GAMMA_TR * hs / 2.0
            tg, tn1 = t + GAMMA_TR * hs, t + hs
            cn, cg, c1 = c_at(t, a, bb), c_at(tg, a, bb), c_at(tn1, a, bb)
            sn, sg, s1 = s_at(t), s_at(tg), s_at(tn1)
            rn = rhs(y, cn, sn)
            # trapezoidal stage: (M + d A_g) y_g = M y_n + d r_n + d s_g b
            rhs1 = M @ y + d * rn
            if bv is not None and sg != 0:
                rhs1 = rhs1 + (d * sg) * bv
            yg = cache.get(d, cg).solve(rhs1)
            # BDF2 stage
            rhs2 = M @ (_W1 * yg - _W0 * y)
            if bv is not None and s1 != 0:
                rhs2 = rhs2 + (d * s1) * bv
            lu1 = cache.get(d, c1)
            y1 = lu1.solve(rhs2)
            rg = rhs(yg, cg, sg)
            r1 = rhs(y1, c1, s1)
            est = (2.0 * _ERRC * hs) * (rn / GAMMA_TR - rg / (GAMMA_TR * (1.0 - GAMMA_TR))
                                        + r1 / (1.0 - GAMMA_TR))
            err_vec = lu1.solve(est)
            scale = tol.atol + tol.rtol * np.maximum(np.abs(y), np.abs(y1))
            err = float(np.max(np.abs(err_vec) / scale)) if len(y) else 0.0
            fac = _SAFETY * err ** (-1.0 / 3.0) if err > 0 else _GROW_MAX
            fac = min(_GROW_MAX, max(_SHRINK_MIN, fac))
            if err <= 1.0:
                if record is not None:
                    record.t.append((t, tg, tn1))
                    record.obs.append((observe(y), observe(yg), observe(y1)))
                y = y1
                t = tn1
                nsteps += 1
                new = _snap(hs * fac)
                if last and hs < h:
                    # a clipped final step does not set the pace
                    h = max(h, new) if fac >= 1.0 else new
                elif fac > _KEEP_BAND or fac < 1.0:
                    h = new
            else:
                nreject += 1
                h = _snap(hs * min(fac, 0.9))
            if nsteps + nreject > tol.max_steps:
                raise StepLimitExceeded(f"more than {tol.max_steps} steps")
            if not np.all(np.isfinite(y)):
                raise SingularSystem("non-finite solution")
    return IntegrationResult(y=y, t=t1, nsteps=nsteps, nreject=nreject,
                             nfactor=cache.count, record=record)
