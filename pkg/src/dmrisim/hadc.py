"""Homogenized ADC model, solved compartment by compartment.

Each compartment solves ``M ζ' = -S ζ + F(t) v`` with ``ζ(0) = 0`` and
``v_i = σ∫φ_i (u·n) ds``. The boundary functional ``h(t) = vᵀζ / V`` then
gives ``HADC = σ - ∫F h dt / ∫F² dt``. Because ``v`` carries the factor σ,
``h`` has the units of σ·F and the difference above is dimensionally
consistent.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import SolverError
from .fem import AssemblySet
from .integrator import OdeTolerances, tr_bdf2
from .sequences import Sequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HadcResult:
    adc: float
    sigma: float
    t: np.ndarray  # sample times (step and stage points)
    h: np.ndarray
    int_F2: float
    int_Fh: float
    nsteps: int


def _quad_Fh(seq: Sequence, steps_t, steps_h, rtol=1e-6, max_level=12):
    """∫F h dt with h quadratic on each step, trapezoid rule refined until stable."""
    T = np.asarray(steps_t)  # (n, 3)
    H = np.asarray(steps_h)
    if len(T) == 0:
        return 0.0
    t0, tg, t1 = T[:, 0:1], T[:, 1:2], T[:, 2:3]
    prev = None
    m = 4
    for _ in range(max_level):
        s = np.linspace(0.0, 1.0, m + 1)[None, :]
        tt = t0 + (t1 - t0) * s
        l0 = (tt - tg) * (tt - t1) / ((t0 - tg) * (t0 - t1))
        lg = (tt - t0) * (tt - t1) / ((tg - t0) * (tg - t1))
        l1 = (tt - t0) * (tt - tg) / ((t1 - t0) * (t1 - tg))
        hh = H[:, 0:1] * l0 + H[:, 1:2] * lg + H[:, 2:3] * l1
        FF = seq.F(tt.ravel()).reshape(tt.shape)
        val = float(trapezoid(FF * hh, tt, axis=1).sum())
        if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
            return val
        prev = val
        m *= 2
    return prev


def solve_hadc(assembly: AssemblySet, cmpt: int, seq: Sequence, direction,
               tol: OdeTolerances = OdeTolerances(1e-6, 1e-9)) -> HadcResult:
    """HADC of one compartment for one direction and sequence."""
    u = np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    sigma = float(assembly.model.sigma[cmpt])
    V = float(assembly.volumes[cmpt])
    M = assembly.M_cmpts[cmpt]
    S = assembly.S_cmpts[cmpt]
    v = assembly.source(cmpt, u)
    int_F2 = seq.integral_F2()
    if not np.any(v):
        return HadcResult(adc=sigma, sigma=sigma, t=np.array([0.0, seq.TE]), h=np.zeros(2),
                          int_F2=int_F2, int_Fh=0.0, nsteps=0)
    res = tr_bdf2(M, S, np.zeros(M.shape[0]), (0.0, seq.TE), src=seq.F, b=v,
                  breakpoints=seq.breakpoints(), tol=tol,
                  observe=lambda y: float((v @ y).real) / V)
    T = np.array(res.record.t)
    H = np.array(res.record.obs)
    int_Fh = _quad_Fh(seq, T, H)
    adc = sigma - int_Fh / int_F2
    order = np.argsort(T.ravel(), kind="stable")
    return HadcResult(adc=adc, sigma=sigma, t=T.ravel()[order], h=H.ravel()[order],
                      int_F2=int_F2, int_Fh=int_Fh, nsteps=res.nsteps)


@dataclass
class HadcGrid:
    """ADC per (compartment, experiment, direction); failures hold NaN."""

    ADC_cmpts_dir: np.ndarray
    directions: np.ndarray
    failures: list

    def ADC_allcmpts_dir(self, weights) -> np.ndarray:
        w = np.asarray(weights, float)
        return np.einsum("c,ced->ed", w, self.ADC_cmpts_dir) / w.sum()


def hadc_direction_sweep(assembly: AssemblySet, sequences, directions, compartments=None,
                         tol: OdeTolerances = OdeTolerances(1e-6, 1e-9),
                         threads: int = 1) -> HadcGrid:
    directions = np.atleast_2d(np.asarray(directions, float))
    ncmpt = assembly.mesh.ncompartment
    cmpts = range(ncmpt) if compartments is None else compartments
    out = np.full((ncmpt, len(sequences), len(directions)), np.nan)
    cells = [(c, ie, idir) for c in cmpts for ie in range(len(sequences))
             for idir in range(len(directions))]

    def work(cell):
        c, ie, idir = cell
        try:
            return cell, solve_hadc(assembly, c, sequences[ie], directions[idir], tol).adc, None
        except SolverError as exc:
            return cell, None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]
    failures = []
    for (c, ie, idir), adc, msg in results:
        if msg is not None:
            log.warning("HADC cell (%d, %d, %d) failed: %s", c, ie, idir, msg)
            failures.append((c, ie, idir, msg))
        else:
            out[c, ie, idir] = adc
    return HadcGrid(ADC_cmpts_dir=out, directions=directions, failures=failures)
