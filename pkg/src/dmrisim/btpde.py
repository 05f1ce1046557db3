"""Bloch-Torrey solves on assembled multi-compartment meshes.

The semi-discrete system is

    M ξ' = -(S + Q̄ + R + iγ g f(t) J(u)) ξ,   ξ(0) = ρ,

with R = Σ_c M_c / T2_c. The magnetization is complex throughout.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .fem import AssemblySet
from .integrator import IntegrationResult, OdeTolerances, tr_bdf2
from .sequences import GAMMA, Sequence, bvalue

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BtpdeProblem:
    assembly: AssemblySet
    sequence: Sequence
    direction: np.ndarray
    g: float

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("gradient amplitude must be non-negative")
        u = np.asarray(self.direction, float)
        object.__setattr__(self, "direction", u / np.linalg.norm(u))


def _operators(assembly: AssemblySet):
    K = assembly.S + assembly.Qbar
    if np.any(np.isfinite(assembly.model.T2)):
        K = K + assembly.relaxation()
    return K.tocsr()


def solve_btpde(problem: BtpdeProblem, tol: OdeTolerances = OdeTolerances(),
                observe=None) -> IntegrationResult:
    """Integrate the magnetization from ξ(0) = ρ to the echo time."""
    A = problem.assembly
    seq = problem.sequence
    K = _operators(A)
    L = (1j * GAMMA * problem.g) * A.J(problem.direction) if problem.g > 0 else None
    coef = (lambda t, a, b: seq.f_piece(t, a, b)) if L is not None else None
    return tr_bdf2(A.M, K, A.initial_state(), (0.0, seq.TE), L=L, coef=coef,
                   breakpoints=seq.breakpoints(), tol=tol, observe=observe)


def integrate_signal(state, assembly: AssemblySet) -> np.ndarray:
    """Per-compartment complex signal ``1ᵀ M_c ξ_c``."""
    y = state.y if isinstance(state, IntegrationResult) else np.asarray(state)
    return assembly.cmpt_signal(y)


def dump_magnetization(state, path) -> None:
    y = state.y if isinstance(state, IntegrationResult) else np.asarray(state)
    with open(path, "w") as fh:
        for i, v in enumerate(y):
            fh.write(f"{i} {v.real:.17g} {v.imag:.17g}\n")


@dataclass
class SignalResult:
    """Signals over the (experiment, b-value, direction) grid.

    ``MF_cmpts`` has shape ``(ncmpt, nexp, nb, ndir)``; ``MF_allcmpts`` is its
    sum over compartments. Failed grid cells hold NaN and are listed in
    ``failures`` as ``(iexp, ib, idir, message)``.
    """

    MF_cmpts: np.ndarray
    bvalues: np.ndarray
    gvalues: np.ndarray
    directions: np.ndarray
    sequences: list
    failures: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def MF_allcmpts(self) -> np.ndarray:
        return self.MF_cmpts.sum(axis=0)


def run_experiment_grid(assembly: AssemblySet, sequences, gvalues, directions,
                        tol: OdeTolerances = OdeTolerances(), threads: int = 1) -> SignalResult:
    """Solve every (experiment, amplitude, direction) cell independently.

    ``gvalues`` is a list (one entry per sequence) of amplitude arrays.
    """
    directions = np.atleast_2d(np.asarray(directions, float))
    nexp = len(sequences)
    nb = max(len(g) for g in gvalues)
    ncmpt = assembly.mesh.ncompartment
    out = np.full((ncmpt, nexp, nb, len(directions)), np.nan + 0j)
    bv = np.full((nexp, nb), np.nan)
    gv = np.full((nexp, nb), np.nan)
    cells = []
    for ie, (seq, gs) in enumerate(zip(sequences, gvalues)):
        for ib, g in enumerate(gs):
            bv[ie, ib] = bvalue(seq, g)
            gv[ie, ib] = g
            for idir, u in enumerate(directions):
                cells.append((ie, ib, idir, seq, float(g), u))

    def work(cell):
        ie, ib, idir, seq, g, u = cell
        try:
            res = solve_btpde(BtpdeProblem(assembly, seq, u, g), tol)
            return cell, integrate_signal(res, assembly), (res.nsteps, res.nreject), None
        except SolverError as exc:
            return cell, None, None, str(exc)

    failures = []
    steps = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]
    for (ie, ib, idir, *_), sig, st, msg in results:
        if msg is not None:
            log.warning("grid cell (%d, %d, %d) failed: %s", ie, ib, idir, msg)
            failures.append((ie, ib, idir, msg))
            continue
        out[:, ie, ib, idir] = sig
        steps.append(st)
    return SignalResult(MF_cmpts=out, bvalues=bv, gvalues=gv, directions=directions,
                        sequences=list(sequences), failures=failures,
                        stats={"steps": steps})
