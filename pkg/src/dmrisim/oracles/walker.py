"""Monte-Carlo random-walk signal on triangulated membranes.

Spins take Gaussian steps of standard deviation ``√(2σδt)`` per axis. A step
that meets a membrane triangle crosses it with probability
``P = (2/3)(κ/σ)√(6σδt)`` and is otherwise reflected specularly; the rest of
the step continues from the hit point. The accumulated phase is
``γ g Σ_k (F(t_{k+1}) - F(t_k)) u·(x_k + x_{k+1})/2`` and the signal is the
mean of ``exp(-i phase)``.

A compiled kernel is used when available; set ``DMRISIM_PURE_PYTHON=1`` to
force the NumPy kernel. Both consume identical random streams.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ..sequences import GAMMA, Sequence
from . import _walker_py

try:  # pragma: no cover - depends on the build
    if os.environ.get("DMRISIM_PURE_PYTHON") == "1":
        raise ImportError
    from . import _walker_ext
except ImportError:  # pragma: no cover
    _walker_ext = None

BACKEND = "compiled" if _walker_ext is not None else "numpy"


def transmission_probability(kappa, sigma, dt, dim: int = 3):
    """Membrane crossing probability per encounter, ``(2/3)(κ/σ)√(2·dim·σ·δt)``."""
    if dim != 3:
        raise ValueError("only dim = 3 is supported")
    return 2.0 / 3.0 * np.asarray(kappa) / sigma * math.sqrt(2.0 * dim * sigma * dt)


class Substrate:
    """Membrane triangles with a uniform grid of 2×2×2-cell candidate blocks.

    A segment of length at most ``cell/2`` starting at ``x`` stays inside the
    block whose lower cell index is ``floor((x - origin)/cell - 1/2)``;
    longer segments and points outside the grid are tested against every
    triangle.
    """

    def __init__(self, vertices, triangles, kappa, cell: float):
        v = np.asarray(vertices, float)
        t = np.asarray(triangles, np.int64)
        self.vertices, self.triangles = v, t
        self.kappa = np.broadcast_to(np.asarray(kappa, float), (len(t),)).copy()
        self.v0 = np.ascontiguousarray(v[t[:, 0]])
        self.e1 = np.ascontiguousarray(v[t[:, 1]] - v[t[:, 0]])
        self.e2 = np.ascontiguousarray(v[t[:, 2]] - v[t[:, 0]])
        n = np.cross(self.e1, self.e2)
        self.normal = np.ascontiguousarray(n / np.linalg.norm(n, axis=1, keepdims=True))
        self.pex = np.zeros(len(t))
        self.cell = float(cell)
        lo = v.min(axis=0) - cell
        hi = v.max(axis=0) + cell
        self.origin = lo
        self.dims = np.maximum(1, np.ceil((hi - lo) / cell).astype(np.int64))
        self._build_blocks()

    def _build_blocks(self):
        h, o, dims = self.cell, self.origin, self.dims
        p = self.vertices[self.triangles]
        cmin = np.floor((p.min(axis=1) - o) / h).astype(np.int64)
        cmax = np.floor((p.max(axis=1) - o) / h).astype(np.int64)
        bd = dims + 1  # block lower index ranges over -1..dims-1, stored shifted by one
        pairs = []
        for tri in range(len(p)):
            ii = np.arange(cmin[tri, 0] - 1, cmax[tri, 0] + 1) + 1
            jj = np.arange(cmin[tri, 1] - 1, cmax[tri, 1] + 1) + 1
            kk = np.arange(cmin[tri, 2] - 1, cmax[tri, 2] + 1) + 1
            I, J, K = np.meshgrid(ii, jj, kk, indexing="ij")
            b = (I.ravel() * bd[1] + J.ravel()) * bd[2] + K.ravel()
            pairs.append(np.column_stack([b, np.full(len(b), tri)]))
        pairs = np.unique(np.concatenate(pairs), axis=0)
        nblocks = int(np.prod(bd))
        counts = np.bincount(pairs[:, 0], minlength=nblocks)
        self.block_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.block_tris = np.ascontiguousarray(pairs[:, 1])
        width = max(1, int(counts.max()))
        pad = np.full((nblocks, width), -1, dtype=np.int64)
        col = np.arange(len(pairs)) - self.block_start[pairs[:, 0]]
        pad[pairs[:, 0], col] = pairs[:, 1]
        self.block_pad = pad
        self.block_count = counts
        self.block_dims = bd

    def set_step(self, sigma, dt):
        self.pex = np.clip(transmission_probability(self.kappa, sigma, dt), 0.0, 1.0)

    def block_index(self, x):
        i0 = np.floor((x - self.origin) / self.cell - 0.5).astype(np.int64) + 1
        inside = np.all((i0 >= 0) & (i0 < self.block_dims), axis=1)
        b = (i0[:, 0] * self.block_dims[1] + i0[:, 1]) * self.block_dims[2] + i0[:, 2]
        return np.where(inside, b, -1)

    def query(self, x, d, exclude):
        """First membrane hit of each segment ``x + t d``, ``t`` in (0, 1]."""
        n = len(x)
        t = np.full(n, np.inf)
        tri = np.full(n, -1, dtype=np.int64)
        b = self.block_index(x)
        short = (np.einsum("ij,ij->i", d, d) <= (0.5 * self.cell) ** 2) & (b >= 0)
        sel = np.flatnonzero(short & (self.block_count[np.maximum(b, 0)] > 0))
        if len(sel):
            w = int(self.block_count[b[sel]].max())
            cand = self.block_pad[b[sel], :w]
            t[sel], tri[sel] = _walker_py.first_hits(x[sel], d[sel], cand, self.v0,
                                                     self.e1, self.e2, exclude[sel])
        far = np.flatnonzero(~short)
        all_t = np.arange(len(self.triangles))
        for s in range(0, len(far), 64):
            f = far[s:s + 64]
            cand = np.broadcast_to(all_t, (len(f), len(all_t)))
            t[f], tri[f] = _walker_py.first_hits(x[f], d[f], cand, self.v0, self.e1,
                                                 self.e2, exclude[f])
        return t, tri


def points_inside(points, vertices, triangles, chunk: int = 256) -> np.ndarray:
    """Ray-parity inside test against a closed triangulated surface."""
    v = np.asarray(vertices, float)
    t = np.asarray(triangles, np.int64)
    v0, e1, e2 = v[t[:, 0]], v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]
    ray = np.array([1.0, 0.31415926535, 0.17320508075])
    ray /= np.linalg.norm(ray)
    ext = 4.0 * float(np.ptp(v, axis=0).max() + 1.0)
    d = ray * ext
    pts = np.asarray(points, float)
    out = np.zeros(len(pts), bool)
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-300
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    for s in range(0, len(pts), chunk):
        x = pts[s:s + chunk]
        sv = x[:, None, :] - v0[None]
        u = np.einsum("npk,pk->np", sv, p) * inv
        q = np.cross(sv, e1[None])
        w = np.einsum("k,npk->np", d, q) * inv
        tt = np.einsum("pk,npk->np", e2, q) * inv
        hit = ok & (u >= 0) & (w >= 0) & (u + w <= 1) & (tt > 0) & (tt <= 1)
        out[s:s + chunk] = hit.sum(axis=1) % 2 == 1
    return out


def initial_positions(n, state, vertices, triangles) -> np.ndarray:
    """Uniform positions inside a closed surface by per-spin rejection sampling."""
    v = np.asarray(vertices, float)
    lo, hi = v.min(axis=0), v.max(axis=0)
    pos = np.empty((n, 3))
    todo = np.arange(n)
    for _ in range(10_000):
        if len(todo) == 0:
            return pos
        u = np.column_stack([_walker_py.uniform(state, todo) for _ in range(3)])
        cand = lo + u * (hi - lo)
        ins = points_inside(cand, v, triangles)
        pos[todo[ins]] = cand[ins]
        todo = todo[~ins]
    raise RuntimeError("rejection sampling did not place every spin")


@dataclass
class WalkerOracle:
    """Random-walk setup.

    ``init_vertices``/``init_triangles`` bound the region where spins start
    (for example one compartment's outer surface).
    """

    substrate: Substrate
    init_vertices: np.ndarray
    init_triangles: np.ndarray
    sigma: float
    n_spins: int
    n_steps: int
    seed: int = 0

    def __post_init__(self):
        if self.n_spins < 1 or self.n_steps < 1:
            raise ValueError("need at least one spin and one step")


@dataclass
class WalkResult:
    phase: np.ndarray  # (n_spins, ndir) Σ dF·u·x̄
    positions: np.ndarray
    dt: float
    backend: str

    def signal(self, g, idir: int = 0) -> complex:
        return complex(np.mean(np.exp(-1j * GAMMA * g * self.phase[:, idir])))

    def signals(self, gvalues, idir: int = 0) -> np.ndarray:
        return np.array([self.signal(g, idir) for g in gvalues])

    def std_error(self, g, idir: int = 0) -> float:
        z = np.exp(-1j * GAMMA * g * self.phase[:, idir])
        return float(np.std(z.real) / math.sqrt(len(z)))


def make_substrate(vertices, triangles, kappa, sigma, dt, cell=None) -> Substrate:
    std = math.sqrt(2.0 * sigma * dt)
    if cell is None:
        extent = float(np.ptp(np.asarray(vertices), axis=0).max())
        cell = max(9.0 * std, extent / 100.0)
    sub = Substrate(vertices, triangles, kappa, cell)
    sub.set_step(sigma, dt)
    return sub


def run_walk(oracle: WalkerOracle, seq: Sequence, directions, backend: str | None = None,
             threads: int = 1) -> WalkResult:
    """Simulate trajectories once; signals for any amplitude follow from the phase."""
    dirs = np.atleast_2d(np.asarray(directions, float))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    T = oracle.n_steps
    dt = seq.TE / T
    tk = np.linspace(0.0, seq.TE, T + 1)
    dF = np.diff(seq.F(tk))
    sub = oracle.substrate
    sub.set_step(oracle.sigma, dt)
    std = math.sqrt(2.0 * oracle.sigma * dt)
    state = _walker_py.seed_states(oracle.seed, oracle.n_spins)
    pos0 = initial_positions(oracle.n_spins, state, oracle.init_vertices, oracle.init_triangles)
    use = backend or BACKEND
    if use == "compiled":
        if _walker_ext is None:
            raise RuntimeError("compiled walker kernel is not available")
        pos, phase = _walker_ext.walk(pos0, state, sub.v0, sub.e1, sub.e2, sub.normal,
                                      sub.pex, sub.origin, sub.cell, sub.block_dims,
                                      sub.block_start, sub.block_tris, T, std, dF, dirs,
                                      int(threads))
    else:
        pos, phase = _walker_py.walk(pos0, state, sub, T, std, dF, dirs)
    return WalkResult(phase=np.asarray(phase), positions=np.asarray(pos), dt=dt, backend=use)


def walker_signal(oracle: WalkerOracle, seq: Sequence, g, direction=(1.0, 0.0, 0.0),
                  backend: str | None = None) -> np.ndarray | complex:
    """Normalized walker signal for one amplitude or an array of amplitudes."""
    res = run_walk(oracle, seq, [direction], backend)
    if np.ndim(g) == 0:
        return res.signal(float(g))
    return res.signals(np.asarray(g, float))


def substrate_from_mesh(mesh, model, sigma, dt, cell=None):
    """Membranes of a FE mesh and the outer hull that bounds the spin region.

    Facet permeabilities come from ``model.kappa`` by boundary label; exterior
    facets are impermeable. Returns ``(substrate, hull_vertices, hull_triangles)``.
    """
    pts = mesh.points
    sides = mesh.facet_sides()
    tris = mesh.facets
    kappa = np.asarray(model.kappa, float)[mesh.facet_bdy].copy()
    ext = sides[:, 1] < 0
    kappa[ext] = 0.0
    sub = make_substrate(pts, tris, kappa, sigma, dt, cell)
    return sub, pts, tris[ext]


def substrate_from_ply(text, kappa, sigma, dt, cell=None):
    """Substrate from ASCII PLY; every triangle gets the same ``kappa``."""
    from ..mesh.io import read_ply

    v, t = read_ply(text)
    return make_substrate(v, t, kappa, sigma, dt, cell)
