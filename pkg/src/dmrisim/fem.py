"""P1 finite element assembly on tetrahedral meshes.

All local blocks are computed in closed form, batched over elements. Global
degrees of freedom are laid out compartment by compartment: block ``c`` holds
the nodes referenced by tets of compartment ``c`` in increasing node order.
Nodes shared by two compartments across an impermeable interface therefore
get one degree of freedom per compartment without explicit splitting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateTet, MissingPair
from .mesh.femesh import CompartmentModel, FeMesh, tet_signed_volumes, triangle_normals

_EYE4 = np.eye(4)
_EYE3 = np.eye(3)


@dataclass(frozen=True)
class DofMap:
    """Compartment-blocked numbering of mesh nodes."""

    nodes: tuple  # sorted global node ids per compartment
    offsets: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: FeMesh) -> "DofMap":
        nodes = tuple(mesh.cmpt_nodes(c) for c in range(mesh.ncompartment))
        offsets = np.concatenate([[0], np.cumsum([len(n) for n in nodes])])
        return cls(nodes=nodes, offsets=offsets)

    @property
    def ndof(self) -> int:
        return int(self.offsets[-1])

    def local(self, cmpt: int, node_ids) -> np.ndarray:
        nodes = self.nodes[cmpt]
        idx = np.searchsorted(nodes, node_ids)
        idx = np.clip(idx, 0, len(nodes) - 1)
        if not np.all(nodes[idx] == node_ids):
            raise KeyError(f"node not in compartment {cmpt}")
        return idx

    def global_(self, cmpt: int, node_ids) -> np.ndarray:
        return self.offsets[cmpt] + self.local(cmpt, node_ids)

    def block(self, cmpt: int) -> slice:
        return slice(int(self.offsets[cmpt]), int(self.offsets[cmpt + 1]))


def _coo_to_csr(rows, cols, vals, n, m=None):
    mat = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                        shape=(n, n if m is None else m)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _local_tets(mesh: FeMesh, cmpt: int):
    tets = mesh.cmpt_tets(cmpt)
    nodes = mesh.cmpt_nodes(cmpt)
    return tets, np.searchsorted(nodes, tets), len(nodes)


def _volumes_checked(mesh, tets):
    vol = tet_signed_volumes(mesh.points, tets)
    if len(vol):
        tiny = 1e-14 * np.ptp(mesh.points, axis=0).max() ** 3
        bad = int((vol <= tiny).sum())
        if bad:
            raise DegenerateTet(f"{bad} degenerate tets")
    return vol


def _pairs(loc):
    k = loc.shape[1]
    return np.repeat(loc, k, axis=1), np.tile(loc, (1, k))


def assemble_mass(mesh: FeMesh, cmpt: int) -> sp.csr_matrix:
    """Consistent mass matrix; local block V/20·(1 + δ_ij)."""
    tets, loc, n = _local_tets(mesh, cmpt)
    vol = _volumes_checked(mesh, tets)
    blk = vol[:, None, None] / 20.0 * (1.0 + _EYE4)[None]
    r, c = _pairs(loc)
    return _coo_to_csr(r, c, blk.reshape(len(tets), -1), n)


def _grads(mesh, tets):
    p = mesh.points[tets]
    D = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    Dinv = np.linalg.inv(D)
    g123 = np.transpose(Dinv, (0, 2, 1))  # row i = grad of barycentric i+1
    g0 = -g123.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g123], axis=1)


def assemble_stiffness(mesh: FeMesh, cmpt: int, sigma: float) -> sp.csr_matrix:
    """Stiffness matrix σ∫∇φ_i·∇φ_j."""
    tets, loc, n = _local_tets(mesh, cmpt)
    vol = _volumes_checked(mesh, tets)
    G = _grads(mesh, tets)
    blk = sigma * vol[:, None, None] * np.einsum("eik,ejk->eij", G, G)
    r, c = _pairs(loc)
    return _coo_to_csr(r, c, blk.reshape(len(tets), -1), n)


def assemble_scaled_mass(mesh: FeMesh, cmpt: int, g_vector) -> sp.csr_matrix:
    """∫(g·x)φ_iφ_j, exact: V/120·(1 + δ_ij)(w_i + w_j + Σw) with nodal w = g·x."""
    tets, loc, n = _local_tets(mesh, cmpt)
    vol = _volumes_checked(mesh, tets)
    w = mesh.points[tets] @ np.asarray(g_vector, float)
    s = w.sum(axis=1)
    blk = (vol / 120.0)[:, None, None] * (1.0 + _EYE4)[None] * (
        w[:, :, None] + w[:, None, :] + s[:, None, None])
    r, c = _pairs(loc)
    return _coo_to_csr(r, c, blk.reshape(len(tets), -1), n)


def _facet_mass_blocks(mesh, tris):
    area = 0.5 * np.linalg.norm(triangle_normals(mesh.points, tris), axis=1)
    return area[:, None, None] / 12.0 * (1.0 + _EYE3)[None], area


def assemble_flux(mesh: FeMesh, cmpt: int, boundary_weight) -> sp.csr_matrix:
    """∫_{∂Ω_c} w φ_iφ_j with ``w = boundary_weight[marker]`` per facet."""
    tris, mark = mesh.cmpt_facets(cmpt)
    nodes = mesh.cmpt_nodes(cmpt)
    w = np.asarray(boundary_weight, float)
    wf = np.where(mark >= 0, w[np.clip(mark, 0, None)], 0.0)
    blk, _ = _facet_mass_blocks(mesh, tris)
    loc = np.searchsorted(nodes, tris)
    r, c = _pairs(loc)
    return _coo_to_csr(r, c, (wf[:, None, None] * blk).reshape(len(tris), -1), len(nodes))


def assemble_boundary_source(mesh: FeMesh, cmpt: int, u_g, sigma: float = 1.0) -> np.ndarray:
    """v_i = σ∫_{∂Ω_c} φ_i (u·n) ds with facet-wise outward normals."""
    tris, _ = mesh.cmpt_facets(cmpt)
    nodes = mesh.cmpt_nodes(cmpt)
    nrm = triangle_normals(mesh.points, tris)  # |nrm| = 2·area
    un = nrm @ np.asarray(u_g, float)  # (u·n)·2A
    loc = np.searchsorted(nodes, tris)
    v = np.zeros(len(nodes))
    np.add.at(v, loc.ravel(), np.repeat(sigma * un / 6.0, 3))
    return v


def interface_facets(mesh: FeMesh, model: CompartmentModel):
    """Permeable interface facets as ``(tris_a, tris_b, ca, cb, kappa)`` per facet.

    ``tris_a`` holds node ids as seen from compartment ``ca`` and ``tris_b``
    the paired duplicates in ``cb``.
    """
    sides = mesh.facet_sides()
    kap = model.kappa[mesh.facet_bdy]
    sel = np.flatnonzero((sides[:, 1] >= 0) & (kap > 0))
    if len(sel) == 0:
        z = np.zeros((0, 3), np.int64)
        return z, z, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    dp = mesh.double_pairs
    pair = {}
    for a, b, bd in dp:
        pair[(int(a), int(bd))] = int(b)
    ta = mesh.facets[sel]
    tb = np.empty_like(ta)
    for row, k in enumerate(sel):
        bd = int(mesh.facet_bdy[k])
        for j in range(3):
            b = pair.get((int(ta[row, j]), bd))
            if b is None:
                raise MissingPair(f"interface facet {k} (boundary {bd}) lacks double nodes")
            tb[row, j] = b
    return ta, tb, sides[sel, 0], sides[sel, 1], kap[sel]


def couple_interfaces(mesh: FeMesh, model: CompartmentModel, dofmap: DofMap) -> sp.csr_matrix:
    """Global interface coupling Q̄ = Σ κ [F, -F; -F, F] over permeable facets."""
    n = dofmap.ndof
    ta, tb, ca, cb, kap = interface_facets(mesh, model)
    if len(ta) == 0:
        return sp.csr_matrix((n, n))
    blk, _ = _facet_mass_blocks(mesh, ta)
    blk = kap[:, None, None] * blk
    ga = np.empty_like(ta)
    gb = np.empty_like(tb)
    for c in np.unique(np.concatenate([ca, cb])):
        m = ca == c
        if m.any():
            ga[m] = dofmap.global_(int(c), ta[m].ravel()).reshape(-1, 3)
        m = cb == c
        if m.any():
            gb[m] = dofmap.global_(int(c), tb[m].ravel()).reshape(-1, 3)
    rows, cols, vals = [], [], []
    for x, y, sgn in ((ga, ga, 1.0), (gb, gb, 1.0), (ga, gb, -1.0), (gb, ga, -1.0)):
        rows.append(np.repeat(x, 3, axis=1))
        cols.append(np.tile(y, (1, 3)))
        vals.append(sgn * blk.reshape(len(ta), -1))
    return _coo_to_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n)


@dataclass
class AssemblySet:
    """Matrices for the coupled multi-compartment problem.

    Global matrices are block diagonal in compartments except ``Qbar``.
    ``J[k]`` is the scaled mass for the unit vector ``e_k``; ``J(u)`` follows
    by linearity. ``vsrc[c][k]`` is the boundary source of compartment ``c``
    for ``e_k`` with σ = 1.
    """

    mesh: FeMesh
    model: CompartmentModel
    dofmap: DofMap
    M_cmpts: list
    S_cmpts: list
    J_cmpts: list
    vsrc: list
    M: sp.csr_matrix
    S: sp.csr_matrix
    J_axes: list
    Qbar: sp.csr_matrix
    volumes: np.ndarray = field(default=None)

    def J(self, u) -> sp.csr_matrix:
        u = np.asarray(u, float)
        return (u[0] * self.J_axes[0] + u[1] * self.J_axes[1] + u[2] * self.J_axes[2]).tocsr()

    def J_cmpt(self, cmpt, u) -> sp.csr_matrix:
        u = np.asarray(u, float)
        J = self.J_cmpts[cmpt]
        return (u[0] * J[0] + u[1] * J[1] + u[2] * J[2]).tocsr()

    def source(self, cmpt, u) -> np.ndarray:
        """σ-weighted boundary source of compartment ``cmpt`` for direction ``u``."""
        u = np.asarray(u, float)
        v = self.vsrc[cmpt]
        return self.model.sigma[cmpt] * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2])

    def relaxation(self) -> sp.csr_matrix:
        """Block-diagonal Σ_c (1/T2_c) M_c."""
        rate = 1.0 / self.model.T2
        return sp.block_diag([r * M for r, M in zip(rate, self.M_cmpts)], format="csr")

    def initial_state(self) -> np.ndarray:
        return np.concatenate([np.full(len(n), self.model.rho[c], dtype=complex)
                               for c, n in enumerate(self.dofmap.nodes)])

    def cmpt_signal(self, xi) -> np.ndarray:
        """Per-compartment integrals 1ᵀM_c ξ_c."""
        return np.array([np.asarray(M.sum(axis=0)).ravel() @ xi[self.dofmap.block(c)]
                         for c, M in enumerate(self.M_cmpts)])


def assemble(mesh: FeMesh, model: CompartmentModel) -> AssemblySet:
    """Assemble every operator needed by the BTPDE and HADC solvers."""
    dm = DofMap.from_mesh(mesh)
    Ms, Ss, Js, vs = [], [], [], []
    axes = np.eye(3)
    for c in range(mesh.ncompartment):
        Ms.append(assemble_mass(mesh, c))
        Ss.append(assemble_stiffness(mesh, c, float(model.sigma[c])))
        Js.append([assemble_scaled_mass(mesh, c, e) for e in axes])
        vs.append([assemble_boundary_source(mesh, c, e, 1.0) for e in axes])
    M = sp.block_diag(Ms, format="csr")
    S = sp.block_diag(Ss, format="csr")
    J_axes = [sp.block_diag([J[k] for J in Js], format="csr") for k in range(3)]
    Q = couple_interfaces(mesh, model, dm)
    vol = np.bincount(mesh.tet_cmpt, weights=mesh.volumes(), minlength=mesh.ncompartment)
    return AssemblySet(mesh=mesh, model=model, dofmap=dm, M_cmpts=Ms, S_cmpts=Ss, J_cmpts=Js,
                       vsrc=vs, M=M, S=S, J_axes=J_axes, Qbar=Q, volumes=vol)


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` lines (0-based); complex values as ``re im``."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            if np.iscomplexobj(coo.data):
                fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
            else:
                fh.write(f"{r} {c} {v:.17g}\n")
