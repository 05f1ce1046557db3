"""Tetrahedral mesh container, compartment model and mesh-level operations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import TopologyError, ValidationError

CMPT_LABELS = ("IN", "OUT", "ECS")
BDY_LABELS = ("IN_OUT", "OUT_ECS", "rigid")

# outward faces of a positively oriented tet (a, b, c, d)
TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


def tet_signed_volumes(points, tets) -> np.ndarray:
    p = points[tets]
    d1, d2, d3 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", d1, np.cross(d2, d3)) / 6.0


def triangle_normals(points, tris):
    """Unnormalized normals whose length is twice the triangle area."""
    p = points[tris]
    return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def _row_keys(tri) -> np.ndarray:
    """Structured view of sorted index triples, usable with np.unique/searchsorted."""
    s = np.ascontiguousarray(np.sort(tri, axis=1).astype(np.int64))
    return s.view([("a", np.int64), ("b", np.int64), ("c", np.int64)]).ravel()


@dataclass(frozen=True)
class FeMesh:
    """P1 tetrahedral mesh with compartment and boundary labels.

    Attributes
    ----------
    points : (N, 3) float array
    tets : (M, 4) int array, positively oriented
    tet_cmpt : (M,) compartment index per tet
    facets : (K, 3) int array of labelled boundary and interface triangles
    facet_bdy : (K,) boundary index per facet
    double_pairs : (P, 3) int array of ``(node_a, node_b, boundary)``
    origin : (N,) index of the node each point was copied from
    """

    points: np.ndarray
    tets: np.ndarray
    tet_cmpt: np.ndarray
    facets: np.ndarray
    facet_bdy: np.ndarray
    double_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    origin: np.ndarray | None = None

    def __post_init__(self):
        if self.origin is None:
            object.__setattr__(self, "origin", np.arange(len(self.points)))

    @property
    def nnode(self) -> int:
        return len(self.points)

    @property
    def ntet(self) -> int:
        return len(self.tets)

    @property
    def ncompartment(self) -> int:
        return int(self.tet_cmpt.max()) + 1 if len(self.tet_cmpt) else 0

    @property
    def nboundary(self) -> int:
        return int(self.facet_bdy.max()) + 1 if len(self.facet_bdy) else 0

    def volumes(self) -> np.ndarray:
        return tet_signed_volumes(self.points, self.tets)

    def cmpt_tets(self, cmpt: int) -> np.ndarray:
        return self.tets[self.tet_cmpt == cmpt]

    def cmpt_nodes(self, cmpt: int) -> np.ndarray:
        return np.unique(self.cmpt_tets(cmpt))

    def cmpt_facets(self, cmpt: int):
        """Outward-oriented boundary triangles of one compartment and their markers.

        Faces used by exactly one tet of the compartment form its boundary;
        markers are matched against the labelled facets through ``origin``.
        Unlabelled faces get marker ``-1``.
        """
        tets = self.cmpt_tets(cmpt)
        faces = tets[:, TET_FACES].reshape(-1, 3)
        keys = _row_keys(faces)
        _, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        bnd = faces[counts[inv] == 1]
        return bnd, self._lookup_markers(bnd)

    def _lookup_markers(self, tris) -> np.ndarray:
        if len(self.facets) == 0:
            return np.full(len(tris), -1, dtype=np.int64)
        ref = _row_keys(self.origin[self.facets])
        order = np.argsort(ref)
        ref_sorted = ref[order]
        q = _row_keys(self.origin[tris])
        pos = np.clip(np.searchsorted(ref_sorted, q), 0, len(ref_sorted) - 1)
        hit = ref_sorted[pos] == q
        out = np.full(len(tris), -1, dtype=np.int64)
        out[hit] = self.facet_bdy[order[pos[hit]]]
        return out

    def facet_sides(self) -> np.ndarray:
        """(K, 2) compartments on both sides of each labelled facet, ``-1`` outside."""
        faces = self.origin[self.tets[:, TET_FACES].reshape(-1, 3)]
        owner = np.repeat(self.tet_cmpt, 4)
        keys = _row_keys(faces)
        order = np.argsort(keys, kind="stable")
        ks = keys[order]
        q = _row_keys(self.origin[self.facets])
        lo = np.searchsorted(ks, q, side="left")
        hi = np.searchsorted(ks, q, side="right")
        n = hi - lo
        if np.any(n > 2):
            raise TopologyError("a facet is shared by more than two tetrahedra")
        sides = np.full((len(q), 2), -1, dtype=np.int64)
        sides[n >= 1, 0] = owner[order[lo[n >= 1]]]
        two = n == 2
        sides[two, 1] = owner[order[lo[two] + 1]]
        sides.sort(axis=1)
        # exterior facets: (-1, c) -> (c, -1)
        ext = sides[:, 0] == -1
        sides[ext] = sides[ext][:, ::-1]
        return sides

    def with_points(self, points) -> "FeMesh":
        return replace(self, points=np.asarray(points, float))


@dataclass(frozen=True)
class CompartmentModel:
    """Physical parameters per compartment and per boundary.

    Units: σ in µm²/µs, κ in µm/µs, T2 in µs (``inf`` disables relaxation).
    """

    cmpt_labels: tuple
    sigma: np.ndarray
    rho: np.ndarray
    T2: np.ndarray
    bdy_labels: tuple
    kappa: np.ndarray

    def __post_init__(self):
        for name in ("sigma", "rho", "T2", "kappa"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        nc, nb = len(self.cmpt_labels), len(self.bdy_labels)
        if not (len(self.sigma) == len(self.rho) == len(self.T2) == nc):
            raise ValidationError("compartment parameter lengths differ")
        if len(self.kappa) != nb:
            raise ValidationError("boundary parameter lengths differ")
        if np.any(self.sigma <= 0):
            raise ValidationError("diffusivity must be positive")
        if np.any(self.rho < 0) or np.any(self.kappa < 0):
            raise ValidationError("rho and kappa must be non-negative")
        if np.any(self.T2 <= 0):
            raise ValidationError("T2 must be positive or inf")
        for lab in self.cmpt_labels:
            if lab not in CMPT_LABELS:
                raise ValidationError(f"unknown compartment label {lab!r}")
        for lab, k in zip(self.bdy_labels, self.kappa):
            if lab not in BDY_LABELS:
                raise ValidationError(f"unknown boundary label {lab!r}")
            if lab == "rigid" and k != 0:
                raise ValidationError("rigid boundaries must have kappa = 0")

    @property
    def ncompartment(self) -> int:
        return len(self.cmpt_labels)

    @property
    def nboundary(self) -> int:
        return len(self.bdy_labels)

    @classmethod
    def uniform(cls, ncmpt, nbdy, sigma, rho=1.0, kappa=0.0, T2=math.inf,
                outer=None) -> "CompartmentModel":
        """All compartments alike; boundary ``outer`` (default last) is rigid."""
        outer = nbdy - 1 if outer is None else outer
        kap = np.broadcast_to(np.asarray(kappa, float), (nbdy,)).copy()
        kap[outer] = 0.0
        labels = tuple("rigid" if i == outer else "IN_OUT" for i in range(nbdy))
        return cls(cmpt_labels=("OUT",) * ncmpt,
                   sigma=np.broadcast_to(np.asarray(sigma, float), (ncmpt,)).copy(),
                   rho=np.broadcast_to(np.asarray(rho, float), (ncmpt,)).copy(),
                   T2=np.broadcast_to(np.asarray(T2, float), (ncmpt,)).copy(),
                   bdy_labels=labels, kappa=kap)

    def with_kappa(self, kappa) -> "CompartmentModel":
        kap = np.where(np.array(self.bdy_labels) == "rigid", 0.0,
                       np.broadcast_to(np.asarray(kappa, float), (self.nboundary,)))
        return replace(self, kappa=kap)

    def with_T2(self, T2) -> "CompartmentModel":
        return replace(self, T2=np.broadcast_to(np.asarray(T2, float),
                                                (self.ncompartment,)).copy())

    def with_rho(self, rho) -> "CompartmentModel":
        return replace(self, rho=np.broadcast_to(np.asarray(rho, float),
                                                 (self.ncompartment,)).copy())


def canonical_model(shape, ncell, inner, ecs, sigma, rho, kappa_in_out, kappa_out_ecs,
                    T2=None) -> CompartmentModel:
    """Labels and parameters for built-in cell geometries.

    ``sigma``, ``rho`` and ``T2`` are dicts keyed by ``IN``, ``OUT``, ``ECS``.
    """
    T2 = T2 or {}
    n = ncell
    if shape == "sphere":
        cl = ["OUT"] * n + (["IN"] * n if inner else [])
        bl = (["OUT_ECS" if ecs else "rigid"] * n) + (["IN_OUT"] * n if inner else [])
    else:
        if inner:
            cl = ["IN"] * n + ["OUT"] * n
            bl = []
            for _ in range(n):
                bl += ["IN_OUT", "rigid", "OUT_ECS" if ecs else "rigid", "rigid"]
        else:
            cl = ["OUT"] * n
            bl = []
            for _ in range(n):
                bl += ["OUT_ECS" if ecs else "rigid", "rigid"]
    if ecs:
        cl.append("ECS")
        bl.append("rigid")
    kap = {"IN_OUT": kappa_in_out, "OUT_ECS": kappa_out_ecs, "rigid": 0.0}
    return CompartmentModel(
        cmpt_labels=tuple(cl),
        sigma=[sigma[c] for c in cl], rho=[rho[c] for c in cl],
        T2=[T2.get(c, math.inf) for c in cl],
        bdy_labels=tuple(bl), kappa=[kap[b] for b in bl])


# ---------------------------------------------------------------------------
# operations


def measure(mesh: FeMesh, direction=(1.0, 0.0, 0.0)) -> dict:
    """Compartment volumes, boundary areas and direction-weighted areas.

    Returns a dict with ``V`` (per compartment), ``A`` (per boundary),
    ``A_ug`` (per boundary) and ``A_ug_cmpt`` / ``A_cmpt`` (per compartment,
    summed over that compartment's whole boundary).
    """
    u = np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    vol = mesh.volumes()
    V = np.bincount(mesh.tet_cmpt, weights=vol, minlength=mesh.ncompartment)
    nrm = triangle_normals(mesh.points, mesh.facets)
    area = 0.5 * np.linalg.norm(nrm, axis=1)
    cos2 = (nrm @ u) ** 2 / np.maximum(np.einsum("ij,ij->i", nrm, nrm), 1e-300)
    nb = mesh.nboundary
    A = np.bincount(mesh.facet_bdy, weights=area, minlength=nb)
    Aug = np.bincount(mesh.facet_bdy, weights=cos2 * area, minlength=nb)
    A_c = np.zeros(mesh.ncompartment)
    Aug_c = np.zeros(mesh.ncompartment)
    for c in range(mesh.ncompartment):
        tris, _ = mesh.cmpt_facets(c)
        n = triangle_normals(mesh.points, tris)
        a = 0.5 * np.linalg.norm(n, axis=1)
        A_c[c] = a.sum()
        Aug_c[c] = float(((n @ u) ** 2 / np.maximum(4 * a * a, 1e-300) * a).sum())
    return {"V": V, "A": A, "A_ug": Aug, "A_cmpt": A_c, "A_ug_cmpt": Aug_c}


@dataclass(frozen=True)
class MeshQuality:
    nnode: int
    ntet: int
    nfacet: int
    min_dihedral: float
    max_dihedral: float
    radius_edge_max: float
    radius_edge_hist: np.ndarray
    radius_edge_bins: np.ndarray
    max_edge: float


def mesh_quality(mesh: FeMesh, bins=(0.6, 1.0, 1.5, 2.0, 3.0, 5.0, np.inf)) -> MeshQuality:
    p = mesh.points[mesh.tets]
    edges_idx = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    elen = np.stack([np.linalg.norm(p[:, j] - p[:, i], axis=1) for i, j in edges_idx], 1)
    # circumradius
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    num = (np.einsum("ij,ij->i", a, a)[:, None] * np.cross(b, c)
           + np.einsum("ij,ij->i", b, b)[:, None] * np.cross(c, a)
           + np.einsum("ij,ij->i", c, c)[:, None] * np.cross(a, b))
    det = 2.0 * np.einsum("ij,ij->i", a, np.cross(b, c))
    R = np.linalg.norm(num, axis=1) / np.abs(det)
    ratio = R / elen.min(axis=1)
    # dihedral angles from face normals
    fn = np.stack([np.cross(p[:, f[1]] - p[:, f[0]], p[:, f[2]] - p[:, f[0]])
                   for f in TET_FACES], 1)
    fn /= np.linalg.norm(fn, axis=2, keepdims=True)
    ang = []
    for i in range(4):
        for j in range(i + 1, 4):
            cosv = np.clip(-np.einsum("ij,ij->i", fn[:, i], fn[:, j]), -1, 1)
            ang.append(np.degrees(np.arccos(cosv)))
    ang = np.stack(ang, 1)
    edges = [0.0, *bins]
    hist, _ = np.histogram(ratio, bins=edges)
    return MeshQuality(nnode=mesh.nnode, ntet=mesh.ntet, nfacet=len(mesh.facets),
                       min_dihedral=float(ang.min()), max_dihedral=float(ang.max()),
                       radius_edge_max=float(ratio.max()), radius_edge_hist=hist,
                       radius_edge_bins=np.asarray(edges), max_edge=float(elen.max()))


def split_double_nodes(mesh: FeMesh, model: CompartmentModel) -> FeMesh:
    """Duplicate nodes on permeable interfaces, one copy per adjacent compartment.

    The lowest-numbered compartment keeps the original node; each other
    compartment touching the node gets a fresh copy and its tets are
    re-pointed. Facets keep the node ids of their first side.
    """
    sides = mesh.facet_sides()
    kappa = model.kappa
    if len(kappa) < mesh.nboundary:
        raise ValidationError("model has fewer boundaries than the mesh")
    perm = (sides[:, 1] >= 0) & (kappa[mesh.facet_bdy] > 0)
    if not np.any(perm):
        return mesh
    iface_nodes = np.unique(mesh.facets[perm])
    # compartments adjacent to each interface node
    tn = mesh.tets.ravel()
    tc = np.repeat(mesh.tet_cmpt, 4)
    on_iface = np.isin(tn, iface_nodes)
    pairs = np.unique(np.column_stack([tn[on_iface], tc[on_iface]]), axis=0)
    first = np.ones(len(pairs), bool)
    first[1:] = pairs[1:, 0] != pairs[:-1, 0]
    extra = pairs[~first]
    nnew = len(extra)
    new_ids = mesh.nnode + np.arange(nnew)
    points = np.vstack([mesh.points, mesh.points[extra[:, 0]]])
    origin = np.concatenate([mesh.origin, mesh.origin[extra[:, 0]]])

    # remap tets: lookup (node, cmpt) -> new id
    key_extra = extra[:, 0] * (mesh.ncompartment + 1) + extra[:, 1]
    order = np.argsort(key_extra)
    key_sorted = key_extra[order]
    tets = mesh.tets.copy()
    flat_key = tn * (mesh.ncompartment + 1) + tc
    pos = np.clip(np.searchsorted(key_sorted, flat_key), 0, max(nnew - 1, 0))
    hit = key_sorted[pos] == flat_key if nnew else np.zeros(len(flat_key), bool)
    flat = tets.ravel()
    flat[hit] = new_ids[order[pos[hit]]]
    tets = flat.reshape(-1, 4)

    def copy_in(nodes, cmpt):
        k = nodes * (mesh.ncompartment + 1) + cmpt
        p = np.clip(np.searchsorted(key_sorted, k), 0, nnew - 1)
        h = key_sorted[p] == k
        out = nodes.copy()
        out[h] = new_ids[order[p[h]]]
        return out

    dp = []
    facets = mesh.facets.copy()
    for k in np.flatnonzero((sides[:, 1] >= 0) | (sides[:, 0] >= 0)):
        ca, cb = sides[k]
        facets[k] = copy_in(mesh.facets[k], ca)
        if perm[k]:
            a = facets[k]
            b = copy_in(mesh.facets[k], cb)
            dp.append(np.column_stack([a, b, np.full(3, mesh.facet_bdy[k])]))
    dp = np.unique(np.concatenate(dp), axis=0) if dp else np.zeros((0, 3), np.int64)
    if np.any(dp[:, 0] == dp[:, 1]):
        raise TopologyError("interface node could not be separated")
    return FeMesh(points=points, tets=tets, tet_cmpt=mesh.tet_cmpt.copy(), facets=facets,
                  facet_bdy=mesh.facet_bdy.copy(), double_pairs=dp.astype(np.int64),
                  origin=origin)


def deform_bend_twist(mesh: FeMesh, alpha_bend: float, alpha_twist: float) -> FeMesh:
    """Twist by ``alpha_twist·z`` about the z-axis, then bend ``x += alpha_bend·z²``."""
    x, y, z = mesh.points.T
    th = alpha_twist * z
    c, s = np.cos(th), np.sin(th)
    xt = c * x - s * y
    yt = s * x + c * y
    xb = xt + alpha_bend * z * z
    return mesh.with_points(np.column_stack([xb, yt, z]))
