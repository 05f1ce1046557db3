"""Cell placement and watertight surface triangulation of canonical geometries.

Cells are spheres or z-aligned cylinders. Compartment and boundary numbers
follow the standard scheme (0-based here):

spheres, no nucleus     compartments: OUT 0..n-1, ECS n
                        boundaries:   sphere i -> i, outer ECS -> n
spheres, nucleus        compartments: OUT 0..n-1, IN n..2n-1, ECS 2n
                        boundaries:   outer sphere i -> i, inner sphere i -> n+i, ECS -> 2n
cylinders, no myelin    compartments: OUT (axon) 0..n-1, ECS n
                        boundaries:   side i -> 2i, caps i -> 2i+1, ECS -> 2n
cylinders, myelin       compartments: IN (axon) 0..n-1, OUT (myelin) n..2n-1, ECS 2n
                        boundaries:   inner side 4i, inner caps 4i+1,
                                      outer side 4i+2, myelin caps 4i+3, ECS -> 4n
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
import triangle
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .errors import GeometryFailure, PlacementExhausted, UnsupportedEcs, ValidationError

ECS_MODES = ("none", "box", "tight_wrap")


@dataclass(frozen=True)
class CellConfig:
    cell_shape: str = "sphere"
    ncell: int = 1
    Rmin: float = 2.5
    Rmax: float = 2.5
    dmin: float = 1.5
    dmax: float = 2.5
    Hcyl: float = 20.0
    Rratio: float = 0.0
    ecs_mode: str = "none"
    ecs_gap: float = 0.3
    alpha_bend: float = 0.0
    alpha_twist: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.cell_shape not in ("sphere", "cylinder"):
            raise ValidationError(f"unknown cell shape {self.cell_shape!r}")
        if self.ncell < 1:
            raise ValidationError("ncell must be >= 1")
        if not 0 < self.Rmin <= self.Rmax:
            raise ValidationError("require 0 < Rmin <= Rmax")
        if self.dmin > self.dmax:
            raise ValidationError("require dmin <= dmax")
        if self.ecs_mode not in ECS_MODES:
            raise ValidationError(f"unknown ECS mode {self.ecs_mode!r}")
        if not 0.0 <= self.Rratio < 1.0:
            object.__setattr__(self, "Rratio", 0.0)

    @property
    def R_mean(self) -> float:
        return 0.5 * (self.Rmin + self.Rmax)

    @property
    def has_inner(self) -> bool:
        return self.Rratio > 0.0


@dataclass
class CellSet:
    centers: np.ndarray
    outer_radii: np.ndarray
    inner_radii: np.ndarray
    shape: str

    @property
    def ncell(self) -> int:
        return len(self.outer_radii)


@dataclass
class SurfaceMesh:
    """Triangulated interfaces with one boundary marker per triangle.

    ``facet_sides[k]`` holds the two compartments separated by triangle ``k``
    (``-1`` for the exterior); the triangle normal points towards the second.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    facet_markers: np.ndarray
    facet_sides: np.ndarray
    region_points: np.ndarray
    region_ids: np.ndarray
    ncompartment: int = 0
    meta: dict = field(default_factory=dict)

    def edge_use_counts(self, mask=None) -> dict:
        tris = self.triangles if mask is None else self.triangles[mask]
        edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return {tuple(e): int(c) for e, c in zip(uniq, counts)}

    def compartment_surface(self, cmpt: int):
        """Triangles bounding ``cmpt``, oriented with outward normals."""
        sides = self.facet_sides
        outward = sides[:, 0] == cmpt
        inward = sides[:, 1] == cmpt
        tris = np.concatenate([self.triangles[outward], self.triangles[inward][:, ::-1]])
        return tris

    def is_watertight(self, cmpt: int) -> bool:
        tris = self.compartment_surface(cmpt)
        if len(tris) == 0:
            return False
        edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def enclosed_volume(self, cmpt: int) -> float:
        tris = self.compartment_surface(cmpt)
        return signed_volume(self.vertices, tris)


def signed_volume(vertices, triangles) -> float:
    p = vertices[triangles]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)


def euler_characteristic(triangles) -> int:
    tris = np.asarray(triangles)
    nv = len(np.unique(tris))
    edges = np.unique(np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1), axis=0)
    return nv - len(edges) + len(tris)


# ---------------------------------------------------------------------------
# cell placement


def place_cells(config: CellConfig, max_candidates_per_cell: int = 10_000) -> CellSet:
    """Place ``ncell`` non-overlapping cells by sequential candidate acceptance.

    For each candidate centre, ``dist`` is the smallest gap to the surfaces of
    already accepted cells; the radius is the midpoint of
    ``[dist - dmax*R_mean, dist - dmin*R_mean] ∩ [Rmin, Rmax]``.
    """
    n = config.ncell
    dim = 3 if config.cell_shape == "sphere" else 2
    rmean = config.R_mean
    rng = np.random.default_rng(config.rng_seed)
    budget = max_candidates_per_cell * n
    # box with room for n cells of mean radius at mean spacing
    pitch = 2.0 * rmean + 0.5 * (config.dmin + config.dmax) * rmean
    side = 1.5 * pitch * n ** (1.0 / dim)
    lo_r, hi_r = config.Rmin, config.Rmax

    centers = np.zeros((n, dim))
    radii = np.zeros(n)
    centers[0] = 0.0
    radii[0] = 0.5 * (lo_r + hi_r)
    count = 1
    used = 0
    batch = 4096
    while count < n:
        if used >= budget:
            raise PlacementExhausted(
                f"accepted {count} of {n} cells after {budget} candidates")
        m = min(batch, budget - used)
        cand = rng.uniform(-0.5 * side, 0.5 * side, size=(m, dim))
        used += m
        gaps = np.linalg.norm(cand[:, None, :] - centers[None, :count, :], axis=2) - radii[:count]
        dist = gaps.min(axis=1)
        start = 0
        while start < m and count < n:
            lo = np.maximum(dist[start:] - config.dmax * rmean, lo_r)
            hi = np.minimum(dist[start:] - config.dmin * rmean, hi_r)
            ok = np.flatnonzero(lo <= hi)
            if ok.size == 0:
                break
            k = start + ok[0]
            centers[count] = cand[k]
            radii[count] = 0.5 * (lo[ok[0]] + hi[ok[0]])
            # later candidates see the newly accepted cell
            dist = np.minimum(dist, np.linalg.norm(cand - cand[k], axis=1) - radii[count])
            count += 1
            start = k + 1

    if dim == 2:
        centers = np.column_stack([centers, np.zeros(n)])
    return CellSet(centers=centers, outer_radii=radii, inner_radii=config.Rratio * radii,
                   shape=config.cell_shape)


def check_non_overlap(cells: CellSet, tol: float = 1e-12) -> bool:
    c = cells.centers if cells.shape == "sphere" else cells.centers[:, :2]
    r = cells.outer_radii
    d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    need = r[:, None] + r[None, :]
    np.fill_diagonal(d, np.inf)
    return bool(np.all(d >= need - tol))


# ---------------------------------------------------------------------------
# spheres


def icosphere(level: int = 3):
    """Unit sphere from a recursively subdivided icosahedron, outward oriented."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = [np.asarray(p, float) / np.linalg.norm(p) for p in verts]
    f = list(faces)
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return np.array(v), np.array(f, dtype=np.int64)


def _box_surface(lo, hi):
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    verts = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                      [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]])
    tris = np.array([[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
                     [0, 1, 5], [0, 5, 4], [2, 3, 7], [2, 7, 6],
                     [1, 2, 6], [1, 6, 5], [3, 0, 4], [3, 4, 7]], dtype=np.int64)
    return verts, tris


def _sphere_labels(n, inner):
    """Compartment ids (out, in, ecs) and boundary ids (outer, inner, ecs) per cell."""
    if inner:
        return (list(range(n)), list(range(n, 2 * n)), 2 * n,
                list(range(n)), list(range(n, 2 * n)), 2 * n)
    return list(range(n)), None, n, list(range(n)), None, n


def triangulate_spheres(cells: CellSet, cfg: CellConfig, level: int = 3) -> SurfaceMesh:
    if cells.shape != "sphere":
        raise ValidationError("triangulate_spheres needs spherical cells")
    if cfg.ecs_mode == "tight_wrap":
        raise UnsupportedEcs("tight-wrap ECS is not available for spheres")
    n = cells.ncell
    inner = cfg.has_inner
    c_out, c_in, c_ecs, b_out, b_in, b_ecs = _sphere_labels(n, inner)
    has_ecs = cfg.ecs_mode == "box"
    unit_v, unit_f = icosphere(level)
    verts, tris, markers, sides = [], [], [], []
    offset = 0

    def add(v, f, marker, side):
        nonlocal offset
        verts.append(v)
        tris.append(f + offset)
        markers.append(np.full(len(f), marker))
        sides.append(np.tile(side, (len(f), 1)))
        offset += len(v)

    seeds, seed_ids = [], []
    for i in range(n):
        c, R = cells.centers[i], cells.outer_radii[i]
        add(c + R * unit_v, unit_f, b_out[i], (c_out[i], c_ecs if has_ecs else -1))
        if inner:
            r = cells.inner_radii[i]
            add(c + r * unit_v, unit_f, b_in[i], (c_in[i], c_out[i]))
            seeds.append(c + np.array([0.5 * (r + R), 0.0, 0.0]))
            seed_ids.append(c_out[i])
            seeds.append(c.copy())
            seed_ids.append(c_in[i])
        else:
            seeds.append(c.copy())
            seed_ids.append(c_out[i])
    if has_ecs:
        lo = (cells.centers - cells.outer_radii[:, None]).min(axis=0)
        hi = (cells.centers + cells.outer_radii[:, None]).max(axis=0)
        k = cfg.ecs_gap * float((hi - lo).max())
        bv, bf = _box_surface(lo - k, hi + k)
        add(bv, bf, b_ecs, (c_ecs, -1))
        # corner of the gap layer lies outside every sphere
        seeds.append(lo - 0.5 * k)
        seed_ids.append(c_ecs)
    ncmpt = (2 * n if inner else n) + (1 if has_ecs else 0)
    return SurfaceMesh(vertices=np.concatenate(verts), triangles=np.concatenate(tris),
                       facet_markers=np.concatenate(markers),
                       facet_sides=np.concatenate(sides).astype(np.int64),
                       region_points=np.array(seeds), region_ids=np.array(seed_ids),
                       ncompartment=ncmpt, meta={"shape": "sphere", "level": level})


# ---------------------------------------------------------------------------
# cylinders


def circle_resolution(R: float, h_target: float) -> int:
    return max(16, int(math.ceil(2.0 * math.pi * R / h_target)))


def _circle(center, R, n):
    a = 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([center[0] + R * np.cos(a), center[1] + R * np.sin(a)])


def _wrap_polygon(cells: CellSet, cfg: CellConfig, h_target: float, refine: int = 1):
    k = cfg.ecs_gap * cfg.R_mean
    disks = []
    for c, R in zip(cells.centers, cells.outer_radii):
        n = refine * circle_resolution(R + k, h_target)
        disks.append(Polygon(_circle(c, R + k, n)))
    union = unary_union(disks)
    return union


def _box_polygon(cells: CellSet, cfg: CellConfig):
    lo = (cells.centers[:, :2] - cells.outer_radii[:, None]).min(axis=0)
    hi = (cells.centers[:, :2] + cells.outer_radii[:, None]).max(axis=0)
    k = cfg.ecs_gap * float((hi - lo).max())
    return Polygon([(lo[0] - k, lo[1] - k), (hi[0] + k, lo[1] - k),
                    (hi[0] + k, hi[1] + k), (lo[0] - k, hi[1] + k)])


@dataclass
class CrossSection:
    """Planar straight-line graph of a cylinder configuration's cross-section.

    ``side_markers[j]`` is the boundary id of the vertical wall swept by
    segment ``j``; ``region_*`` give a seed point and compartment per region;
    ``cap_markers[c]`` is the boundary id of compartment ``c``'s caps;
    ``wall_sides[j]`` lists (inside, outside) compartments of segment ``j``.
    """

    vertices: np.ndarray
    segments: np.ndarray
    side_markers: np.ndarray
    wall_sides: np.ndarray
    region_points: np.ndarray
    region_ids: np.ndarray
    holes: np.ndarray
    cap_markers: np.ndarray
    ncompartment: int


def _cylinder_labels(n, inner):
    if inner:
        cmpt = {"in": list(range(n)), "out": list(range(n, 2 * n)), "ecs": 2 * n}
        bdy = {"in_side": [4 * i for i in range(n)], "in_caps": [4 * i + 1 for i in range(n)],
               "out_side": [4 * i + 2 for i in range(n)],
               "out_caps": [4 * i + 3 for i in range(n)], "ecs": 4 * n}
    else:
        cmpt = {"in": None, "out": list(range(n)), "ecs": n}
        bdy = {"in_side": None, "in_caps": None, "out_side": [2 * i for i in range(n)],
               "out_caps": [2 * i + 1 for i in range(n)], "ecs": 2 * n}
    return cmpt, bdy


def cross_section(cells: CellSet, cfg: CellConfig, h_target: float) -> CrossSection:
    """Build the 2-D PSLG (circles, optional myelin circles, ECS outline)."""
    if cells.shape != "cylinder":
        raise ValidationError("cross_section needs cylindrical cells")
    n = cells.ncell
    inner = cfg.has_inner
    cmpt, bdy = _cylinder_labels(n, inner)
    has_ecs = cfg.ecs_mode != "none"
    ecs = cmpt["ecs"] if has_ecs else -1
    verts, segs, markers, wsides = [], [], [], []
    seeds, seed_ids = [], []

    def add_loop(pts, marker, side):
        base = sum(len(v) for v in verts)
        m = len(pts)
        verts.append(np.asarray(pts, float))
        idx = base + np.arange(m)
        segs.append(np.column_stack([idx, np.roll(idx, -1)]))
        markers.append(np.full(m, marker))
        wsides.append(np.tile(side, (m, 1)))

    for i in range(n):
        c, R = cells.centers[i, :2], cells.outer_radii[i]
        nR = circle_resolution(R, h_target)
        add_loop(_circle(c, R, nR), bdy["out_side"][i], (cmpt["out"][i], ecs))
        if inner:
            r = cells.inner_radii[i]
            add_loop(_circle(c, r, circle_resolution(r, h_target)), bdy["in_side"][i],
                     (cmpt["in"][i], cmpt["out"][i]))
            seeds.append(c + np.array([0.5 * (r + R), 0.0]))
            seed_ids.append(cmpt["out"][i])
            seeds.append(c.copy())
            seed_ids.append(cmpt["in"][i])
        else:
            seeds.append(c.copy())
            seed_ids.append(cmpt["out"][i])

    holes = []
    if has_ecs:
        if cfg.ecs_mode == "box":
            outline = _box_polygon(cells, cfg)
        else:
            outline = _wrap_polygon(cells, cfg, h_target)
            if not outline.is_valid:
                outline = _wrap_polygon(cells, cfg, h_target, refine=2)
                if not outline.is_valid:
                    raise GeometryFailure("tight-wrap union is not a simple polygon")
        geoms = list(outline.geoms) if outline.geom_type == "MultiPolygon" else [outline]
        disks = unary_union([Polygon(_circle(c[:2], R, circle_resolution(R, h_target)))
                             for c, R in zip(cells.centers, cells.outer_radii)])
        for poly in geoms:
            poly = shapely.set_precision(poly, 0.0)
            ext = np.asarray(poly.exterior.coords)[:-1]
            if Polygon(ext).exterior.is_ccw is False:
                ext = ext[::-1]
            add_loop(ext, bdy["ecs"], (ecs, -1))
            for ring in poly.interiors:
                pts = np.asarray(ring.coords)[:-1]
                add_loop(pts, bdy["ecs"], (ecs, -1))
                holes.append(np.asarray(Polygon(pts).representative_point().coords)[0])
            ecs_region = poly.difference(disks)
            if ecs_region.is_empty:
                raise GeometryFailure("ECS region is empty")
            seeds.append(np.asarray(ecs_region.representative_point().coords)[0])
            seed_ids.append(ecs)
    ncmpt = (2 * n if inner else n) + (1 if has_ecs else 0)
    cap = np.zeros(ncmpt, dtype=np.int64)
    for i in range(n):
        cap[cmpt["out"][i]] = bdy["out_caps"][i]
        if inner:
            cap[cmpt["in"][i]] = bdy["in_caps"][i]
    if has_ecs:
        cap[ecs] = bdy["ecs"]
    return CrossSection(vertices=np.concatenate(verts), segments=np.concatenate(segs),
                        side_markers=np.concatenate(markers),
                        wall_sides=np.concatenate(wsides).astype(np.int64),
                        region_points=np.array(seeds), region_ids=np.array(seed_ids),
                        holes=np.array(holes).reshape(-1, 2), cap_markers=cap,
                        ncompartment=ncmpt)


def triangulate_section(section: CrossSection, opts: str = "pA"):
    """Constrained triangulation of the cross-section with region labels.

    Returns ``(points2d, triangles, triangle_cmpt, segments, segment_markers)``;
    segment markers index into ``section.side_markers`` (offset by one).
    """
    data = {
        "vertices": section.vertices,
        "segments": section.segments,
        "segment_markers": (np.arange(len(section.segments)) + 1)[:, None],
        "regions": np.column_stack([section.region_points, section.region_ids,
                                    np.zeros(len(section.region_ids))]),
    }
    if len(section.holes):
        data["holes"] = section.holes
    out = triangle.triangulate(data, opts)
    tri_cmpt = out["triangle_attributes"][:, 0].round().astype(np.int64)
    tris = out["triangles"].astype(np.int64)
    # counter-clockwise triangles
    p = out["vertices"]
    a = p[tris[:, 1]] - p[tris[:, 0]]
    b = p[tris[:, 2]] - p[tris[:, 0]]
    cw = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0] < 0
    tris[cw] = tris[cw][:, ::-1]
    return (out["vertices"], tris, tri_cmpt, out["segments"].astype(np.int64),
            out["segment_markers"].ravel().astype(np.int64) - 1)


def triangulate_cylinders(cells: CellSet, cfg: CellConfig, h_target: float | None = None) -> SurfaceMesh:
    """Side walls at every circle, caps at ``z = ±H/2`` and the ECS outline."""
    if cells.shape != "cylinder":
        raise ValidationError("triangulate_cylinders needs cylindrical cells")
    if h_target is None:
        h_target = cfg.R_mean / 4.0
    section = cross_section(cells, cfg, h_target)
    # 'Y' keeps boundary vertices fixed, so caps and walls share vertices
    p2, tris2, tcmpt, segs, segmark = triangulate_section(section, "pAY")
    H = cfg.Hcyl
    nv = len(p2)
    verts = np.vstack([np.column_stack([p2, np.full(nv, -0.5 * H)]),
                       np.column_stack([p2, np.full(nv, 0.5 * H)])])
    tris, markers, sides = [], [], []
    # side walls: 2 triangles per segment, normal towards the outside compartment
    for (a, b), sid in zip(segs, segmark):
        inside, outside = section.wall_sides[sid]
        pa, pb = p2[a], p2[b]
        mid = 0.5 * (pa + pb)
        nrm = np.array([pb[1] - pa[1], -(pb[0] - pa[0])])
        # outward from the inside region: test against the inside seed side
        probe = mid + 1e-6 * nrm
        if _point_in_cmpt(probe, p2, tris2, tcmpt) == inside:
            a, b = b, a
        tris += [(a, b, b + nv), (a, b + nv, a + nv)]
        markers += [section.side_markers[sid]] * 2
        sides += [(inside, outside)] * 2
    for k, (a, b, c) in enumerate(tris2):
        cm = tcmpt[k]
        tris.append((a + nv, b + nv, c + nv))  # top, +z normal
        tris.append((a, c, b))  # bottom, -z normal
        markers += [section.cap_markers[cm]] * 2
        sides += [(cm, -1)] * 2
    seeds = np.column_stack([section.region_points, np.zeros(len(section.region_points))])
    return SurfaceMesh(vertices=verts, triangles=np.asarray(tris, dtype=np.int64),
                       facet_markers=np.asarray(markers, dtype=np.int64),
                       facet_sides=np.asarray(sides, dtype=np.int64),
                       region_points=seeds, region_ids=section.region_ids.copy(),
                       ncompartment=section.ncompartment,
                       meta={"shape": "cylinder", "h_target": h_target, "H": H})


def _point_in_cmpt(pt, p2, tris2, tcmpt):
    a, b, c = p2[tris2[:, 0]], p2[tris2[:, 1]], p2[tris2[:, 2]]

    def cross(u, v, w):
        return (v[:, 0] - u[:, 0]) * (w[1] - u[:, 1]) - (v[:, 1] - u[:, 1]) * (w[0] - u[:, 0])

    inside = (cross(a, b, pt) >= 0) & (cross(b, c, pt) >= 0) & (cross(c, a, pt) >= 0)
    hit = np.flatnonzero(inside)
    return int(tcmpt[hit[0]]) if hit.size else -1
