"""Built-in tetrahedral meshers for canonical shapes.

Supported shapes:

``box``        slab stack along x; compartment k is slab k, boundary k < K-1
               is the interface between slabs k and k+1, boundary K-1 the outer wall.
``cylinder``   concentric disk stack extruded along z; compartment j is annulus j
               (0 innermost), boundary 2j its outer side wall, 2j+1 its caps.
``sphere``     concentric spherical layers; compartment j is layer j (0 innermost),
               boundary j the sphere at ``radii[j]``.
``cells``      cylinder cells from :func:`dmrisim.geometry.cross_section`, extruded;
               labels follow the geometry module.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import UnsupportedShape
from ..geometry import CrossSection, icosphere, triangulate_section
from .femesh import TET_FACES, FeMesh, _row_keys, tet_signed_volumes

SQRT3 = math.sqrt(3.0)


def _orient(points, tets):
    vol = tet_signed_volumes(points, tets)
    neg = vol < 0
    tets = tets.copy()
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def extract_facets(tets, tet_cmpt):
    """Exterior faces and faces between different compartments.

    Returns ``(faces, owner, other)``; faces are oriented out of ``owner``
    (the lower compartment for interfaces) and ``other`` is ``-1`` outside.
    """
    faces = tets[:, TET_FACES].reshape(-1, 3)
    cm = np.repeat(tet_cmpt, 4)
    keys = _row_keys(faces)
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    start = np.ones(len(ks), bool)
    start[1:] = ks[1:] != ks[:-1]
    grp = np.cumsum(start) - 1
    counts = np.bincount(grp)
    first = order[start]
    single = counts == 1
    out_f = [faces[first[single]]]
    out_o = [cm[first[single]]]
    out_x = [np.full(single.sum(), -1)]
    dbl = np.flatnonzero(counts == 2)
    if len(dbl):
        idx0 = order[np.flatnonzero(start)[dbl]]
        idx1 = order[np.flatnonzero(start)[dbl] + 1]
        c0, c1 = cm[idx0], cm[idx1]
        diff = c0 != c1
        idx0, idx1, c0, c1 = idx0[diff], idx1[diff], c0[diff], c1[diff]
        lower = np.where(c0 < c1, idx0, idx1)
        out_f.append(faces[lower])
        out_o.append(np.minimum(c0, c1))
        out_x.append(np.maximum(c0, c1))
    return np.concatenate(out_f), np.concatenate(out_o), np.concatenate(out_x)


def _grid_coords(length, h, nmin=1):
    # cube side s with sqrt(3)·s <= 1.5·h
    n = max(nmin, int(math.ceil(length / (1.5 * h / SQRT3) - 1e-9)))
    return np.linspace(0.0, length, n + 1)


def _kuhn_tets(nx, ny, nz):
    """Six tets per grid cube, conforming across cubes (shared main diagonal)."""
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()

    def vid(di, dj, dk):
        return ((i + di) * (ny + 1) + (j + dj)) * (nz + 1) + (k + dk)

    v000, v111 = vid(0, 0, 0), vid(1, 1, 1)
    paths = [((1, 0, 0), (1, 1, 0)), ((1, 0, 0), (1, 0, 1)), ((0, 1, 0), (1, 1, 0)),
             ((0, 1, 0), (0, 1, 1)), ((0, 0, 1), (1, 0, 1)), ((0, 0, 1), (0, 1, 1))]
    tets = [np.column_stack([v000, vid(*a), vid(*b), v111]) for a, b in paths]
    cube = np.tile(np.arange(len(i)), 6)
    return np.concatenate(tets), cube, (i, j, k)


def mesh_box(lengths, h, layers=None) -> FeMesh:
    """Structured slab stack; ``layers`` gives slab widths along x."""
    Lx, Ly, Lz = map(float, lengths)
    widths = [Lx] if layers is None else [float(w) for w in layers]
    if layers is not None and not math.isclose(sum(widths), Lx):
        raise UnsupportedShape("slab widths must sum to Lx")
    xs = [0.0]
    layer_of_cell = []
    for k, w in enumerate(widths):
        g = _grid_coords(w, h)[1:] + xs[-1]
        xs.extend(g)
        layer_of_cell += [k] * len(g)
    xs = np.array(xs)
    ys = _grid_coords(Ly, h)
    zs = _grid_coords(Lz, h)
    nx, ny, nz = len(xs) - 1, len(ys) - 1, len(zs) - 1
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    points = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    tets, cube, (ci, _, _) = _kuhn_tets(nx, ny, nz)
    tet_cmpt = np.asarray(layer_of_cell)[np.tile(ci, 6)]
    tets = _orient(points, tets)
    faces, owner, other = extract_facets(tets, tet_cmpt)
    K = len(widths)
    bdy = np.where(other >= 0, owner, K - 1)
    return FeMesh(points=points, tets=tets, tet_cmpt=tet_cmpt, facets=faces, facet_bdy=bdy)


def _extrude(p2, tris2, tri_cmpt, zs):
    """Stack prisms over a 2-D triangulation and split each into three tets."""
    nv = len(p2)
    nl = len(zs)
    points = np.column_stack([np.tile(p2, (nl, 1)), np.repeat(zs, nv)])
    t = np.sort(tris2, axis=1)
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    tets, cm = [], []
    for L in range(nl - 1):
        lo, hi = L * nv, (L + 1) * nv
        # diagonals run from the lower-index vertex on top to the higher on bottom
        tets += [np.column_stack([a + lo, b + lo, c + lo, a + hi]),
                 np.column_stack([b + lo, c + lo, a + hi, b + hi]),
                 np.column_stack([c + lo, a + hi, b + hi, c + hi])]
        cm += [tri_cmpt] * 3
    tets = np.concatenate(tets)
    return points, _orient(points, tets), np.concatenate(cm)


def _z_levels(H, h):
    n = max(1, int(math.ceil(H / (0.75 * h) - 1e-9)))
    return np.linspace(-0.5 * H, 0.5 * H, n + 1)


def _extruded_markers(points, faces, owner, other, nv, seg_marker, cap_marker, nl):
    """Label extruded faces: caps by compartment, walls by their 2-D segment."""
    layer = faces // nv
    v2 = faces % nv
    bdy = np.full(len(faces), -1, dtype=np.int64)
    cap = (layer.min(axis=1) == layer.max(axis=1)) & np.isin(layer[:, 0], [0, nl - 1])
    bdy[cap] = cap_marker[owner[cap]]
    wall = ~cap
    for k in np.flatnonzero(wall):
        u = np.unique(v2[k])
        bdy[k] = seg_marker.get((int(u[0]), int(u[1])), -1) if len(u) == 2 else -1
    return bdy


def _section_mesh(section: CrossSection, h, H):
    area = 0.5 * SQRT3 / 4.0 * h * h
    p2, tris2, tcmpt, segs, segmark = triangulate_section(section, f"pq28Aa{area:.10g}")
    seg_marker = {}
    for (u, v), m in zip(segs, segmark):
        seg_marker[(min(u, v), max(u, v))] = int(section.side_markers[m])
    zs = _z_levels(H, h)
    points, tets, cm = _extrude(p2, tris2, tcmpt, zs)
    faces, owner, other = extract_facets(tets, cm)
    bdy = _extruded_markers(points, faces, owner, other, len(p2), seg_marker,
                            section.cap_markers, len(zs))
    if np.any(bdy < 0):
        raise UnsupportedShape("unlabelled facets in extruded mesh")
    return FeMesh(points=points, tets=tets, tet_cmpt=cm, facets=faces, facet_bdy=bdy)


def mesh_disk_stack(radii, H, h, center=(0.0, 0.0)) -> FeMesh:
    """Concentric cylinders; annulus j has outer radius ``radii[j]``."""
    from ..geometry import circle_resolution

    radii = sorted(float(r) for r in radii)
    verts, segs, marks, wsides = [], [], [], []
    base = 0
    for j, r in enumerate(radii):
        n = circle_resolution(r, h)
        a = 2.0 * math.pi * np.arange(n) / n
        verts.append(np.column_stack([center[0] + r * np.cos(a), center[1] + r * np.sin(a)]))
        idx = base + np.arange(n)
        segs.append(np.column_stack([idx, np.roll(idx, -1)]))
        marks.append(np.full(n, 2 * j))
        wsides.append(np.tile((j, j + 1 if j + 1 < len(radii) else -1), (n, 1)))
        base += n
    seeds = [np.array(center, float)]
    for j in range(1, len(radii)):
        seeds.append(np.array(center) + [0.5 * (radii[j - 1] + radii[j]), 0.0])
    K = len(radii)
    section = CrossSection(vertices=np.concatenate(verts), segments=np.concatenate(segs),
                           side_markers=np.concatenate(marks),
                           wall_sides=np.concatenate(wsides), region_points=np.array(seeds),
                           region_ids=np.arange(K), holes=np.zeros((0, 2)),
                           cap_markers=2 * np.arange(K) + 1, ncompartment=K)
    return _section_mesh(section, h, H)


def mesh_cells(section: CrossSection, H, h) -> FeMesh:
    """Extruded multi-cylinder configuration from a geometry cross-section."""
    return _section_mesh(section, h, H)


def _max_edge(v, f):
    e = v[f] - v[np.roll(f, 1, axis=1)]
    return float(np.linalg.norm(e, axis=2).max())


def mesh_layered_sphere(radii, h, center=(0.0, 0.0, 0.0)) -> FeMesh:
    """Concentric spherical layers from shells of one icosphere.

    Intermediate shells are inserted so that radial spacing stays below ``h``;
    the innermost ball is a fan of tets around the centre.
    """
    radii = sorted(float(r) for r in radii)
    R = radii[-1]
    level = 0
    uv, uf = icosphere(level)
    while R * _max_edge(uv, uf) > h and level < 7:
        level += 1
        uv, uf = icosphere(level)
    shells, shell_layer = [], []
    inner = 0.0
    for j, r in enumerate(radii):
        n = max(1, int(math.ceil((r - inner) / h - 1e-9)))
        for s in range(1, n + 1):
            shells.append(inner + (r - inner) * s / n)
            shell_layer.append(j)
        inner = r
    shells = np.array(shells)
    nv = len(uv)
    c = np.asarray(center, float)
    points = np.vstack([c[None, :]] + [c + rr * uv for rr in shells])
    t = np.sort(uf, axis=1)
    a, b, cc = t[:, 0] + 1, t[:, 1] + 1, t[:, 2] + 1
    tets = [np.column_stack([np.zeros(len(t), np.int64), a, b, cc])]
    cm = [np.full(len(t), shell_layer[0])]
    for s in range(1, len(shells)):
        lo, hi = (s - 1) * nv, s * nv
        tets += [np.column_stack([a + lo, b + lo, cc + lo, a + hi]),
                 np.column_stack([b + lo, cc + lo, a + hi, b + hi]),
                 np.column_stack([cc + lo, a + hi, b + hi, cc + hi])]
        cm += [np.full(len(t), shell_layer[s])] * 3
    tets = _orient(points, np.concatenate(tets))
    tet_cmpt = np.concatenate(cm)
    faces, owner, other = extract_facets(tets, tet_cmpt)
    bdy = owner.copy()
    return FeMesh(points=points, tets=tets, tet_cmpt=tet_cmpt, facets=faces, facet_bdy=bdy)


def mesh_canonical(spec: dict, h: float) -> FeMesh:
    """Dispatch on ``spec["shape"]``.

    Examples
    --------
    >>> m = mesh_canonical({"shape": "box", "lengths": (1, 1, 1)}, 0.5)
    >>> round(float(m.volumes().sum()), 12)
    1.0
    """
    shape = spec.get("shape")
    if h <= 0:
        raise UnsupportedShape("mesh size must be positive")
    if shape == "box":
        return mesh_box(spec["lengths"], h, spec.get("layers"))
    if shape == "cylinder":
        return mesh_disk_stack(spec["radii"], spec["height"], h, spec.get("center", (0, 0)))
    if shape == "sphere":
        return mesh_layered_sphere(spec["radii"], h, spec.get("center", (0, 0, 0)))
    if shape == "cells":
        return mesh_cells(spec["section"], spec["height"], h)
    raise UnsupportedShape(f"unsupported canonical shape {shape!r}")
