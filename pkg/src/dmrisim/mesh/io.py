"""Text codecs (node/ele/face, poly, ASCII PLY) and the external mesher bridge."""
from __future__ import annotations

import logging
import os
import shutil
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from ..errors import MeshIndexError, MesherFailed, MesherNotFound, ParseError
from .femesh import FeMesh, tet_signed_volumes

log = logging.getLogger(__name__)


def _data_lines(text):
    """Yield ``(line_number, tokens)`` for non-empty, non-comment lines."""
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def _header(lines, what, min_fields):
    try:
        no, tok = next(lines)
    except StopIteration:
        raise ParseError(f"empty {what} file") from None
    if len(tok) < min_fields:
        raise ParseError(f"bad {what} header", line=no)
    try:
        return no, [int(t) for t in tok]
    except ValueError:
        raise ParseError(f"non-integer {what} header", line=no) from None


def _rows(lines, count, ncols, what, cast=float):
    rows, idx, nos = [], [], []
    for _ in range(count):
        try:
            no, tok = next(lines)
        except StopIteration:
            raise ParseError(f"{what} file ends early, expected {count} rows") from None
        if len(tok) < ncols + 1:
            raise ParseError(f"expected {ncols + 1} fields in {what} row", line=no)
        try:
            idx.append(int(tok[0]))
            rows.append([cast(t) for t in tok[1:]])
        except ValueError:
            raise ParseError(f"malformed number in {what} row", line=no) from None
        nos.append(no)
    return np.asarray(idx), rows, nos


def parse_node(text):
    lines = _data_lines(text)
    no, h = _header(lines, "node", 2)
    n = h[0]
    nattr = h[2] if len(h) > 2 else 0
    nmark = h[3] if len(h) > 3 else 0
    idx, rows, nos = _rows(lines, n, 3 + nattr + nmark, "node")
    pts = np.array([r[:3] for r in rows], float).reshape(-1, 3)
    base = int(idx[0]) if n else 0
    if base not in (0, 1) or not np.array_equal(idx, base + np.arange(n)):
        raise ParseError("node indices must be consecutive from 0 or 1", line=no)
    return pts, base


def parse_ele(text, base):
    lines = _data_lines(text)
    no, h = _header(lines, "ele", 2)
    m, per = h[0], h[1]
    nattr = h[2] if len(h) > 2 else 0
    if per != 4:
        raise ParseError("only 4-node tetrahedra are supported", line=no)
    _, rows, nos = _rows(lines, m, 4 + nattr, "ele")
    tets = np.array([[int(v) for v in r[:4]] for r in rows], np.int64).reshape(-1, 4) - base
    region = (np.array([int(round(float(r[4]))) for r in rows], np.int64)
              if nattr else np.zeros(m, np.int64))
    return tets, region, nos


def parse_face(text, base):
    lines = _data_lines(text)
    no, h = _header(lines, "face", 1)
    k = h[0]
    has_mark = h[1] if len(h) > 1 else 0
    _, rows, nos = _rows(lines, k, 3 + (1 if has_mark else 0), "face")
    faces = np.array([[int(v) for v in r[:3]] for r in rows], np.int64).reshape(-1, 3) - base
    mark = (np.array([int(float(r[3])) for r in rows], np.int64)
            if has_mark else np.zeros(k, np.int64))
    return faces, mark, nos


def _relabel(values):
    """Map arbitrary labels to 0..n-1 in sorted order."""
    uniq, inv = np.unique(values, return_inverse=True)
    return inv.astype(np.int64), uniq


def import_tetgen(node_text: str, ele_text: str, face_text: str = "",
                  relabel: bool = True) -> FeMesh:
    """Build a :class:`FeMesh` from node/ele/face texts.

    Indexing (0- or 1-based) is taken from the first node index. Region
    attributes and face markers are relabelled to ``0..n-1`` in sorted order
    unless ``relabel`` is false; facet markers ``0`` (unmarked) are dropped
    when other markers are present. Negatively oriented tets are repaired.
    """
    pts, base = parse_node(node_text)
    tets, region, enos = parse_ele(ele_text, base)
    n = len(pts)
    bad = np.flatnonzero((tets < 0).any(1) | (tets >= n).any(1))
    if bad.size:
        raise MeshIndexError(f"tet references a missing node (ele line {enos[bad[0]]})")
    if face_text.strip():
        faces, mark, fnos = parse_face(face_text, base)
        badf = np.flatnonzero((faces < 0).any(1) | (faces >= n).any(1))
        if badf.size:
            raise MeshIndexError(f"face references a missing node (face line {fnos[badf[0]]})")
    else:
        faces, mark = np.zeros((0, 3), np.int64), np.zeros(0, np.int64)
    vol = tet_signed_volumes(pts, tets)
    neg = vol < 0
    if np.any(neg):
        log.warning("repaired orientation of %d tetrahedra", int(neg.sum()))
        tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    if relabel:
        region, _ = _relabel(region)
        if len(mark) and np.any(mark != 0) and np.any(mark == 0):
            keep = mark != 0
            faces, mark = faces[keep], mark[keep]
        mark, _ = _relabel(mark)
    return FeMesh(points=pts, tets=tets, tet_cmpt=region, facets=faces, facet_bdy=mark)


def read_tetgen(prefix) -> FeMesh:
    prefix = str(prefix)
    face = Path(prefix + ".face")
    return import_tetgen(Path(prefix + ".node").read_text(), Path(prefix + ".ele").read_text(),
                         face.read_text() if face.exists() else "")


def export_tetgen(mesh: FeMesh, prefix, base: int = 1) -> None:
    """Write node/ele/face files; regions and markers are written 1-based."""
    prefix = str(prefix)
    with open(prefix + ".node", "w") as fh:
        fh.write(f"{mesh.nnode} 3 0 0\n")
        for i, p in enumerate(mesh.points):
            fh.write(f"{i + base} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
    with open(prefix + ".ele", "w") as fh:
        fh.write(f"{mesh.ntet} 4 1\n")
        for i, (t, c) in enumerate(zip(mesh.tets, mesh.tet_cmpt)):
            fh.write(f"{i + base} {t[0] + base} {t[1] + base} {t[2] + base} {t[3] + base} {c + 1}\n")
    with open(prefix + ".face", "w") as fh:
        fh.write(f"{len(mesh.facets)} 1\n")
        for i, (f, m) in enumerate(zip(mesh.facets, mesh.facet_bdy)):
            fh.write(f"{i + base} {f[0] + base} {f[1] + base} {f[2] + base} {m + 1}\n")


def write_poly(surface, path) -> None:
    """Write a surface mesh as a piecewise linear complex with region seeds."""
    with open(path, "w") as fh:
        fh.write(f"{len(surface.vertices)} 3 0 0\n")
        for i, v in enumerate(surface.vertices):
            fh.write(f"{i + 1} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        fh.write(f"{len(surface.triangles)} 1\n")
        for t, m in zip(surface.triangles, surface.facet_markers):
            fh.write(f"1 0 {m + 1}\n3 {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
        fh.write("0\n")
        fh.write(f"{len(surface.region_ids)}\n")
        for i, (p, r) in enumerate(zip(surface.region_points, surface.region_ids)):
            fh.write(f"{i + 1} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {r + 1}\n")


# ---------------------------------------------------------------------------
# PLY


def write_ply(vertices, triangles) -> str:
    out = ["ply", "format ascii 1.0", f"element vertex {len(vertices)}",
           "property float x", "property float y", "property float z",
           f"element face {len(triangles)}", "property list uchar int vertex_indices",
           "end_header"]
    out += [f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}" for v in np.asarray(vertices, float)]
    out += [f"3 {t[0]} {t[1]} {t[2]}" for t in np.asarray(triangles)]
    return "\n".join(out) + "\n"


def read_ply(text: str):
    """Parse ASCII PLY with vertex x, y, z and triangular faces."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", line=1)
    nv = nf = None
    props = []
    current = None
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise ParseError("only ASCII PLY is supported", line=i)
        elif tok[0] == "element":
            current = tok[1]
            if current == "vertex":
                nv = int(tok[2])
            elif current == "face":
                nf = int(tok[2])
        elif tok[0] == "property" and current == "vertex":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    else:
        raise ParseError("missing end_header")
    if nv is None or nf is None:
        raise ParseError("PLY needs vertex and face elements")
    try:
        ix = [props.index(c) for c in "xyz"]
    except ValueError:
        raise ParseError("vertex element lacks x, y or z") from None
    body = [(no + 1, ln.split()) for no, ln in enumerate(lines[i:], start=i) if ln.strip()]
    if len(body) < nv + nf:
        raise ParseError("PLY body ends early")
    verts = np.empty((nv, 3))
    for k in range(nv):
        no, tok = body[k]
        try:
            verts[k] = [float(tok[j]) for j in ix]
        except (ValueError, IndexError):
            raise ParseError("malformed vertex", line=no) from None
    tris = []
    for k in range(nv, nv + nf):
        no, tok = body[k]
        try:
            cnt = int(tok[0])
            idx = [int(t) for t in tok[1:1 + cnt]]
        except ValueError:
            raise ParseError("malformed face", line=no) from None
        if cnt < 3 or len(idx) != cnt:
            raise ParseError("face needs at least 3 vertices", line=no)
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshIndexError(f"face references a missing vertex (line {no})")
        # fan-triangulate polygons
        tris += [(idx[0], idx[j], idx[j + 1]) for j in range(1, cnt - 1)]
    return verts, np.asarray(tris, np.int64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# external mesher


def resolve_mesher(cmd: str | None = None) -> str:
    cmd = os.environ.get("SPIN_MESHER") or cmd or "tetgen"
    path = shutil.which(cmd)
    if path is None:
        raise MesherNotFound(f"external mesher {cmd!r} not found")
    return path


def invoke_external_mesher(surface, htetgen: float = -1.0, cmd: str | None = None,
                           timeout: float | None = None) -> FeMesh:
    """Tetrahedralize a watertight surface with an external tetgen-compatible tool.

    The surface is written as ``mesh.poly`` in a private temporary directory
    and the tool is called as ``<cmd> -pqA[a<htetgen>] mesh.poly``; the
    resulting ``mesh.1.{node,ele,face}`` files are imported. Region
    attributes written by the tool are 1-based compartment ids.
    """
    exe = resolve_mesher(cmd)
    with tempfile.TemporaryDirectory(prefix="dmrisim-mesh-") as tmp:
        poly = Path(tmp) / "mesh.poly"
        write_poly(surface, poly)
        switches = "-pqA" + (f"a{htetgen:g}" if htetgen and htetgen > 0 else "")
        try:
            proc = subprocess.run([exe, switches, str(poly)], cwd=tmp, capture_output=True,
                                  text=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise MesherFailed(f"mesher could not run: {exc}", diagnostics=str(exc)) from exc
        if proc.returncode != 0:
            raise MesherFailed(f"mesher exited with status {proc.returncode}",
                               diagnostics=proc.stdout + proc.stderr)
        out = {ext: Path(tmp) / f"mesh.1.{ext}" for ext in ("node", "ele", "face")}
        if not (out["node"].exists() and out["ele"].exists()):
            raise MesherFailed("mesher produced no output", diagnostics=proc.stdout + proc.stderr)
        node = out["node"].read_text()
        ele = out["ele"].read_text()
        face_p = out["face"]
        face = face_p.read_text() if face_p.exists() else ""
    mesh = import_tetgen(node, ele, face, relabel=False)
    # attributes and markers were written 1-based
    cm = mesh.tet_cmpt - 1
    keep = mesh.facet_bdy > 0
    return FeMesh(points=mesh.points, tets=mesh.tets, tet_cmpt=cm,
                  facets=mesh.facets[keep], facet_bdy=mesh.facet_bdy[keep] - 1)
