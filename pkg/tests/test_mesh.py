import math
import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

from dmrisim.errors import (MesherFailed, MesherNotFound, MeshIndexError, ParseError,
                            TopologyError, UnsupportedShape)
from dmrisim.geometry import (CellConfig, circle_resolution, place_cells, signed_volume,
                              triangulate_spheres)
from dmrisim.mesh import (CompartmentModel, FeMesh, deform_bend_twist, export_tetgen,
                          import_tetgen, invoke_external_mesher, measure, mesh_box,
                          mesh_canonical, mesh_disk_stack, mesh_layered_sphere, mesh_quality,
                          read_ply, read_tetgen, split_double_nodes, write_ply)
from dmrisim.mesh.femesh import TET_FACES

FAKE_MESHER = Path(__file__).parent / "data" / "fake_mesher.py"

NODE1 = """# single tet
4 3 0 0
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
"""
ELE1 = "1 4 1\n1 1 2 3 4 7\n"
FACE1 = "4 1\n1 1 3 2 5\n2 1 2 4 5\n3 1 4 3 5\n4 2 3 4 9\n"


def _exterior_volume(mesh):
    """Volume enclosed by faces used by exactly one tet (outward by construction)."""
    faces = mesh.tets[:, TET_FACES].reshape(-1, 3)
    keys = np.sort(mesh.origin[faces], axis=1)
    _, inv, cnt = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return signed_volume(mesh.points, faces[cnt[inv.ravel()] == 1])


def _max_edge(mesh):
    p = mesh.points[mesh.tets]
    return max(np.linalg.norm(p[:, j] - p[:, i], axis=1).max()
               for i in range(4) for j in range(i + 1, 4))


# ---------------------------------------------------------------------------
# tetgen-style text import


def test_import_single_tet():
    m = import_tetgen(NODE1, ELE1, FACE1)
    assert m.nnode == 4 and m.ntet == 1
    assert m.volumes()[0] == pytest.approx(1 / 6)
    assert list(m.tet_cmpt) == [0]
    # markers 5 and 9 relabelled in sorted order
    assert sorted(m.facet_bdy.tolist()) == [0, 0, 0, 1]


def test_zero_and_one_based_agree():
    node0 = "4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n"
    ele0 = "1 4 1\n0 0 1 2 3 7\n"
    face0 = "4 1\n0 0 2 1 5\n1 0 1 3 5\n2 0 3 2 5\n3 1 2 3 9\n"
    a = import_tetgen(NODE1, ELE1, FACE1)
    b = import_tetgen(node0, ele0, face0)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.tets, b.tets)
    assert np.array_equal(a.facets, b.facets)
    assert np.array_equal(a.facet_bdy, b.facet_bdy)


def test_export_counts_match_headers(tmp_path):
    mesh = mesh_disk_stack([1.0, 2.0, 3.0], 2.0, 1.0)
    export_tetgen(mesh, tmp_path / "m")
    heads = {ext: int((tmp_path / f"m.{ext}").read_text().split()[0])
             for ext in ("node", "ele", "face")}
    back = read_tetgen(tmp_path / "m")
    assert heads == {"node": back.nnode, "ele": back.ntet, "face": len(back.facets)}
    assert np.array_equal(back.points, mesh.points)
    assert np.array_equal(back.tets, mesh.tets)
    assert np.array_equal(back.tet_cmpt, mesh.tet_cmpt)
    assert np.array_equal(back.facet_bdy, mesh.facet_bdy)


def test_parse_error_reports_line():
    bad = "1 4 1\n1 1 2 x 4 1\n"
    with pytest.raises(ParseError) as exc:
        import_tetgen(NODE1, bad)
    assert exc.value.line == 2
    assert "line 2" in str(exc.value)


def test_parse_error_short_row():
    with pytest.raises(ParseError) as exc:
        import_tetgen("4 3 0 0\n1 0 0 0\n2 1 0\n3 0 1 0\n4 0 0 1\n", ELE1)
    assert exc.value.line == 3


def test_missing_node_reference():
    with pytest.raises(MeshIndexError):
        import_tetgen(NODE1, "1 4 1\n1 1 2 3 5 1\n")
    with pytest.raises(IndexError):
        import_tetgen(NODE1, ELE1, "1 1\n1 1 2 8 1\n")


def test_orientation_repaired(caplog):
    m = import_tetgen(NODE1, "1 4 1\n1 1 3 2 4 1\n")
    assert m.volumes()[0] == pytest.approx(1 / 6)
    assert "repaired" in caplog.text


def test_ply_roundtrip():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0.1, 0.2, 1.0 / 3]])
    t = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    v2, t2 = read_ply(write_ply(v, t))
    assert np.array_equal(v, v2)
    assert np.array_equal(t, t2)


def test_ply_fans_polygons_and_rejects_garbage():
    text = ("ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
            "property float z\nelement face 1\nproperty list uchar int vertex_indices\n"
            "end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    _, t = read_ply(text)
    assert t.tolist() == [[0, 1, 2], [0, 2, 3]]
    with pytest.raises(ParseError):
        read_ply("not a ply")
    with pytest.raises(MeshIndexError):
        read_ply(text.replace("4 0 1 2 3", "3 0 1 9"))


# ---------------------------------------------------------------------------
# built-in meshers


def test_canonical_box():
    m = mesh_canonical({"shape": "box", "lengths": (1, 1, 1)}, 0.5)
    assert m.volumes().sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(m.volumes() > 0)
    with pytest.raises(UnsupportedShape):
        mesh_canonical({"shape": "torus"}, 0.5)
    with pytest.raises(UnsupportedShape):
        mesh_canonical({"shape": "box", "lengths": (1, 1, 1)}, 0.0)


def test_disk_stack_two_compartments():
    m = mesh_disk_stack([2.5, 5.0], 2.0, 1.0)
    assert m.ncompartment == 2
    sides = m.facet_sides()
    iface = (sides[:, 0] >= 0) & (sides[:, 1] >= 0)
    assert iface.any()
    r = np.linalg.norm(m.points[np.unique(m.facets[iface])][:, :2], axis=1)
    # nodes lie on the inscribed polygon, possibly at chord midpoints
    n = circle_resolution(2.5, 1.0)
    assert np.all(r <= 2.5 + 1e-9)
    assert np.all(r >= 2.5 * math.cos(math.pi / n) - 1e-9)
    assert _max_edge(m) <= 1.5 * 1.0 + 1e-9


def test_sphere_volume():
    m = mesh_layered_sphere([5.0], 1.0)
    assert m.volumes().sum() == pytest.approx(4 / 3 * math.pi * 125, rel=0.02)
    assert np.all(m.volumes() > 0)


@pytest.mark.parametrize("mesh", [
    mesh_box((2, 1, 1), 0.5, layers=[1, 1]),
    mesh_disk_stack([1.0, 2.0], 1.0, 0.6),
    mesh_layered_sphere([2.0, 3.0], 1.0),
], ids=["box", "disks", "spheres"])
def test_volume_additivity(mesh):
    V = measure(mesh)["V"]
    assert V.sum() == pytest.approx(_exterior_volume(mesh), rel=1e-12)


def test_every_compartment_closed():
    m = mesh_disk_stack([1.0, 2.0, 3.0], 2.0, 0.8)
    for c in range(m.ncompartment):
        tris, marks = m.cmpt_facets(c)
        # every boundary face of a compartment carries a label
        assert np.all(marks >= 0)
        edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, cnt = np.unique(edges, axis=0, return_counts=True)
        assert np.all(cnt == 2)


# ---------------------------------------------------------------------------
# measurements


def test_measure_unit_cube(unit_cube):
    out = measure(unit_cube, (1, 0, 0))
    assert out["V"][0] == pytest.approx(1.0)
    assert out["A_cmpt"][0] == pytest.approx(6.0)
    assert out["A_ug_cmpt"][0] == pytest.approx(2.0)


def test_measure_sphere_projected_area():
    m = mesh_layered_sphere([5.0], 1.0)
    out = measure(m, (0.3, -0.5, 0.8))
    assert out["A_ug_cmpt"][0] == pytest.approx(4 * math.pi * 25 / 3, rel=0.02)


def test_measure_cylinder_side_axial():
    m = mesh_disk_stack([3.0], 2.0, 1.0)
    out = measure(m, (0, 0, 1))
    assert out["A_ug"][0] == pytest.approx(0.0, abs=1e-12)
    assert out["A_ug"][1] == pytest.approx(out["A"][1])


def test_mesh_quality(unit_cube):
    q = mesh_quality(unit_cube)
    assert q.nnode == unit_cube.nnode and q.ntet == unit_cube.ntet
    assert int(q.radius_edge_hist.sum()) == unit_cube.ntet
    assert 0 < q.min_dihedral <= q.max_dihedral < 180
    assert q.max_edge == pytest.approx(_max_edge(unit_cube))


# ---------------------------------------------------------------------------
# double nodes


def test_split_counts(two_slab):
    mesh, model, split = two_slab
    sides = mesh.facet_sides()
    iface = (sides[:, 0] >= 0) & (sides[:, 1] >= 0)
    n_iface = len(np.unique(mesh.facets[iface]))
    assert split.nnode == mesh.nnode + n_iface
    assert len(split.double_pairs) == n_iface
    a, b = split.double_pairs[:, 0], split.double_pairs[:, 1]
    assert np.array_equal(split.points[a], split.points[b])
    assert np.array_equal(split.origin[a], split.origin[b])
    # each copy is referenced by one compartment only
    n0, n1 = set(split.cmpt_nodes(0)), set(split.cmpt_nodes(1))
    assert set(a) <= n0 and not set(a) & n1
    assert set(b) <= n1 and not set(b) & n0


def test_split_impermeable_unchanged():
    mesh = mesh_box((2, 1, 1), 0.5, layers=[1, 1])
    model = CompartmentModel.uniform(2, mesh.nboundary, 2e-3, kappa=0.0)
    assert split_double_nodes(mesh, model) is mesh


def test_split_facets_conform(two_slab):
    _, _, split = two_slab
    sides = split.facet_sides()
    for k, (c, _) in enumerate(sides):
        assert set(split.facets[k]) <= set(split.cmpt_nodes(c))


def test_topology_error():
    base = mesh_box((1, 1, 1), 1.0)
    # a duplicated tet puts three tets on each of its interior faces
    tets = np.vstack([base.tets, base.tets[:1]])
    bad = FeMesh(points=base.points, tets=tets, tet_cmpt=np.zeros(len(tets), np.int64),
                 facets=base.tets[0][TET_FACES], facet_bdy=np.zeros(4, np.int64))
    with pytest.raises(TopologyError):
        bad.facet_sides()


# ---------------------------------------------------------------------------
# deformation


def test_deform_identity():
    m = mesh_disk_stack([2.0], 4.0, 1.0)
    d = deform_bend_twist(m, 0.0, 0.0)
    assert np.array_equal(d.points, m.points)


def test_deform_quarter_turn():
    m = mesh_disk_stack([2.0], 4.0, 1.0)
    # twist of pi/2 per unit z: the plane z = 1 turns by a quarter
    d = deform_bend_twist(m, 0.0, math.pi / 2)
    top = np.isclose(m.points[:, 2], 1.0)
    if top.any():
        x, y = m.points[top, 0], m.points[top, 1]
        assert np.allclose(d.points[top, 0], -y, atol=1e-12)
        assert np.allclose(d.points[top, 1], x, atol=1e-12)
    assert np.array_equal(d.tets, m.tets)


def test_bend_preserves_volume_exactly():
    m = mesh_disk_stack([2.0], 6.0, 1.0)
    d = deform_bend_twist(m, 0.05, 0.0)
    assert np.allclose(d.volumes(), m.volumes(), rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# external mesher bridge


@pytest.fixture
def sphere_surface():
    cfg = CellConfig(ncell=1, Rmin=3.0, Rmax=3.0)
    return triangulate_spheres(place_cells(cfg), cfg, level=2)


def _leftover_dirs():
    return {p for p in os.listdir(tempfile.gettempdir()) if p.startswith("dmrisim-mesh-")}


def test_external_mesher_contract(sphere_surface, monkeypatch):
    monkeypatch.setenv("SPIN_MESHER", str(FAKE_MESHER))
    before = _leftover_dirs()
    coarse = invoke_external_mesher(sphere_surface, 8.0)
    fine = invoke_external_mesher(sphere_surface, 0.2)
    assert _leftover_dirs() == before
    assert fine.nnode >= coarse.nnode
    for m in (coarse, fine):
        assert np.all(m.volumes() > 0)
        assert list(np.unique(m.tet_cmpt)) == [0]
        assert set(m.facet_bdy) == {0}
        # every surface vertex appears among the mesh nodes
        d = np.linalg.norm(sphere_surface.vertices[:, None] - m.points[None], axis=2)
        assert d.min(axis=1).max() < 1e-12
        assert m.volumes().sum() == pytest.approx(sphere_surface.enclosed_volume(0), rel=1e-12)


def test_external_mesher_failure(sphere_surface, monkeypatch):
    monkeypatch.setenv("SPIN_MESHER", str(FAKE_MESHER))
    monkeypatch.setenv("FAKE_MESHER_FAIL", "1")
    before = _leftover_dirs()
    with pytest.raises(MesherFailed) as exc:
        invoke_external_mesher(sphere_surface, 1.0)
    assert "refusing" in exc.value.diagnostics
    assert _leftover_dirs() == before


def test_external_mesher_missing(sphere_surface, monkeypatch):
    monkeypatch.setenv("SPIN_MESHER", "definitely-not-a-mesher-xyz")
    before = _leftover_dirs()
    with pytest.raises(MesherNotFound):
        invoke_external_mesher(sphere_surface)
    assert _leftover_dirs() == before
