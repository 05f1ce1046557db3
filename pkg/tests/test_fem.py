import math

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import SIGMA, single_tet_mesh
from dmrisim.errors import DegenerateTet, MissingPair
from dmrisim.fem import (DofMap, assemble, assemble_boundary_source, assemble_flux,
                         assemble_mass, assemble_scaled_mass, assemble_stiffness,
                         couple_interfaces, dump_coo)
from dmrisim.mesh import CompartmentModel, FeMesh, mesh_box, mesh_layered_sphere


def test_single_tet_mass():
    m = single_tet_mesh(2.0)
    V = m.volumes()[0]
    M = assemble_mass(m, 0).toarray()
    assert np.allclose(np.diag(M), V / 10)
    off = M[~np.eye(4, dtype=bool)]
    assert np.allclose(off, V / 20)


def test_mass_sums_to_volume(unit_cube):
    M = assemble_mass(unit_cube, 0)
    assert M.sum() == pytest.approx(1.0, abs=1e-13)
    assert abs(M - M.T).max() < 1e-17


def test_stiffness_kernel_and_energy(unit_cube):
    S = assemble_stiffness(unit_cube, 0, SIGMA)
    one = np.ones(unit_cube.nnode)
    assert np.abs(S @ one).max() < 1e-15
    x = unit_cube.points[:, 0]
    # linear fields are reproduced exactly: ∫σ|∇x|² = σV
    assert x @ S @ x == pytest.approx(SIGMA, rel=1e-12)
    S2 = assemble_stiffness(unit_cube, 0, 2 * SIGMA)
    assert abs(S2 - 2 * S).max() < 1e-18


def test_stiffness_positive_semidefinite():
    S = assemble_stiffness(single_tet_mesh(), 0, 1.0).toarray()
    w = np.linalg.eigvalsh(S)
    assert w.min() > -1e-14
    assert np.sum(w < 1e-12) == 1


def test_scaled_mass(unit_cube):
    J0 = assemble_scaled_mass(unit_cube, 0, (0, 0, 0))
    assert J0.nnz == 0 or abs(J0).max() == 0
    one = np.ones(unit_cube.nnode)
    u = np.array([0.3, -0.2, 0.9])
    J = assemble_scaled_mass(unit_cube, 0, u)
    # ∫u·x over the unit cube centred at (0.5, 0.5, 0.5)
    assert one @ J @ one == pytest.approx(u.sum() * 0.5, rel=1e-12)
    a = np.array([1.0, 2.0, -3.0])
    shifted = unit_cube.with_points(unit_cube.points + a)
    Js = assemble_scaled_mass(shifted, 0, u)
    M = assemble_mass(unit_cube, 0)
    assert abs(Js - (J + (u @ a) * M)).max() < 1e-13


def test_scaled_mass_quadratic_exact():
    # ∫x² over the reference tet is 1/60
    m = single_tet_mesh()
    x = m.points[:, 0]
    J = assemble_scaled_mass(m, 0, (1, 0, 0))
    one = np.ones(4)
    assert one @ J @ x == pytest.approx(1 / 60, rel=1e-12)


def test_flux_face_blocks():
    m = single_tet_mesh()
    marks = np.array([0, 0, 0, 1])
    m = FeMesh(points=m.points, tets=m.tets, tet_cmpt=m.tet_cmpt, facets=m.facets,
               facet_bdy=marks)
    F = assemble_flux(m, 0, [0.0, 1.0]).toarray()
    A = math.sqrt(3) / 2
    blk = F[1:, 1:]
    assert np.allclose(np.diag(blk), A / 6)
    assert np.allclose(blk[~np.eye(3, dtype=bool)], A / 12)
    assert np.allclose(F[0], 0) and np.allclose(F[:, 0], 0)


def test_flux_sphere_area():
    m = mesh_layered_sphere([5.0], 1.0)
    F = assemble_flux(m, 0, [1.0])
    assert F.sum() == pytest.approx(4 * math.pi * 25, rel=0.02)


def test_boundary_source(unit_cube):
    v = assemble_boundary_source(unit_cube, 0, (1, 0, 0), SIGMA)
    assert abs(v.sum()) < 1e-15
    face = np.isclose(unit_cube.points[:, 0], 1.0)
    assert v[face].sum() == pytest.approx(SIGMA, rel=1e-12)
    assert v[np.isclose(unit_cube.points[:, 0], 0.0)].sum() == pytest.approx(-SIGMA, rel=1e-12)


def test_interface_coupling(two_slab):
    _, model, split = two_slab
    A = assemble(split, model)
    Q = A.Qbar
    ones = np.ones(A.dofmap.ndof)
    assert np.abs(Q @ ones).max() < 1e-17
    jump = np.zeros(A.dofmap.ndof)
    jump[A.dofmap.block(0)] = 1.0
    assert jump @ Q @ jump == pytest.approx(model.kappa[0] * 0.25, rel=1e-12)
    assert abs(Q - Q.T).max() == 0


def test_impermeable_coupling_is_empty():
    mesh = mesh_box((2, 1, 1), 0.5, layers=[1, 1])
    model = CompartmentModel.uniform(2, mesh.nboundary, SIGMA)
    Q = couple_interfaces(mesh, model, DofMap.from_mesh(mesh))
    assert Q.nnz == 0


def test_missing_double_nodes():
    mesh = mesh_box((2, 1, 1), 0.5, layers=[1, 1])
    model = CompartmentModel.uniform(2, mesh.nboundary, SIGMA, kappa=1e-4)
    with pytest.raises(MissingPair):
        assemble(mesh, model)


def test_degenerate_tet():
    m = single_tet_mesh()
    flat = m.with_points(m.points * np.array([1.0, 1.0, 0.0]))
    with pytest.raises(DegenerateTet):
        assemble_mass(flat, 0)


def test_dofmap_blocks(two_slab):
    _, _, split = two_slab
    dm = DofMap.from_mesh(split)
    assert dm.ndof == split.nnode
    assert dm.block(0).stop == dm.block(1).start
    with pytest.raises(KeyError):
        dm.local(0, split.double_pairs[:1, 1])


def test_assembly_deterministic(two_slab):
    _, model, split = two_slab
    a, b = assemble(split, model), assemble(split, model)
    for x, y in [(a.M, b.M), (a.S, b.S), (a.Qbar, b.Qbar), (a.J_axes[0], b.J_axes[0])]:
        assert np.array_equal(x.indptr, y.indptr)
        assert np.array_equal(x.indices, y.indices)
        assert np.array_equal(x.data, y.data)


def test_assembly_set(slab_assembly):
    A = slab_assembly
    assert A.volumes.sum() == pytest.approx(2.5)
    xi = A.initial_state()
    assert A.cmpt_signal(xi)[0] == pytest.approx(2.5)
    assert abs(A.J((1, 0, 0)) - A.J_axes[0]).max() == 0
    assert A.source(0, (1, 0, 0)).sum() == pytest.approx(0.0, abs=1e-15)
    # no T2 relaxation by default
    assert abs(A.relaxation()).max() == 0


def test_dump_coo_roundtrip(tmp_path, unit_cube):
    M = assemble_mass(unit_cube, 0)
    dump_coo(M, tmp_path / "M.txt")
    rows = np.loadtxt(tmp_path / "M.txt")
    back = sp.coo_matrix((rows[:, 2], (rows[:, 0].astype(int), rows[:, 1].astype(int))),
                         shape=M.shape)
    assert abs(back - M).max() == 0
    dump_coo(1j * M, tmp_path / "J.txt")
    assert np.loadtxt(tmp_path / "J.txt").shape[1] == 4
