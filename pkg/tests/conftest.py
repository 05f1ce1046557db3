import numpy as np
import pytest

from dmrisim.fem import assemble
from dmrisim.mesh import CompartmentModel, mesh_box, mesh_disk_stack, split_double_nodes

SIGMA = 2e-3

# criterion id -> (passed, detail); filled by test_acceptance, reported at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")


def single_tet_mesh(scale=1.0):
    from dmrisim.mesh import FeMesh

    pts = scale * np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    tets = np.array([[0, 1, 2, 3]])
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return FeMesh(points=pts, tets=tets, tet_cmpt=np.zeros(1, np.int64), facets=faces,
                  facet_bdy=np.zeros(4, np.int64))


@pytest.fixture(scope="session")
def unit_cube():
    return mesh_box((1, 1, 1), 0.5)


@pytest.fixture(scope="session")
def slab_assembly():
    mesh = mesh_box((10, 0.5, 0.5), 0.5)
    return assemble(mesh, CompartmentModel.uniform(1, mesh.nboundary, SIGMA))


@pytest.fixture(scope="session")
def two_slab():
    """Two 5 µm slabs joined by a permeable membrane at x = 5."""
    mesh = mesh_box((10, 0.5, 0.5), 0.5, layers=[5, 5])
    model = CompartmentModel.uniform(2, mesh.nboundary, SIGMA, kappa=1e-4)
    return mesh, model, split_double_nodes(mesh, model)


@pytest.fixture(scope="session")
def small_cylinder():
    mesh = mesh_disk_stack([3.0], 2.0, 1.5)
    return assemble(mesh, CompartmentModel.uniform(1, mesh.nboundary, SIGMA))
