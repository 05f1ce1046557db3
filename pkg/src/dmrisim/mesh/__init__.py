"""Finite element meshes: construction, codecs, labelling and deformation."""
from .builders import mesh_canonical, mesh_box, mesh_cells, mesh_disk_stack, mesh_layered_sphere
from .femesh import (CompartmentModel, FeMesh, MeshQuality, canonical_model,
                     deform_bend_twist, measure, mesh_quality, split_double_nodes)
from .io import (export_tetgen, import_tetgen, invoke_external_mesher, read_ply, read_tetgen,
                 write_ply, write_poly)

__all__ = [
    "CompartmentModel", "FeMesh", "MeshQuality", "canonical_model", "deform_bend_twist",
    "export_tetgen", "import_tetgen", "invoke_external_mesher", "measure", "mesh_box",
    "mesh_canonical", "mesh_cells", "mesh_disk_stack", "mesh_layered_sphere",
    "mesh_quality", "read_ply", "read_tetgen", "split_double_nodes", "write_ply", "write_poly",
]
