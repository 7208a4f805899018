"""Reconstruct boundary-representation CAD models from segmented point clouds.

Each cluster of a segmented cloud is fitted with the simplest adequate
surface: a plane, sphere, cylinder or cone, or a freeform neural surface when
no primitive explains it. The surfaces are then intersected and trimmed
against each other to recover edges and corners.
"""

from .inr import FreeformSurface, InrConfig, TopologyRouting, fit_inr, fit_inr_auto
from .io import export_brep, load_brep, load_segmented_xyz
from .meshing import TopologyConfig, mesh_surface
from .metrics import EvalConfig, chamfer, evaluate, hungarian_match, p_coverage, prf, residual_error
from .primitives import fit_cone, fit_cylinder, fit_plane, fit_sphere
from .select import SelectionConfig, fit_best_surface, select_model
from .topology import intersect_edges, reconstruct, trim_edges_by_corners
from .types import (BRepModel, Cone, Cylinder, GeometryError, Normalization, Plane, PointCloud, Polyline,
                    SegmentedPointCloud, Sphere, SurfaceKind, SurfaceModel, TriangleMesh)

__version__ = "0.1.0"

__all__ = [
    "BRepModel", "Cone", "Cylinder", "EvalConfig", "FreeformSurface", "GeometryError", "InrConfig", "Normalization",
    "Plane", "PointCloud", "Polyline", "SegmentedPointCloud", "SelectionConfig", "Sphere", "SurfaceKind",
    "SurfaceModel", "TopologyConfig", "TopologyRouting", "TriangleMesh", "chamfer", "evaluate", "export_brep",
    "fit_best_surface", "fit_cone", "fit_cylinder", "fit_inr", "fit_inr_auto", "fit_plane", "fit_sphere",
    "hungarian_match", "intersect_edges", "load_brep", "load_segmented_xyz", "mesh_surface", "p_coverage", "prf",
    "reconstruct", "residual_error", "select_model", "trim_edges_by_corners",
]
