import numpy as np
import pytest

from brepfit import synthetic as S
from brepfit.inr import InrConfig, TopologyRouting, fit_inr
from brepfit.mesh import MeshIndex
from brepfit.meshing import TopologyConfig, mesh_surface
from brepfit.primitives import distances, fit_cone, fit_cylinder, fit_plane, fit_sphere
from brepfit.types import Cone, Cylinder, Plane, Sphere, SurfaceModel, TriangleMesh


def _boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    e = np.sort(mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]


def test_plane_square_extent():
    pts = np.array([[x, y, 0.0] for x in np.linspace(0, 1, 11) for y in np.linspace(0, 1, 11)])
    cfg = TopologyConfig(epsilon=0.03)
    mesh = mesh_surface(fit_plane(pts).model, pts, cfg)
    lo, hi = mesh.bounds()
    cell = 1.06 / (cfg.mesh_resolution - 1)
    assert np.allclose(hi[:2] - lo[:2], 1.06, atol=cell)
    assert np.allclose(mesh.vertices[:, 2], 0.0, atol=1e-12)


def test_full_ring_cylinder_welded():
    cyl = Cylinder([0, 0, 1], [0, 0, 0], 0.5)
    pts = S.sample_cylinder(cyl, 2000, 0)
    mesh = mesh_surface(SurfaceModel.of(cyl, 0.0), pts)
    b = _boundary_edges(mesh)
    # only the two rims are open
    z = mesh.vertices[b].reshape(-1, 3)[:, 2]
    assert np.allclose(np.abs(z), 0.5 + TopologyConfig().epsilon, atol=1e-3)
    assert len(b) == 2 * TopologyConfig().mesh_resolution


def test_partial_arc_cylinder_stays_open():
    cyl = Cylinder([0, 0, 1], [0, 0, 0], 0.5)
    pts = S.sample_cylinder(cyl, 2000, 0, arc=np.pi)
    mesh = mesh_surface(SurfaceModel.of(cyl, 0.0), pts)
    res = TopologyConfig().mesh_resolution
    assert len(_boundary_edges(mesh)) == 4 * (res - 1)


@pytest.mark.parametrize("kind", ["plane", "sphere", "cylinder", "cone"])
def test_vertices_on_surface_and_cluster_covered(kind):
    cfg = TopologyConfig()
    if kind == "plane":
        pts = S.sample_plane(Plane(np.array([1, 1, 0]) / np.sqrt(2), 0.2), 1500, 1)
        fit = fit_plane
    elif kind == "sphere":
        pts = S.sample_sphere(Sphere([0, 0, 0], 0.6), 1500, 1, max_polar=1.0)
        fit = fit_sphere
    elif kind == "cylinder":
        pts = S.sample_cylinder(Cylinder([0, 1, 0], [0, 0, 0], 0.4), 1500, 1, arc=4.0)
        fit = fit_cylinder
    else:
        pts = S.sample_cone(Cone([0, 0, 0], [0, 0, 1], 0.5), 1500, 1)
        fit = fit_cone
    model = fit(pts).model
    mesh = mesh_surface(model, pts, cfg)
    assert np.abs(distances(model.params, mesh.vertices)).max() < 1e-9
    # every cluster point is covered, up to chordal error
    assert MeshIndex(mesh).distance(pts).max() < cfg.epsilon


def test_sphere_cap_margin():
    sph = Sphere([0, 0, 0], 1.0)
    pts = S.sample_sphere(sph, 3000, 2, max_polar=0.5)
    mesh = mesh_surface(SurfaceModel.of(sph, 0.0), pts, TopologyConfig(epsilon=0.05))
    polar = np.arccos(np.clip(mesh.vertices[:, 2], -1, 1))
    cluster_polar = np.arccos(np.clip(pts[:, 2], -1, 1)).max()
    assert polar.max() == pytest.approx(cluster_polar + 0.05, abs=0.02)


def test_freeform_uses_extended_grid():
    pts = S.sample_heightfield(400, 0)
    surf = fit_inr(pts, TopologyRouting(), InrConfig(steps=200, warmup_steps=20))
    cfg = TopologyConfig(mesh_resolution=30)
    mesh = mesh_surface(SurfaceModel.of(surf, 0.0), pts, cfg)
    ref = surf.sample_extended_grid(30).compact()
    assert np.array_equal(mesh.vertices, ref.vertices) and np.array_equal(mesh.faces, ref.faces)


def test_config_validation():
    with pytest.raises(ValueError):
        TopologyConfig(epsilon=0)
    with pytest.raises(ValueError):
        TopologyConfig(chain_tolerance=0.1, corner_tolerance=0.01)
    with pytest.raises(ValueError):
        TopologyConfig(mesh_resolution=1)
