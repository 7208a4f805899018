import numpy as np
import pytest

from brepfit import synthetic as S
from brepfit.mesh import MeshIndex, grid_faces
from brepfit.meshing import TopologyConfig
from brepfit.topology import closest_points_between_segments, intersect_edges, reconstruct, trim_edges_by_corners
from brepfit.types import Plane, Polyline, TriangleMesh, validate_segmented_cloud


def _line(p, q, n=2):
    t = np.linspace(0, 1, n)[:, None]
    return Polyline(np.asarray(p, float) * (1 - t) + np.asarray(q, float) * t)


def _unit_square_mesh(axis, side, res=5):
    s = np.linspace(0, 1, res)
    u, v = np.meshgrid(s, s, indexing="ij")
    verts = np.zeros((res * res, 3))
    others = [i for i in range(3) if i != axis]
    verts[:, axis] = side
    verts[:, others[0]] = u.ravel()
    verts[:, others[1]] = v.ravel()
    return TriangleMesh(verts, grid_faces(res, res))


# --- closest points: brute-force oracle -----------------------------------

def test_closest_points_match_dense_search(rng):
    p0, p1, q0, q1 = (rng.normal(size=(30, 3)) for _ in range(4))
    x, y = closest_points_between_segments(p0, p1, q0, q1)
    got = np.linalg.norm(x - y, axis=1)
    t = np.linspace(0, 1, 401)
    for k in range(30):
        a = p0[k] + t[:, None] * (p1[k] - p0[k])
        b = q0[k] + t[:, None] * (q1[k] - q0[k])
        brute = np.linalg.norm(a[:, None] - b[None], axis=2).min()
        assert got[k] <= brute + 1e-12
        assert got[k] >= brute - 0.02


def test_closest_points_parallel_and_degenerate():
    p0, p1 = np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])
    x, y = closest_points_between_segments(p0, p1, p0 + [0, 0.1, 0], p1 + [0, 0.1, 0])
    assert np.linalg.norm(x - y) == pytest.approx(0.1)
    x, y = closest_points_between_segments(p0, p0, p0 + [0, 1, 0], p0 + [0, 1, 0])
    assert np.linalg.norm(x - y) == pytest.approx(1.0)


# --- corners ----------------------------------------------------------------

def test_crossing_lines_corner_at_origin():
    corners, adj = intersect_edges([_line([-1, 0, 0], [1, 0, 0], 4), _line([0, -1, 0], [0, 1, 0], 5)])
    assert corners.shape == (1, 3) and np.abs(corners[0]).max() < 1e-9
    assert adj.tolist() == [[True], [True]]


def test_parallel_lines_no_corner():
    corners, adj = intersect_edges([_line([0, 0, 0], [1, 0, 0]), _line([0, 0.1, 0], [1, 0.1, 0])])
    assert corners.shape == (0, 3) and adj.shape == (2, 0)


def test_cube_edges_give_eight_corners():
    v = S.cube_vertices()
    edges = []
    for i in range(8):
        for j in range(i + 1, 8):
            if np.abs(v[i] - v[j]).sum() == 1:
                d = v[j] - v[i]
                edges.append(_line(v[i] - 0.05 * d, v[j] + 0.05 * d, 6))
    assert len(edges) == 12
    corners, adj = intersect_edges(edges)
    assert len(corners) == 8
    assert np.all(adj.sum(axis=0) == 3)
    d = np.linalg.norm(corners[:, None] - v[None], axis=2).min(axis=1)
    assert d.max() < 1e-9


# --- edge trimming ------------------------------------------------------------

def test_overhangs_dropped_middle_kept():
    meshes = {0: _unit_square_mesh(2, 0.0), 1: _unit_square_mesh(1, 0.0)}
    edge = _line([-0.03, 0, 0], [1.03, 0, 0], 9)
    corners = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    adj = np.ones((1, 2), dtype=bool)
    edges, parents, c, a = trim_edges_by_corners([edge], [(0, 1)], corners, adj, meshes)
    assert len(edges) == 1 and parents == [(0, 1)]
    v = edges[0].vertices
    assert v[0] == pytest.approx([0, 0, 0]) and v[-1] == pytest.approx([1, 0, 0])
    # corners at the free ends of the kept piece lose their second edge but stay attached
    assert a.shape == (1, len(c))


def test_closed_edge_without_corners_kept_whole():
    phi = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    ring = Polyline(np.column_stack([0.5 * np.cos(phi), 0.5 * np.sin(phi), np.zeros(40)]), closed=True)
    rr, pp = np.meshgrid(np.linspace(0, 0.6, 7), phi, indexing="ij")
    disk = TriangleMesh(np.column_stack([(rr * np.cos(pp)).ravel(), (rr * np.sin(pp)).ravel(), np.zeros(rr.size)]),
                        grid_faces(7, 40, wrap_cols=True))
    edges, _, c, _ = trim_edges_by_corners([ring], [(0, 1)], np.zeros((0, 3)), np.zeros((1, 0), bool),
                                           {0: disk, 1: disk})
    assert len(edges) == 1 and edges[0].closed and len(edges[0].vertices) == 40 and len(c) == 0


def test_far_edge_dropped():
    meshes = {0: _unit_square_mesh(2, 0.0), 1: _unit_square_mesh(1, 0.0)}
    far = _line([0, 0, 5], [1, 0, 5])
    edges, parents, c, a = trim_edges_by_corners([far], [(0, 1)], np.zeros((0, 3)), np.zeros((1, 0), bool), meshes)
    assert edges == [] and len(c) == 0


# --- reconstruct ---------------------------------------------------------------

def test_cube_topology(cube_model):
    m = cube_model
    assert (len(m.surfaces), len(m.edges), len(m.corners)) == (6, 12, 8)
    assert all(s.kind.value == "plane" for s, _ in m.surfaces)
    d = np.linalg.norm(m.corners[:, None] - S.cube_vertices()[None], axis=2).min(axis=1)
    assert d.max() < 1e-6
    assert np.all(m.edge_corner_adjacency.sum(axis=1) == 2)
    assert np.all(m.edge_corner_adjacency.sum(axis=0) == 3)
    assert m.failures == ()


def test_edges_lie_on_both_parents(cube_model, capped_cylinder_model):
    cfg = TopologyConfig()
    for m in (cube_model, capped_cylinder_model):
        idx = [MeshIndex(mesh) for mesh in m.meshes]
        assert np.all(m.surface_edge_adjacency.sum(axis=0) == 2)
        for e, pl in enumerate(m.edges):
            for s in np.flatnonzero(m.surface_edge_adjacency[:, e]):
                assert idx[s].distance(pl.vertices).max() <= 2 * cfg.chain_tolerance


def test_corners_near_their_edges(cube_model):
    cfg = TopologyConfig()
    for c, corner in enumerate(cube_model.corners):
        for e in np.flatnonzero(cube_model.edge_corner_adjacency[:, c]):
            v = cube_model.edges[e].vertices
            assert np.linalg.norm(v - corner, axis=1).min() <= cfg.corner_tolerance


def test_capped_cylinder_topology(capped_cylinder_model):
    m = capped_cylinder_model
    kinds = sorted(s.kind.value for s, _ in m.surfaces)
    assert kinds == ["cylinder", "plane", "plane"]
    assert len(m.edges) == 2 and all(e.closed for e in m.edges) and len(m.corners) == 0
    res = TopologyConfig().mesh_resolution
    for e in m.edges:
        r = np.linalg.norm(e.vertices[:, :2], axis=1)
        assert np.abs(r - 0.5).max() < 2 * np.pi * 0.5 / res


def test_single_cluster_no_edges():
    pts = S.sample_plane(Plane([0, 0, 1], 0.0), 300, 0)
    m = reconstruct(validate_segmented_cloud(pts, np.zeros(300, dtype=np.int64)))
    assert (len(m.surfaces), len(m.edges), len(m.corners)) == (1, 0, 0)


def test_failed_cluster_recorded(monkeypatch):
    import brepfit.topology as T

    pts, labels = S.cube_clusters(500, 0)
    real = T.fit_best_surface
    target = pts[labels == 5]

    def flaky(cluster, *a):
        if len(cluster) == len(target) and np.array_equal(cluster, target):
            raise T.GeometryError("synthetic failure")
        return real(cluster, *a)

    monkeypatch.setattr(T, "fit_best_surface", flaky)
    m = reconstruct(validate_segmented_cloud(pts, labels))
    assert len(m.surfaces) == 5
    assert m.failures == ((5, "fit: GeometryError: synthetic failure"),)
    assert m.surface_edge_adjacency.shape == (5, len(m.edges))


def test_trim_failure_keeps_untrimmed_mesh(monkeypatch):
    import brepfit.topology as T

    def broken(*a, **k):
        raise T.GeometryError("surface unsupported by points")

    monkeypatch.setattr(T, "trim_surface_by_edges", broken)
    pts, labels = S.cube_clusters(500, 0)
    m = reconstruct(validate_segmented_cloud(pts, labels))
    assert len(m.surfaces) == 6 and [k for k, _ in m.failures] == list(range(6))
    # untrimmed meshes keep their margin
    lo, hi = m.meshes[0].bounds()
    assert (hi - lo).max() > 1.05
