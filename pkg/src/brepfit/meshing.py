"""Finite, margin-extended triangle meshes of fitted surfaces.

Every surface is meshed on a regular grid of its own parameter domain. The
domain covers the supporting cluster plus a margin of width ``epsilon`` so
that neighbouring surfaces overlap and can be intersected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .mesh import grid_faces
from .primitives import _points
from .synthetic import orthonormal_frame
from .types import Cone, Cylinder, GeometryError, Plane, Sphere, SurfaceModel, TriangleMesh

# a cluster whose largest angular gap is below this is treated as a full ring
FULL_RING_GAP = np.pi / 6


@dataclass(frozen=True)
class TopologyConfig:
    epsilon: float = 0.03
    mesh_resolution: int = 120
    chain_tolerance: float = 1e-6
    corner_tolerance: float = 0.01
    component_keep_distance: float = 0.02
    # edge pieces farther than this (median) from a parent surface are dropped
    edge_keep_distance: float = 0.003
    # minimum share of cluster points that must land on a kept component
    component_min_support: float = 0.01

    def __post_init__(self):
        for name in ("epsilon", "chain_tolerance", "corner_tolerance", "component_keep_distance",
                     "edge_keep_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mesh_resolution < 2:
            raise ValueError("mesh_resolution must be at least 2")
        if not self.chain_tolerance < self.corner_tolerance:
            raise ValueError("chain_tolerance must be smaller than corner_tolerance")
        if not 0 <= self.component_min_support <= 1:
            raise ValueError("component_min_support must lie in [0, 1]")


def _grid(rows: np.ndarray, cols: np.ndarray, point, wrap_cols: bool, collapse=()) -> TriangleMesh:
    """Mesh ``point(r, c)`` over a grid; rows listed in ``collapse`` degenerate to one vertex."""
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    verts = point(rr.ravel(), cc.ravel())
    faces = grid_faces(len(rows), len(cols), wrap_cols=wrap_cols)
    if collapse:
        # weld every vertex of a degenerate row (a pole or apex) onto its first vertex
        remap = np.arange(len(verts))
        for r in collapse:
            remap[r * len(cols) : (r + 1) * len(cols)] = r * len(cols)
        faces = remap[faces]
        faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])]
    return TriangleMesh(verts, faces).compact()


def _min_area_rectangle(uv: np.ndarray):
    """Minimum-area enclosing rectangle of 2D points: (origin, axis0, axis1, extents)."""
    try:
        hull = uv[ConvexHull(uv).vertices]
    except (QhullError, ValueError):
        hull = uv
    best = None
    edges = np.roll(hull, -1, axis=0) - hull
    for e in edges:
        n = np.linalg.norm(e)
        if n == 0:
            continue
        d0 = e / n
        d1 = np.array([-d0[1], d0[0]])
        a, b = hull @ d0, hull @ d1
        area = (a.max() - a.min()) * (b.max() - b.min())
        if best is None or area < best[0] - 1e-15:
            best = (area, d0, d1, a.min(), a.max(), b.min(), b.max())
    if best is None:
        raise GeometryError("degenerate cluster")
    _, d0, d1, a0, a1, b0, b1 = best
    return d0, d1, (a0, a1), (b0, b1)


def _mesh_plane(pl: Plane, pts, cfg):
    e1, e2 = orthonormal_frame(pl.n)
    uv = np.column_stack([pts @ e1, pts @ e2])
    d0, d1, (a0, a1), (b0, b1) = _min_area_rectangle(uv)
    ax0 = d0[0] * e1 + d0[1] * e2
    ax1 = d1[0] * e1 + d1[1] * e2
    eps, res = cfg.epsilon, cfg.mesh_resolution
    rows = np.linspace(a0 - eps, a1 + eps, res)
    cols = np.linspace(b0 - eps, b1 + eps, res)
    base = pl.d * pl.n
    return _grid(rows, cols, lambda r, c: base + r[:, None] * ax0 + c[:, None] * ax1, False)


def _angular_range(phi: np.ndarray, margin: float):
    """Angle interval covering ``phi`` plus ``margin`` each side, or None for a full ring."""
    s = np.sort(np.mod(phi, 2 * np.pi))
    gaps = np.diff(np.concatenate([s, [s[0] + 2 * np.pi]]))
    k = int(np.argmax(gaps))
    if gaps[k] < FULL_RING_GAP or gaps[k] <= 2 * margin:
        return None
    start = s[(k + 1) % len(s)]
    span = 2 * np.pi - gaps[k]
    return start - margin, start + span + margin


def _ring_cols(phi_range, res):
    if phi_range is None:
        return 2 * np.pi * np.arange(res) / res, True
    return np.linspace(phi_range[0], phi_range[1], res), False


def _mesh_cylinder(cyl: Cylinder, pts, cfg):
    e1, e2 = orthonormal_frame(cyl.a)
    d = pts - cyl.c
    t = d @ cyl.a
    phi = np.arctan2(d @ e2, d @ e1)
    eps, res = cfg.epsilon, cfg.mesh_resolution
    cols, wrap = _ring_cols(_angular_range(phi, eps / cyl.r), res)
    rows = np.linspace(t.min() - eps, t.max() + eps, res)

    def point(h, ang):
        return cyl.c + h[:, None] * cyl.a + cyl.r * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)

    return _grid(rows, cols, point, wrap)


def _mesh_cone(cone: Cone, pts, cfg):
    e1, e2 = orthonormal_frame(cone.a)
    d = pts - cone.v
    t = d @ cone.a
    phi = np.arctan2(d @ e2, d @ e1)
    eps, res = cfg.epsilon, cfg.mesh_resolution
    tan = np.tan(cone.theta)
    # arc-length margin measured at the mean radius of the cluster
    mean_rho = max(float(np.mean(np.abs(t))) * tan, eps)
    cols, wrap = _ring_cols(_angular_range(phi, eps / mean_rho), res)
    dt = eps * np.cos(cone.theta)  # slant margin eps projected on the axis
    lo = max(t.min() - dt, 0.0)
    rows = np.linspace(lo, max(t.max(), 0.0) + dt, res)

    def point(h, ang):
        rho = h * tan
        return cone.v + h[:, None] * cone.a + rho[:, None] * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)

    return _grid(rows, cols, point, wrap, collapse=(0,) if lo == 0.0 else ())


def _mesh_sphere(sph: Sphere, pts, cfg):
    d = pts - sph.c
    dirs = d / np.linalg.norm(d, axis=1, keepdims=True)
    m = dirs.mean(axis=0)
    if np.linalg.norm(m) < 1e-9:
        m = np.array([0.0, 0.0, 1.0])
    m = m / np.linalg.norm(m)
    cap = float(np.arccos(np.clip(dirs @ m, -1.0, 1.0)).max()) + cfg.epsilon / sph.r
    cap = min(cap, np.pi)
    e1, e2 = orthonormal_frame(m)
    res = cfg.mesh_resolution
    rows = np.linspace(0.0, cap, res)
    cols = 2 * np.pi * np.arange(res) / res

    def point(a, ang):
        s = np.sin(a)
        return sph.c + sph.r * (np.cos(a)[:, None] * m + (s * np.cos(ang))[:, None] * e1 + (s * np.sin(ang))[:, None] * e2)

    collapse = (0, res - 1) if cap >= np.pi else (0,)
    return _grid(rows, cols, point, True, collapse)


def mesh_surface(model: SurfaceModel, cluster, cfg: TopologyConfig = TopologyConfig()) -> TriangleMesh:
    """Triangle mesh of ``model`` over the cluster's parameter footprint plus the margin."""
    pts = _points(cluster)
    p = model.params if isinstance(model, SurfaceModel) else model
    if isinstance(p, Plane):
        return _mesh_plane(p, pts, cfg)
    if isinstance(p, Sphere):
        return _mesh_sphere(p, pts, cfg)
    if isinstance(p, Cylinder):
        return _mesh_cylinder(p, pts, cfg)
    if isinstance(p, Cone):
        return _mesh_cone(p, pts, cfg)
    from .inr import FreeformSurface

    if isinstance(p, FreeformSurface):
        return p.sample_extended_grid(cfg.mesh_resolution).compact()
    raise TypeError(f"cannot mesh {type(p).__name__}")
