"""Geometric data model shared by the fitting, topology and evaluation code.

All containers are frozen dataclasses over read-only float64 arrays, so they
can be shared freely between worker threads.

Coordinates are in model units. The pipeline assumes input clouds have been
normalized so that their bounding box has unit diagonal (see
:func:`normalize_to_unit_diagonal`); every default tolerance in the package is
expressed relative to that convention.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np

MIN_CLUSTER_SIZE = 8
UNASSIGNED = -1


class GeometryError(ValueError):
    """Raised when input geometry violates a precondition."""


def _frozen(a, dtype=np.float64, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise GeometryError("cannot normalize a zero vector")
    return v / n


def canonical_direction(v) -> np.ndarray:
    """Flip ``v`` so that it points into the +z half space.

    Ties (z == 0) are broken toward +y, then +x, which makes normals and axes
    comparable between runs.
    """
    v = np.asarray(v, dtype=np.float64)
    for k in (2, 1, 0):
        if v[k] > 0.0:
            return v
        if v[k] < 0.0:
            return -v
    return v


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise GeometryError("empty cloud")
        bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
        if len(bad):
            raise GeometryError(f"non-finite coordinate at point {int(bad[0])}")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class SegmentedPointCloud:
    cloud: PointCloud
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (len(self.cloud),):
            raise GeometryError("labels must have one entry per point")
        object.__setattr__(self, "labels", _frozen(labels, dtype=np.int64))

    @property
    def n_clusters(self) -> int:
        valid = self.labels[self.labels >= 0]
        return int(valid.max()) + 1 if len(valid) else 0

    def cluster(self, k: int) -> PointCloud:
        return PointCloud(self.cloud.points[self.labels == k])

    def clusters(self) -> list[PointCloud]:
        return [self.cluster(k) for k in range(self.n_clusters)]


def validate_segmented_cloud(points, labels) -> SegmentedPointCloud:
    """Build a :class:`SegmentedPointCloud`, dropping clusters that are too small.

    Clusters with fewer than ``MIN_CLUSTER_SIZE`` members are removed and their
    points are marked ``UNASSIGNED`` (-1). Surviving labels are renumbered
    densely from zero in order of their original value.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise GeometryError("empty cloud")
    lab = np.asarray(labels)
    if lab.shape != (len(pts),):
        raise GeometryError(
            f"point and label arrays differ in length ({len(pts)} vs {lab.shape[0] if lab.ndim else 0})"
        )
    lab = lab.astype(np.int64)
    if (lab < 0).any():
        raise GeometryError("labels must be non-negative integers")
    cloud = PointCloud(pts)

    values, counts = np.unique(lab, return_counts=True)
    keep = values[counts >= MIN_CLUSTER_SIZE]
    if len(keep) == 0:
        raise GeometryError(f"no cluster has at least {MIN_CLUSTER_SIZE} points")
    remap = np.full(values.max() + 1, UNASSIGNED, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    return SegmentedPointCloud(cloud, remap[lab])


@dataclass(frozen=True)
class Normalization:
    """Affine map ``x_norm = (x - center) / scale`` applied on ingest."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, shape=(3,)))
        if not self.scale > 0:
            raise GeometryError("normalization scale must be positive")

    @classmethod
    def identity(cls) -> "Normalization":
        return cls(np.zeros(3), 1.0)

    def apply(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.center) / self.scale

    def invert(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) * self.scale + self.center


def normalize_to_unit_diagonal(points) -> Normalization:
    """Normalization that centers the bounding box and gives it unit diagonal."""
    pts = np.asarray(points, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    return Normalization((lo + hi) / 2.0, diag if diag > 0 else 1.0)


# --- analytic primitives ---------------------------------------------------


@dataclass(frozen=True)
class Plane:
    n: np.ndarray
    d: float

    def __post_init__(self):
        n = _frozen(self.n, shape=(3,))
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise GeometryError("plane normal must be unit length")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", float(self.d))


@dataclass(frozen=True)
class Sphere:
    c: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "c", _frozen(self.c, shape=(3,)))
        if not self.r > 0:
            raise GeometryError("sphere radius must be positive")
        object.__setattr__(self, "r", float(self.r))


@dataclass(frozen=True)
class Cylinder:
    a: np.ndarray
    c: np.ndarray
    r: float

    def __post_init__(self):
        a = _frozen(self.a, shape=(3,))
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise GeometryError("cylinder axis must be unit length")
        if not self.r > 0:
            raise GeometryError("cylinder radius must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", _frozen(self.c, shape=(3,)))
        object.__setattr__(self, "r", float(self.r))


@dataclass(frozen=True)
class Cone:
    v: np.ndarray
    a: np.ndarray
    theta: float

    def __post_init__(self):
        a = _frozen(self.a, shape=(3,))
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise GeometryError("cone axis must be unit length")
        if not 0.0 < self.theta < np.pi / 2:
            raise GeometryError("cone half-angle must lie in (0, pi/2)")
        object.__setattr__(self, "v", _frozen(self.v, shape=(3,)))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "theta", float(self.theta))


class SurfaceKind(str, enum.Enum):
    PLANE = "plane"
    SPHERE = "sphere"
    CYLINDER = "cylinder"
    CONE = "cone"
    FREEFORM = "freeform"


def _kind_of(params) -> SurfaceKind:
    # local import: FreeformSurface lives with the network code
    from .inr import FreeformSurface

    table = {
        Plane: SurfaceKind.PLANE,
        Sphere: SurfaceKind.SPHERE,
        Cylinder: SurfaceKind.CYLINDER,
        Cone: SurfaceKind.CONE,
        FreeformSurface: SurfaceKind.FREEFORM,
    }
    try:
        return table[type(params)]
    except KeyError:
        raise GeometryError(f"unsupported surface parameters {type(params).__name__}") from None


@dataclass(frozen=True)
class SurfaceModel:
    kind: SurfaceKind
    params: Any
    residual: float

    def __post_init__(self):
        kind = SurfaceKind(self.kind)
        if _kind_of(self.params) is not kind:
            raise GeometryError(f"{kind.value} model given {type(self.params).__name__} params")
        if not self.residual >= 0:
            raise GeometryError("residual must be non-negative")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "residual", float(self.residual))

    @classmethod
    def of(cls, params, residual: float) -> "SurfaceModel":
        return cls(_kind_of(params), params, residual)


# --- discrete carriers -----------------------------------------------------

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices)
        f = np.asarray(self.faces, dtype=np.int64)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.size == 0:
            v = _frozen(np.zeros((0, 3)))
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise GeometryError("mesh arrays must have shape (N, 3)")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", _frozen(f, dtype=np.int64))

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def compact(self) -> "TriangleMesh":
        """Drop degenerate faces and unreferenced vertices."""
        faces = self.faces[self.face_areas() > DEGENERATE_AREA]
        used, inverse = np.unique(faces, return_inverse=True)
        return TriangleMesh(self.vertices[used], inverse.reshape(-1, 3))


@dataclass(frozen=True)
class Polyline:
    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        v = _frozen(self.vertices)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 2:
            raise GeometryError("a polyline needs at least two 3D vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "closed", bool(self.closed))

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]

    def length(self) -> float:
        a, b = self.segments()
        return float(np.linalg.norm(b - a, axis=1).sum())


@dataclass(frozen=True)
class BRepModel:
    surfaces: tuple  # of (SurfaceModel, TriangleMesh)
    edges: tuple  # of Polyline
    corners: np.ndarray
    surface_edge_adjacency: np.ndarray
    edge_corner_adjacency: np.ndarray
    normalization: Normalization = field(default_factory=Normalization.identity)
    # (cluster index, message) for every cluster that failed somewhere in the pipeline
    failures: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "failures", tuple((int(k), str(m)) for k, m in self.failures))
        object.__setattr__(self, "edges", tuple(self.edges))
        corners = np.asarray(self.corners, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "corners", _frozen(corners))
        se = np.asarray(self.surface_edge_adjacency, dtype=bool).reshape(len(self.surfaces), len(self.edges))
        ec = np.asarray(self.edge_corner_adjacency, dtype=bool).reshape(len(self.edges), len(corners))
        if len(self.edges) and not (se.sum(axis=0) == 2).all():
            raise GeometryError("every edge must be adjacent to exactly two surfaces")
        if len(corners) and not (ec.sum(axis=0) >= 2).all():
            raise GeometryError("every corner must be adjacent to at least two edges")
        object.__setattr__(self, "surface_edge_adjacency", _frozen(se, dtype=bool))
        object.__setattr__(self, "edge_corner_adjacency", _frozen(ec, dtype=bool))

    @property
    def meshes(self) -> list[TriangleMesh]:
        return [m for _, m in self.surfaces]
