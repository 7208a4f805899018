"""Discrete geometry helpers: closest-point queries and sampling on meshes and polylines."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .types import Polyline, TriangleMesh


def closest_points_on_triangles(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest point on each triangle ``tri[i]`` to ``p[i]`` (Voronoi-region method).

    ``p`` has shape (N, 3) and ``tri`` (N, 3, 3).
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def put(mask, value):
        m = mask & ~done
        out[m] = value[m] if np.ndim(value) == 2 else value
        done[m] = True

    put((d1 <= 0) & (d2 <= 0), a)
    put((d3 >= 0) & (d4 <= d3), b)
    put((d6 >= 0) & (d5 <= d6), c)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        put(np.ones(len(p), dtype=bool), a + ab * v[:, None] + ac * w[:, None])
    return out


def closest_points_on_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Closest points on segments ``a[i]b[i]`` to ``p[i]``; also returns the parameter."""
    ab = b - a
    den = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(den > 0, np.einsum("ij,ij->i", p - a, ab) / den, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[:, None] * ab, t


class _PrimitiveIndex:
    """Exact nearest-primitive search over small simplices using a centroid KD-tree.

    A candidate set from the ``k`` nearest centroids is verified with the bound
    ``d_true <= d_k - radius``; unverified queries fall back to a ball search.
    """

    k = 16

    def __init__(self, centers: np.ndarray, radius: float):
        self.centers = centers
        self.radius = float(radius)
        self.tree = cKDTree(centers)

    def _closest(self, p: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def query(self, points, chunk: int = 20000):
        """Return (distance, primitive index, closest point) for every query point."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(pts)
        dist = np.empty(n)
        prim = np.empty(n, dtype=np.int64)
        closest = np.empty((n, 3))
        k = min(self.k, len(self.centers))
        for s in range(0, n, chunk):
            q = pts[s : s + chunk]
            cd, ci = self.tree.query(q, k=k)
            cd = cd.reshape(len(q), k)
            ci = ci.reshape(len(q), k)
            cand = self._closest(np.repeat(q, k, axis=0), ci.ravel()).reshape(len(q), k, 3)
            d = np.linalg.norm(cand - q[:, None, :], axis=2)
            j = np.argmin(d, axis=1)
            rows = np.arange(len(q))
            bd, bi, bc = d[rows, j], ci[rows, j], cand[rows, j]
            if k < len(self.centers):
                unsure = np.flatnonzero(bd > cd[:, -1] - self.radius)
                for u in unsure:
                    ids = np.asarray(self.tree.query_ball_point(q[u], bd[u] + self.radius), dtype=np.int64)
                    if len(ids) == 0:
                        continue
                    cc = self._closest(np.repeat(q[u : u + 1], len(ids), axis=0), ids)
                    dd = np.linalg.norm(cc - q[u], axis=1)
                    m = int(np.argmin(dd))
                    if dd[m] < bd[u]:
                        bd[u], bi[u], bc[u] = dd[m], ids[m], cc[m]
            dist[s : s + chunk] = bd
            prim[s : s + chunk] = bi
            closest[s : s + chunk] = bc
        return dist, prim, closest

    def distance(self, points) -> np.ndarray:
        return self.query(points)[0]


class MeshIndex(_PrimitiveIndex):
    def __init__(self, mesh: TriangleMesh):
        if len(mesh.faces) == 0:
            raise ValueError("cannot index an empty mesh")
        self.tris = mesh.triangles
        centers = self.tris.mean(axis=1)
        radius = np.linalg.norm(self.tris - centers[:, None, :], axis=2).max()
        super().__init__(centers, radius)

    def _closest(self, p, idx):
        return closest_points_on_triangles(p, self.tris[idx])


class SegmentIndex(_PrimitiveIndex):
    def __init__(self, a: np.ndarray, b: np.ndarray):
        if len(a) == 0:
            raise ValueError("cannot index an empty segment set")
        self.a, self.b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        centers = (self.a + self.b) / 2.0
        radius = np.linalg.norm(self.b - self.a, axis=1).max() / 2.0
        super().__init__(centers, radius)

    @classmethod
    def from_polylines(cls, polylines) -> "SegmentIndex":
        segs = [pl.segments() for pl in polylines]
        return cls(np.concatenate([s[0] for s in segs]), np.concatenate([s[1] for s in segs]))

    def _closest(self, p, idx):
        return closest_points_on_segments(p, self.a[idx], self.b[idx])[0]


def merge_meshes(meshes) -> TriangleMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def sample_mesh(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on a triangle mesh."""
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("cannot sample a mesh with zero area")
    f = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    t = mesh.triangles[f]
    return (1 - s)[:, None] * t[:, 0] + (s * (1 - r2))[:, None] * t[:, 1] + (s * r2)[:, None] * t[:, 2]


def sample_polyline(pl: Polyline, n: int, rng: np.random.Generator) -> np.ndarray:
    """Length-weighted uniform samples on a polyline."""
    a, b = pl.segments()
    lengths = np.linalg.norm(b - a, axis=1)
    s = rng.choice(len(lengths), size=n, p=lengths / lengths.sum())
    t = rng.random(n)[:, None]
    return a[s] + t * (b[s] - a[s])


def grid_faces(rows: int, cols: int, wrap_cols: bool = False, wrap_rows: bool = False) -> np.ndarray:
    """Two triangles per cell of a ``rows x cols`` vertex grid indexed ``i * cols + j``.

    With ``wrap_cols`` the last column connects back to the first (seam-welded
    grid); likewise for ``wrap_rows``.
    """
    ci = cols if wrap_cols else cols - 1
    ri = rows if wrap_rows else rows - 1
    i, j = np.meshgrid(np.arange(ri), np.arange(ci), indexing="ij")
    i, j = i.ravel(), j.ravel()
    i1, j1 = (i + 1) % rows, (j + 1) % cols
    v00 = i * cols + j
    v01 = i * cols + j1
    v10 = i1 * cols + j
    v11 = i1 * cols + j1
    return np.concatenate([np.stack([v00, v01, v11], 1), np.stack([v00, v11, v10], 1)])
