"""Triangle-mesh intersection curves and polyline chaining.

Two triangles intersect along a segment of the line shared by their planes.
Each triangle clips that line to where its edges cross the other plane; the
overlap of the two clipped intervals is the intersection segment. Crossing
points are computed from the crossing edge with its endpoints in canonical
(lower vertex index first) order, so a crossing shared by neighbouring
triangle pairs is bit-identical and chaining joins it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .types import Polyline, TriangleMesh


@dataclass(frozen=True)
class _Planes:
    n: np.ndarray  # (F, 3) unnormalized normals
    d: np.ndarray  # (F,) offsets, n . x = d on the plane

    @classmethod
    def of(cls, mesh: TriangleMesh) -> "_Planes":
        t = mesh.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return cls(n, np.einsum("ij,ij->i", n, t[:, 0]))


_EDGES = ((0, 1), (1, 2), (2, 0))


def _crossings(mesh: TriangleMesh, fa: np.ndarray, pn: np.ndarray, pd: np.ndarray):
    """Where the edges of faces ``fa`` of ``mesh`` meet planes ``(pn, pd)``.

    Returns per pair up to two points (NaN when absent) plus a validity mask;
    pairs whose face is strictly on one side, or lies in the plane, are invalid.
    """
    f = mesh.faces[fa]
    v = mesh.vertices
    s = np.einsum("pkj,pj->pk", v[f], pn) - pd[:, None]
    pos, neg = s > 0, s < 0
    straddle = pos.any(axis=1) & neg.any(axis=1)
    touch = (s == 0).any(axis=1) & ~(s == 0).all(axis=1)
    valid = straddle | touch
    pts = np.full((len(fa), 2, 3), np.nan)
    count = np.zeros(len(fa), dtype=np.int64)
    rows = np.arange(len(fa))
    # vertices exactly on the plane
    for k in range(3):
        m = valid & (s[:, k] == 0) & (count < 2)
        pts[rows[m], count[m]] = v[f[m, k]]
        count[m] += 1
    for i, j in _EDGES:
        m = valid & (((s[:, i] > 0) & (s[:, j] < 0)) | ((s[:, i] < 0) & (s[:, j] > 0))) & (count < 2)
        if not m.any():
            continue
        vi, vj = f[m, i], f[m, j]
        si, sj = s[m, i], s[m, j]
        # canonical orientation: from the lower to the higher vertex index
        swap = vi > vj
        va = np.where(swap, vj, vi)
        vb = np.where(swap, vi, vj)
        sa = np.where(swap, sj, si)
        sb = np.where(swap, si, sj)
        t = sa / (sa - sb)
        pts[rows[m], count[m]] = v[va] + t[:, None] * (v[vb] - v[va])
        count[m] += 1
    valid &= count == 2
    return pts, valid


def _candidate_pairs(a: TriangleMesh, b: TriangleMesh):
    ta, tb = a.triangles, b.triangles
    amin, amax = ta.min(axis=1), ta.max(axis=1)
    bmin, bmax = tb.min(axis=1), tb.max(axis=1)
    lo = np.maximum(amin.min(axis=0), bmin.min(axis=0))
    hi = np.minimum(amax.max(axis=0), bmax.max(axis=0))
    none = np.zeros(0, dtype=np.int64)
    if np.any(lo > hi):
        return none, none
    # restrict both sides to faces touching the common bounding box
    ia = np.flatnonzero(np.all(amax >= lo, axis=1) & np.all(amin <= hi, axis=1))
    ib = np.flatnonzero(np.all(bmax >= lo, axis=1) & np.all(bmin <= hi, axis=1))
    if len(ia) == 0 or len(ib) == 0:
        return none, none
    ca, cb = ta[ia].mean(axis=1), tb[ib].mean(axis=1)
    ra = np.linalg.norm(ta[ia] - ca[:, None], axis=2).max(axis=1)
    rb = np.linalg.norm(tb[ib] - cb[:, None], axis=2).max(axis=1)
    sdm = cKDTree(ca).sparse_distance_matrix(cKDTree(cb), ra.max() + rb.max(), output_type="coo_matrix")
    close = sdm.data <= ra[sdm.row] + rb[sdm.col]
    pa, pb = ia[sdm.row[close]], ib[sdm.col[close]]
    order = np.lexsort((pb, pa))
    return pa[order], pb[order]


def intersection_segments(a: TriangleMesh, b: TriangleMesh):
    """All triangle-triangle intersection segments: (start (S, 3), end (S, 3), face in a, face in b)."""
    empty = (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    if len(a.faces) == 0 or len(b.faces) == 0:
        return empty
    fa, fb = _candidate_pairs(a, b)
    if len(fa) == 0:
        return empty
    pa, pb = _Planes.of(a), _Planes.of(b)
    xa, va = _crossings(a, fa, pb.n[fb], pb.d[fb])
    xb, vb = _crossings(b, fb, pa.n[fa], pa.d[fa])
    ok = va & vb
    fa, fb, xa, xb = fa[ok], fb[ok], xa[ok], xb[ok]
    if len(fa) == 0:
        return empty
    line = np.cross(pa.n[fa], pb.n[fb])
    ta = np.einsum("pkj,pj->pk", xa, line)
    tb = np.einsum("pkj,pj->pk", xb, line)
    # order each interval along the line direction
    sa = ta[:, 0] > ta[:, 1]
    xa[sa] = xa[sa][:, ::-1]
    ta[sa] = ta[sa][:, ::-1]
    sb = tb[:, 0] > tb[:, 1]
    xb[sb] = xb[sb][:, ::-1]
    tb[sb] = tb[sb][:, ::-1]
    # overlap [max(lo), min(hi)], taking the actual crossing point that bounds it
    lo_a = ta[:, 0] >= tb[:, 0]
    hi_a = ta[:, 1] <= tb[:, 1]
    start = np.where(lo_a[:, None], xa[:, 0], xb[:, 0])
    end = np.where(hi_a[:, None], xa[:, 1], xb[:, 1])
    t0 = np.maximum(ta[:, 0], tb[:, 0])
    t1 = np.minimum(ta[:, 1], tb[:, 1])
    keep = t1 > t0
    return start[keep], end[keep], fa[keep], fb[keep]


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, i):
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # keep the smaller index as representative for determinism
            if rj < ri:
                ri, rj = rj, ri
            self.parent[rj] = ri


def merge_close_points(points: np.ndarray, tol: float) -> np.ndarray:
    """Label points so that points within ``tol`` (transitively) share the label of the lowest index."""
    n = len(points)
    uf = _UnionFind(n)
    if n > 1:
        for i, j in sorted(cKDTree(points).query_pairs(tol)):
            uf.union(i, j)
    return np.array([uf.find(i) for i in range(n)], dtype=np.int64)


def chain_segments(start: np.ndarray, end: np.ndarray, tol: float) -> list[Polyline]:
    """Join segments whose endpoints lie within ``tol`` into maximal polylines.

    Chains break at branch points (vertices of degree other than two). Cyclic
    chains come back as closed polylines.
    """
    if len(start) == 0:
        return []
    pts = np.concatenate([start, end])
    label = merge_close_points(pts, tol)
    ns = len(start)
    u, w = label[:ns], label[ns:]
    keep = u != w
    u, w = u[keep], w[keep]
    if len(u) == 0:
        return []
    # undirected simple graph over representative vertices
    e = np.unique(np.sort(np.stack([u, w], 1), axis=1), axis=0)
    adj: dict[int, list[int]] = {}
    for x, y in e:
        adj.setdefault(int(x), []).append(int(y))
        adj.setdefault(int(y), []).append(int(x))
    for k in adj:
        adj[k].sort()
    used = set()

    def walk(a, b):
        path = [a, b]
        used.add((min(a, b), max(a, b)))
        while len(adj[b]) == 2:
            nxt = adj[b][0] if adj[b][0] != a else adj[b][1]
            key = (min(b, nxt), max(b, nxt))
            if key in used:
                break
            used.add(key)
            a, b = b, nxt
            path.append(b)
        return path

    out = []
    for v in sorted(adj):
        if len(adj[v]) == 2:
            continue
        for nb in adj[v]:
            if (min(v, nb), max(v, nb)) not in used:
                out.append(walk(v, nb))
    # what is left are cycles of degree-2 vertices
    for v in sorted(adj):
        for nb in adj[v]:
            if (min(v, nb), max(v, nb)) not in used:
                path = walk(v, nb)
                out.append(path)
    lines = []
    for path in out:
        closed = len(path) > 3 and path[0] == path[-1]
        if closed:
            path = path[:-1]
        lines.append(Polyline(pts[path], closed=closed))
    return lines


def intersect_meshes(a: TriangleMesh, b: TriangleMesh, cfg=None) -> list[Polyline]:
    """Intersection curves of two meshes as maximal polylines (closed loops flagged)."""
    from .meshing import TopologyConfig

    cfg = cfg or TopologyConfig()
    s, e, _, _ = intersection_segments(a, b)
    return chain_segments(s, e, cfg.chain_tolerance)


def mesh_components(n_faces: int, edge_faces: tuple) -> np.ndarray:
    """Connected-component label per face given (face_i, face_j) adjacency arrays."""
    i, j = edge_faces
    g = coo_matrix((np.ones(len(i)), (i, j)), shape=(n_faces, n_faces))
    return connected_components(g, directed=False)[1]
