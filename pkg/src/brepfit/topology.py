"""End-to-end B-rep assembly: surfaces, edges and corners from a segmented cloud.

reconstruct runs these steps:

1. fit a surface per cluster
2. mesh each surface with an epsilon margin
3. intersect every nearby pair of meshes into edge polylines
4. trim each mesh along its edges, keeping the point-supported components
5. find corners where edges (nearly) meet
6. cut the edges at their corners, keeping the pieces that lie on both trimmed parents

Steps 1 to 3 are independent per cluster or pair and run on a thread pool.
Results are always collected in index order, so the output is independent of
the thread count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.spatial import cKDTree

from .inr import FitDiverged, InrConfig
from .intersect import _UnionFind, intersect_meshes
from .mesh import MeshIndex
from .meshing import TopologyConfig, mesh_surface
from .select import SelectionConfig, fit_best_surface
from .trimming import trim_surface_by_edges
from .types import BRepModel, GeometryError, Normalization, Polyline, SegmentedPointCloud

log = logging.getLogger(__name__)

PIPELINE_ERRORS = (GeometryError, FitDiverged, ArithmeticError, ValueError)


def closest_points_between_segments(p0, p1, q0, q1):
    """Closest points of segment pairs ``p0p1`` / ``q0q1`` (all (N, 3)); returns (on p, on q)."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    den = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(den > 1e-300, np.clip((b * f - c * e) / den, 0.0, 1.0), 0.0)
        t = np.where(e > 0, (b * s + f) / e, 0.0)
        # t out of range: clamp it and recompute s for the clamped t
        lo, hi = t < 0, t > 1
        t = np.clip(t, 0.0, 1.0)
        s = np.where(lo, np.where(a > 0, np.clip(-c / a, 0.0, 1.0), 0.0), s)
        s = np.where(hi, np.where(a > 0, np.clip((b - c) / a, 0.0, 1.0), 0.0), s)
    return p0 + s[:, None] * d1, q0 + t[:, None] * d2


def _close_segment_pairs(p: Polyline, q: Polyline, tol: float):
    pa, pb = p.segments()
    qa, qb = q.segments()
    cp, cq = (pa + pb) / 2, (qa + qb) / 2
    rp = np.linalg.norm(pb - pa, axis=1).max() / 2
    rq = np.linalg.norm(qb - qa, axis=1).max() / 2
    pairs = cKDTree(cp).sparse_distance_matrix(cKDTree(cq), rp + rq + tol, output_type="coo_matrix")
    i, j = pairs.row, pairs.col
    if len(i) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    x, y = closest_points_between_segments(pa[i], pb[i], qa[j], qb[j])
    gap = np.linalg.norm(x - y, axis=1)
    ok = gap <= tol
    return ((x + y) / 2)[ok], gap[ok]


def intersect_edges(edges, cfg: TopologyConfig = TopologyConfig()):
    """Corners where pairs of edge polylines come within ``corner_tolerance``.

    Each edge pair contributes one corner per group of nearby close segment
    pairs: the midpoint of the closest approach with the smallest gap. Corners
    from all pairs closer than ``corner_tolerance`` are then merged into their
    centroid. Returns ``(corners (C, 3), edge_corner_adjacency (E, C) bool)``.
    """
    tol = cfg.corner_tolerance
    found, owners = [], []
    for a in range(len(edges)):
        for b in range(a + 1, len(edges)):
            mids, gaps = _close_segment_pairs(edges[a], edges[b], tol)
            if len(mids) == 0:
                continue
            uf = _UnionFind(len(mids))
            for i, j in sorted(cKDTree(mids).query_pairs(tol)):
                uf.union(i, j)
            roots = np.array([uf.find(i) for i in range(len(mids))])
            for r in np.unique(roots):
                members = np.flatnonzero(roots == r)
                found.append(mids[members[np.argmin(gaps[members])]])
                owners.append((a, b))
    if not found:
        return np.zeros((0, 3)), np.zeros((len(edges), 0), dtype=bool)
    pts = np.array(found)
    uf = _UnionFind(len(pts))
    for i, j in sorted(cKDTree(pts).query_pairs(tol)):
        uf.union(i, j)
    roots = np.array([uf.find(i) for i in range(len(pts))])
    groups = np.unique(roots)
    corners = np.array([pts[roots == r].mean(axis=0) for r in groups])
    adj = np.zeros((len(edges), len(groups)), dtype=bool)
    for k, r in enumerate(groups):
        for m in np.flatnonzero(roots == r):
            a, b = owners[m]
            adj[a, k] = adj[b, k] = True
    return corners, adj


def _split_polyline(pl: Polyline, cuts):
    """Cut ``pl`` at points ``cuts`` (projected onto it); returns [(Polyline, start cut, end cut)].

    Cut ids are indices into ``cuts``, or None at the free ends of an open
    polyline. A closed polyline with no cuts comes back whole.
    """
    if len(cuts) == 0:
        return [(pl, None, None)]
    a, b = pl.segments()
    ab = b - a
    den = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    params = []
    for k, c in enumerate(cuts):
        t = np.clip(np.einsum("ij,ij->i", c - a, ab) / den, 0.0, 1.0)
        d = np.linalg.norm(a + t[:, None] * ab - c, axis=1)
        s = int(np.argmin(d))
        params.append((s + float(t[s]), k, a[s] + t[s] * ab[s]))
    params.sort(key=lambda x: x[0])
    v = pl.vertices
    nseg = len(a)

    def piece(t0, p0, t1, p1):
        # vertices strictly between parameters t0 < t1 (segment i starts at vertex i)
        inner = [v[i % len(v)] for i in range(int(np.floor(t0)) + 1, int(np.ceil(t1)))]
        pts = [p0] + inner + [p1]
        pts = [x for i, x in enumerate(pts) if i == 0 or np.linalg.norm(x - pts[i - 1]) > 0]
        return Polyline(np.array(pts)) if len(pts) >= 2 else None

    out = []
    if pl.closed:
        for i in range(len(params)):
            t0, k0, p0 = params[i]
            t1, k1, p1 = params[(i + 1) % len(params)]
            if i + 1 == len(params):
                t1 += nseg
            seg = piece(t0, p0, t1, p1)
            if seg is not None:
                out.append((seg, k0, k1))
        return out
    bounds = [(0.0, None, v[0])] + params + [(float(nseg), None, v[-1])]
    for (t0, k0, p0), (t1, k1, p1) in zip(bounds[:-1], bounds[1:]):
        seg = piece(t0, p0, t1, p1)
        if seg is not None:
            out.append((seg, k0, k1))
    return out


def trim_edges_by_corners(edges, parents, corners, adjacency, meshes, cfg: TopologyConfig = TopologyConfig()):
    """Split edges at their corners and keep the pieces lying on both parent surfaces.

    ``parents[e]`` is the surface pair of edge ``e`` and ``meshes`` are the
    trimmed surface meshes. A piece is kept when the median distance of its
    segment midpoints to each parent mesh is at most ``edge_keep_distance``.
    Pieces meeting at a corner that lost all other edges are joined again.

    Returns ``(edges, parents, corners, edge_corner_adjacency)``.
    """
    index = {}

    def on_surface(pl, s):
        if s not in index:
            index[s] = MeshIndex(meshes[s])
        a, b = pl.segments()
        return float(np.median(index[s].distance((a + b) / 2))) <= cfg.edge_keep_distance

    kept = []  # (polyline, parent pair, start corner, end corner)
    for e, pl in enumerate(edges):
        ids = np.flatnonzero(adjacency[e]) if len(corners) else np.zeros(0, dtype=np.int64)
        for piece, c0, c1 in _split_polyline(pl, corners[ids]):
            if all(on_surface(piece, s) for s in parents[e]):
                kept.append((piece, parents[e], None if c0 is None else int(ids[c0]),
                             None if c1 is None else int(ids[c1])))
    kept = _rejoin(kept, len(corners))
    used = sorted({c for _, _, c0, c1 in kept for c in (c0, c1) if c is not None})
    remap = {c: i for i, c in enumerate(used)}
    adj = np.zeros((len(kept), len(used)), dtype=bool)
    for i, (_, _, c0, c1) in enumerate(kept):
        for c in (c0, c1):
            if c is not None:
                adj[i, remap[c]] = True
    return ([k[0] for k in kept], [k[1] for k in kept],
            corners[used] if used else np.zeros((0, 3)), adj)


def _rejoin(pieces, n_corners):
    """Merge pairs of pieces of the same edge whose shared corner touches nothing else."""
    while True:
        degree = np.zeros(n_corners, dtype=np.int64)
        for _, _, c0, c1 in pieces:
            for c in {c0, c1} - {None}:
                degree[c] += 1
        merged = False
        for c in range(n_corners):
            ends = [i for i, (_, _, c0, c1) in enumerate(pieces) if c in (c0, c1)]
            if degree[c] == 2 and len(ends) == 2 and pieces[ends[0]][1] == pieces[ends[1]][1]:
                i, j = ends
                pieces = _join(pieces, i, j, c)
                merged = True
                break
            if degree[c] == 1 and len(ends) == 1:
                pl, par, c0, c1 = pieces[ends[0]]
                if c0 == c and c1 == c:
                    # a closed edge cut at a single corner that nothing else uses
                    pieces[ends[0]] = (Polyline(pl.vertices[:-1], closed=True), par, None, None)
                    merged = True
                    break
                pieces[ends[0]] = (pl, par, None if c0 == c else c0, None if c1 == c else c1)
                merged = True
                break
        if not merged:
            return pieces


def _join(pieces, i, j, c):
    (p, par, a0, a1), (q, _, b0, b1) = pieces[i], pieces[j]
    pv, qv = p.vertices, q.vertices
    if a0 == c:
        pv, a0, a1 = pv[::-1], a1, a0
    if b1 == c:
        qv, b0, b1 = qv[::-1], b1, b0
    verts = np.concatenate([pv, qv[1:]])
    joined = (Polyline(verts), par, a0, b1)
    rest = [x for k, x in enumerate(pieces) if k not in (i, j)]
    return rest[: min(i, j)] + [joined] + rest[min(i, j):]


def _bbox_gap(a: np.ndarray, b: np.ndarray) -> float:
    lo = np.maximum(a.min(axis=0), b.min(axis=0))
    hi = np.minimum(a.max(axis=0), b.max(axis=0))
    return float(np.max(lo - hi))


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _guard(fn):
    def run(x):
        try:
            return fn(x), None
        except PIPELINE_ERRORS as exc:
            return None, f"{type(exc).__name__}: {exc}"
    return run


def reconstruct(seg: SegmentedPointCloud, sel_cfg: SelectionConfig = SelectionConfig(),
                inr_cfg: InrConfig = InrConfig(), topo_cfg: TopologyConfig = TopologyConfig(),
                threads: int = 1, normalization: Normalization | None = None) -> BRepModel:
    """Run the full pipeline on a segmented cloud (in normalized coordinates).

    A cluster whose fit fails is left out and recorded in ``failures``; a
    surface that cannot be trimmed keeps its untrimmed mesh and is recorded
    too. The model is still assembled from everything that worked.
    """
    clusters = [c.points for c in seg.clusters()]
    failures = []

    fits = _map(_guard(lambda pts: fit_best_surface(pts, sel_cfg, inr_cfg)), clusters, threads)
    alive = []
    for k, (model, err) in enumerate(fits):
        if err is not None:
            failures.append((k, f"fit: {err}"))
            log.warning("cluster %d: fit failed: %s", k, err)
        else:
            alive.append(k)

    meshes = _map(_guard(lambda k: mesh_surface(fits[k][0], clusters[k], topo_cfg)), alive, threads)
    surf = []  # cluster ids with a mesh
    mesh_of = {}
    for k, (m, err) in zip(alive, meshes):
        if err is not None:
            failures.append((k, f"mesh: {err}"))
        else:
            surf.append(k)
            mesh_of[k] = m

    pairs = [(i, j) for a, i in enumerate(surf) for j in surf[a + 1:]
             if _bbox_gap(clusters[i], clusters[j]) <= 2 * topo_cfg.epsilon]
    curves = _map(lambda ij: intersect_meshes(mesh_of[ij[0]], mesh_of[ij[1]], topo_cfg), pairs, threads)
    edges, parents = [], []
    for (i, j), lines in zip(pairs, curves):
        for pl in lines:
            edges.append(pl)
            parents.append((i, j))

    trimmed = {}
    for k in surf:
        mine = [e for e, p in zip(edges, parents) if k in p]
        try:
            trimmed[k] = trim_surface_by_edges(mesh_of[k], mine, clusters[k], topo_cfg)
        except PIPELINE_ERRORS as exc:
            failures.append((k, f"trim: {type(exc).__name__}: {exc}"))
            trimmed[k] = mesh_of[k]

    corners, adj = intersect_edges(edges, topo_cfg) if len(edges) >= 2 else (
        np.zeros((0, 3)), np.zeros((len(edges), 0), dtype=bool))
    edges, parents, corners, adj = trim_edges_by_corners(edges, parents, corners, adj, trimmed, topo_cfg)

    col = {k: i for i, k in enumerate(surf)}
    se = np.zeros((len(surf), len(edges)), dtype=bool)
    for e, (i, j) in enumerate(parents):
        se[col[i], e] = se[col[j], e] = True
    surfaces = [(fits[k][0], trimmed[k]) for k in surf]
    failures.sort()
    return BRepModel(surfaces, edges, corners, se, adj,
                     normalization or Normalization.identity(), failures)
