"""Cutting surface meshes along intersection curves and keeping the supported pieces.

Every mesh triangle crossed by a curve is re-triangulated so that the curve
runs along mesh edges. Points where curves cross a mesh edge are collected per
edge first and shared by both adjacent triangles, which keeps the refined mesh
conforming. Faces are then grouped into components across mesh edges that do
not lie on a curve, and components that carry cluster points survive.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .intersect import mesh_components
from .mesh import MeshIndex
from .meshing import TopologyConfig
from .primitives import _points
from .types import GeometryError, Polyline, TriangleMesh

# snapping tolerance of the per-triangle arrangement; intersection segments lie
# in their triangles up to round-off, so this is far below the chaining tolerance
ARRANGE_TOL = 1e-10

# smallest barycentric orientation treated as a proper (non-collinear) turn
EAR_EPS = 1e-12

# edge opposite each triangle corner
_OPP = ((1, 2), (2, 0), (0, 1))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


class _Tri:
    """Geometry of one mesh triangle: barycentric conversion and snapping tolerances."""

    def __init__(self, v3: np.ndarray, tol: float):
        self.v = v3
        e1, e2 = v3[1] - v3[0], v3[2] - v3[0]
        self.e1, self.e2 = e1, e2
        g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        self.ginv = np.linalg.inv(g)
        n = np.cross(e1, e2)
        self.n = n / np.linalg.norm(n)
        area2 = np.linalg.norm(n)
        # altitude from each corner to the opposite edge
        h = np.array([area2 / np.linalg.norm(v3[j] - v3[i]) for i, j in _OPP])
        self.btol = tol / h  # barycentric tolerance per coordinate

    def bary(self, p):
        d = p - self.v[0]
        st = self.ginv @ np.array([d @ self.e1, d @ self.e2])
        return np.array([1.0 - st[0] - st[1], st[0], st[1]])

    def point(self, lam):
        return lam @ self.v

    def clip(self, la, lb):
        """Clip the barycentric segment la->lb to the triangle.

        No tolerance is applied here: a piece lying just outside belongs to the
        neighbouring triangle and is clipped there.
        """
        u0, u1 = 0.0, 1.0
        d = lb - la
        for k in range(3):
            if d[k] == 0:
                if la[k] < 0:
                    return None
                continue
            u = -la[k] / d[k]
            if d[k] > 0:
                u0 = max(u0, u)
            else:
                u1 = min(u1, u)
        if u1 <= u0:
            return None
        return la + u0 * d, la + u1 * d

    def snap(self, lam):
        lam = lam.copy()
        lam[np.abs(lam) <= self.btol] = 0.0
        lam = np.maximum(lam, 0.0)
        return lam / lam.sum()


def _segment_candidates(mesh: TriangleMesh, a: np.ndarray, b: np.ndarray, tol: float):
    tris = mesh.triangles
    cen = tris.mean(axis=1)
    rad = np.linalg.norm(tris - cen[:, None], axis=2).max(axis=1)
    tree = cKDTree(cen)
    mid = (a + b) / 2
    half = np.linalg.norm(b - a, axis=1) / 2
    seg, tri = [], []
    for k, idx in enumerate(tree.query_ball_point(mid, half + rad.max() + tol)):
        if idx:
            seg.extend([k] * len(idx))
            tri.extend(idx)
    return np.asarray(seg, dtype=np.int64), np.asarray(tri, dtype=np.int64)


def _clip_constraints(mesh: TriangleMesh, polylines, tol: float):
    """Per-triangle list of clipped constraint pieces as barycentric endpoint pairs."""
    segs = [pl.segments() for pl in polylines]
    if not segs:
        return {}
    a = np.concatenate([s[0] for s in segs])
    b = np.concatenate([s[1] for s in segs])
    seg, tri = _segment_candidates(mesh, a, b, tol)
    if len(seg) == 0:
        return {}
    t = mesh.triangles[tri]
    e1, e2 = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]
    n = np.cross(e1, e2)
    area2 = np.linalg.norm(n, axis=1)
    n = n / area2[:, None]
    pa, pb = a[seg] - t[:, 0], b[seg] - t[:, 0]
    ok = (np.abs(np.einsum("ij,ij->i", pa, n)) <= tol) & (np.abs(np.einsum("ij,ij->i", pb, n)) <= tol)
    seg, tri, t, e1, e2, area2, pa, pb = seg[ok], tri[ok], t[ok], e1[ok], e2[ok], area2[ok], pa[ok], pb[ok]
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 * g12

    def bary(d):
        r1, r2 = np.einsum("ij,ij->i", d, e1), np.einsum("ij,ij->i", d, e2)
        s_ = (g22 * r1 - g12 * r2) / det
        t_ = (g11 * r2 - g12 * r1) / det
        return np.stack([1.0 - s_ - t_, s_, t_], axis=1)

    la, lb = bary(pa), bary(pb)
    edge_len = np.stack([np.linalg.norm(t[:, j] - t[:, i], axis=1) for i, j in _OPP], axis=1)
    btol = tol * edge_len / area2[:, None]
    # a segment running along an edge line clips against it exactly, not at a
    # round-off dependent parameter
    along = (np.abs(la) <= btol) & (np.abs(lb) <= btol)
    la, lb = np.where(along, 0.0, la), np.where(along, 0.0, lb)
    d = lb - la
    u0, u1 = np.zeros(len(la)), np.ones(len(la))
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(3):
            u = -la[:, k] / d[:, k]
            u0 = np.where(d[:, k] > 0, np.maximum(u0, u), u0)
            u1 = np.where(d[:, k] < 0, np.minimum(u1, u), u1)
            # parallel to this edge line and outside
            u1 = np.where((d[:, k] == 0) & (la[:, k] < 0), -1.0, u1)
    ok = u1 > u0
    ca = la + u0[:, None] * d
    cb = la + u1[:, None] * d
    # snap weights within tol (as a distance to the opposite edge) to zero

    def snap(l):
        l = np.where(np.abs(l) <= btol, 0.0, l)
        l = np.maximum(l, 0.0)
        return l / l.sum(axis=1, keepdims=True)

    ca, cb = snap(ca), snap(cb)
    length = np.linalg.norm(np.einsum("pk,pkj->pj", cb - ca, t), axis=1)
    ok &= length > tol
    pieces: dict[int, list] = {}
    for f, x, y in zip(tri[ok], ca[ok], cb[ok]):
        pieces.setdefault(int(f), []).append((x, y))
    geo = {f: _Tri(mesh.vertices[mesh.faces[f]], tol) for f in pieces}
    return pieces, geo


def _edge_key(f, k, faces):
    """Mesh edge opposite corner ``k`` of face ``f`` as (lo, hi) vertex ids, plus the corner order."""
    i, j = _OPP[k]
    vi, vj = int(faces[f, i]), int(faces[f, j])
    return (min(vi, vj), max(vi, vj)), (i, j)


def trim_surface_by_edges(mesh: TriangleMesh, edges, cluster, cfg: TopologyConfig = TopologyConfig(),
                          return_components: bool = False):
    """Split ``mesh`` along ``edges`` and keep the components supported by ``cluster``.

    A component is kept when its faces are the nearest mesh faces (within
    ``component_keep_distance``) of at least ``component_min_support`` of the
    cluster points, and of at least one point.
    """
    pts = _points(cluster)
    tol = min(ARRANGE_TOL, cfg.chain_tolerance)
    edges = [e for e in edges if isinstance(e, Polyline)]
    refined, blocked = _refine(mesh, edges, tol)
    labels = _components(refined, blocked)
    index = MeshIndex(refined)
    dist, face, _ = index.query(pts)
    near = dist <= cfg.component_keep_distance
    n_comp = int(labels.max()) + 1 if len(labels) else 0
    votes = np.bincount(labels[face[near]], minlength=n_comp)
    need = max(1.0, cfg.component_min_support * len(pts))
    keep = np.flatnonzero(votes >= need)
    if len(keep) == 0:
        raise GeometryError("surface unsupported by points")
    kept = TriangleMesh(refined.vertices, refined.faces[np.isin(labels, keep)])
    used, inverse = np.unique(kept.faces, return_inverse=True)
    out = TriangleMesh(kept.vertices[used], inverse.reshape(-1, 3))
    if return_components:
        return out, refined, labels, votes
    return out


def _refine(mesh: TriangleMesh, polylines, tol: float):
    """Re-triangulate faces crossed by ``polylines``; returns (mesh, set of blocked vertex pairs)."""
    if not polylines or len(mesh.faces) == 0:
        return mesh, set()
    clipped = _clip_constraints(mesh, polylines, tol)
    if not clipped:
        return mesh, set()
    pieces, geo = clipped
    faces = mesh.faces
    verts = mesh.vertices

    # pass 1: split parameters per mesh edge and edge intervals lying on curves
    splits: dict[tuple, list] = {}
    on_edge: dict[tuple, list] = {}
    for f, plist in pieces.items():
        for la, lb in plist:
            za, zb = la == 0, lb == 0
            for k in range(3):
                key, (i, j) = _edge_key(f, k, faces)
                # a barycentric weight of zero places the point on the opposite edge
                lam = []
                for z, l in ((za, la), (zb, lb)):
                    if z[k] and not (z[i] or z[j]):
                        # parameter from the lower-id endpoint towards the higher-id one
                        wi, wj = l[i], l[j]
                        lam.append(wj / (wi + wj) if faces[f, i] == key[0] else wi / (wi + wj))
                splits.setdefault(key, []).extend(lam)
                if za[k] and zb[k]:
                    pa = _param_on_edge(la, i, j, faces[f, i] == key[0])
                    pb = _param_on_edge(lb, i, j, faces[f, i] == key[0])
                    on_edge.setdefault(key, []).append((min(pa, pb), max(pa, pb)))

    new_pts = []
    split_ids: dict[tuple, tuple] = {}
    nv = len(verts)
    for key in sorted(splits):
        vlo, vhi = verts[key[0]], verts[key[1]]
        length = np.linalg.norm(vhi - vlo)
        lam = np.sort(np.asarray(splits[key]))
        lam = lam[(lam * length > tol) & ((1 - lam) * length > tol)]
        merged = []
        for x in lam:
            if merged and (x - merged[-1][-1]) * length <= tol:
                merged[-1].append(x)
            else:
                merged.append([x])
        params = np.array([np.mean(m) for m in merged])
        ids = np.arange(nv + len(new_pts), nv + len(new_pts) + len(params))
        new_pts.extend(vlo + params[:, None] * (vhi - vlo))
        split_ids[key] = (params, ids)

    blocked = set()
    # edges of the original mesh lying on a curve (already conforming)
    for key, ivals in on_edge.items():
        params, ids = split_ids.get(key, (np.zeros(0), np.zeros(0, dtype=np.int64)))
        chain_p = np.concatenate([[0.0], params, [1.0]])
        chain_i = np.concatenate([[key[0]], ids, [key[1]]])
        length = np.linalg.norm(verts[key[1]] - verts[key[0]])
        for lo, hi in ivals:
            for m in range(len(chain_p) - 1):
                if chain_p[m] * length >= lo * length - tol and chain_p[m + 1] * length <= hi * length + tol:
                    blocked.add((int(min(chain_i[m], chain_i[m + 1])), int(max(chain_i[m], chain_i[m + 1]))))

    affected = set(pieces)
    split_edges = np.array([k for k, v in split_ids.items() if len(v[0])], dtype=np.int64).reshape(-1, 2)
    if len(split_edges):
        nmax = len(verts)
        ek = np.sort(np.stack([faces[:, [1, 2, 0]], faces[:, [2, 0, 1]]], axis=2), axis=2)
        hit = np.isin(ek[..., 0] * nmax + ek[..., 1], split_edges[:, 0] * nmax + split_edges[:, 1]).any(axis=1)
        affected |= {int(f) for f in np.flatnonzero(hit)}

    out_faces = []
    keep_mask = np.ones(len(faces), dtype=bool)
    for f in sorted(affected):
        g = geo.get(f) or _Tri(verts[faces[f]], tol)
        tris, blk, extra = _split_triangle(f, g, pieces.get(f, []), faces, split_ids, tol,
                                           nv + len(new_pts))
        new_pts.extend(extra)
        out_faces.extend(tris)
        blocked |= blk
        keep_mask[f] = False
    all_v = np.concatenate([verts, np.asarray(new_pts).reshape(-1, 3)])
    all_f = np.concatenate([faces[keep_mask], np.asarray(out_faces, dtype=np.int64).reshape(-1, 3)])
    return TriangleMesh(all_v, all_f), blocked


def _param_on_edge(lam, i, j, i_is_lo):
    wi, wj = lam[i], lam[j]
    s = wi + wj
    return (wj / s) if i_is_lo else (wi / s)


def _split_triangle(f, g: _Tri, plist, faces, split_ids, tol, next_id):
    """Triangulate face ``f`` with its boundary splits and constraint pieces.

    Returns (triangles as global id triples, blocked id pairs, new vertex positions).
    """
    # boundary loop: corner 0, splits on edge (0,1), corner 1, ... in barycentric coords
    bary, gid = [], []
    for c in range(3):
        lam = np.zeros(3)
        lam[c] = 1.0
        bary.append(lam)
        gid.append(int(faces[f, c]))
        nxt = (c + 1) % 3
        k = 3 - c - nxt  # corner opposite edge (c, nxt)
        key, _ = _edge_key(f, k, faces)
        if key in split_ids:
            params, ids = split_ids[key]
            fwd = faces[f, c] == key[0]
            order = np.argsort(params) if fwd else np.argsort(-params)
            for m in order:
                w = params[m] if fwd else 1.0 - params[m]
                lam = np.zeros(3)
                lam[c], lam[nxt] = 1.0 - w, w
                bary.append(lam)
                gid.append(int(ids[m]))
    nb = len(bary)
    boundary_edges = {(m, (m + 1) % nb) for m in range(nb)}
    xy = [np.array([l[1], l[2]]) for l in bary]
    pos3 = [g.point(l) for l in bary]
    extra = []

    def vertex_for(lam):
        p = g.point(lam)
        d = np.linalg.norm(np.asarray(pos3) - p, axis=1)
        m = int(np.argmin(d))
        if d[m] <= tol:
            return m
        bary.append(lam)
        xy.append(np.array([lam[1], lam[2]]))
        pos3.append(p)
        gid.append(next_id + len(extra))
        extra.append(p)
        return len(bary) - 1

    segs = []
    for la, lb in plist:
        ia, ib = vertex_for(la), vertex_for(lb)
        if ia != ib:
            segs.append((ia, ib))
    # split constraints at mutual crossings
    changed = True
    while changed:
        changed = False
        for x in range(len(segs)):
            for y in range(x + 1, len(segs)):
                (a, b), (c, d) = segs[x], segs[y]
                if len({a, b, c, d}) < 4:
                    continue
                pa, pb, pc, pd = xy[a], xy[b], xy[c], xy[d]
                o1, o2 = _orient(pa, pb, pc), _orient(pa, pb, pd)
                o3, o4 = _orient(pc, pd, pa), _orient(pc, pd, pb)
                if o1 * o2 < 0 and o3 * o4 < 0:
                    u = o1 / (o1 - o2)
                    lam = bary[c] + u * (bary[d] - bary[c])
                    m = vertex_for(lam)
                    new = [(a, m), (m, b)] if m not in (a, b) else [(a, b)]
                    new_y = [(c, m), (m, d)] if m not in (c, d) else [(c, d)]
                    segs = [s for k, s in enumerate(segs) if k not in (x, y)] + new + new_y
                    changed = True
                    break
            if changed:
                break
    # split constraints at vertices lying on them
    final = set()
    P = np.asarray(pos3)
    for a, b in segs:
        pa = P[a]
        d = P[b] - pa
        t = (P - pa) @ d / (d @ d)
        off = np.linalg.norm(pa + t[:, None] * d - P, axis=1)
        on = np.flatnonzero((t > 0) & (t < 1) & (off <= tol))
        chain = [a] + sorted((int(m) for m in on if m not in (a, b)), key=lambda m: t[m]) + [b]
        for u, w in zip(chain[:-1], chain[1:]):
            if u != w:
                final.add((min(u, w), max(u, w)))
    bset = {(min(u, w), max(u, w)) for u, w in boundary_edges}
    blocked_local = {e for e in final if e in bset}
    internal = {e for e in final if e not in bset}
    # drop dangling pieces and pieces detached from the boundary
    internal = _prune(internal, nb)
    internal = _straighten(internal, nb, xy)
    adj: dict[int, list[int]] = {m: [] for m in range(len(bary))}
    for u, w in bset | internal:
        adj[u].append(w)
        adj[w].append(u)
    polys = _faces_of(adj, xy)
    tris = []
    for poly in polys:
        for t in _ear_clip(poly, xy):
            tris.append((gid[t[0]], gid[t[1]], gid[t[2]]))
    blocked = {(min(gid[u], gid[w]), max(gid[u], gid[w])) for u, w in internal | blocked_local}
    return tris, blocked, extra


def _prune(internal: set, nb: int) -> set:
    """Remove constraint edges that end inside the triangle or form detached loops."""
    internal = set(internal)
    while True:
        deg: dict[int, int] = {}
        for u, w in internal:
            deg[u] = deg.get(u, 0) + 1
            deg[w] = deg.get(w, 0) + 1
        drop = {e for e in internal if (e[0] >= nb and deg[e[0]] == 1) or (e[1] >= nb and deg[e[1]] == 1)}
        if not drop:
            break
        internal -= drop
    # keep only constraint components that touch the boundary
    comp: dict[int, int] = {}

    def find(x):
        while comp.get(x, x) != x:
            x = comp[x]
        return x

    for u, w in internal:
        ru, rw = find(u), find(w)
        if ru != rw:
            comp[max(ru, rw)] = min(ru, rw)
    touching = {find(m) for e in internal for m in e if m < nb}
    return {e for e in internal if find(e[0]) in touching}


def _straighten(internal: set, nb: int, xy) -> set:
    """Merge constraint edges through collinear interior vertices of degree two.

    Such a vertex would only bound zero-area triangles; removing it lets the
    straight constraint edge itself appear (and be blocked) in the mesh.
    """
    internal = set(internal)
    changed = True
    while changed:
        changed = False
        nbrs: dict[int, list[int]] = {}
        for u, w in internal:
            nbrs.setdefault(u, []).append(w)
            nbrs.setdefault(w, []).append(u)
        for v in sorted(nbrs):
            if v < nb or len(nbrs[v]) != 2:
                continue
            a, b = nbrs[v]
            if abs(_orient(xy[a], xy[v], xy[b])) <= EAR_EPS and (xy[a] - xy[v]) @ (xy[b] - xy[v]) < 0:
                e = (min(a, b), max(a, b))
                if e in internal:
                    continue
                internal -= {(min(a, v), max(a, v)), (min(b, v), max(b, v))}
                internal.add(e)
                changed = True
                break
    return internal


def _faces_of(adj, xy):
    """Bounded faces of a planar graph as CCW vertex cycles."""
    order = {}
    for v, nbrs in adj.items():
        if nbrs:
            order[v] = sorted(nbrs, key=lambda w: np.arctan2(xy[w][1] - xy[v][1], xy[w][0] - xy[v][0]))
    seen = set()
    faces = []
    for v in sorted(order):
        for w in order[v]:
            if (v, w) in seen:
                continue
            cyc = []
            a, b = v, w
            while (a, b) not in seen:
                seen.add((a, b))
                cyc.append(a)
                nb = order[b]
                i = nb.index(a)
                a, b = b, nb[(i - 1) % len(nb)]
            area = 0.0
            for m in range(len(cyc)):
                p, q = xy[cyc[m]], xy[cyc[(m + 1) % len(cyc)]]
                area += p[0] * q[1] - p[1] * q[0]
            if area > 0:
                faces.append(cyc)
    return faces


def _ear_clip(poly, xy):
    """Triangulate a simple CCW polygon (collinear vertices allowed)."""
    idx = list(poly)
    tris = []
    guard = 0
    while len(idx) > 3 and guard < 10 * len(poly) ** 2:
        guard += 1
        n = len(idx)
        clipped = False
        for m in range(n):
            a, b, c = idx[m - 1], idx[m], idx[(m + 1) % n]
            if _orient(xy[a], xy[b], xy[c]) <= EAR_EPS:
                continue
            inside = False
            for o in idx:
                if o in (a, b, c):
                    continue
                p = xy[o]
                if (_orient(xy[a], xy[b], p) >= 0 and _orient(xy[b], xy[c], p) >= 0
                        and _orient(xy[c], xy[a], p) >= 0):
                    inside = True
                    break
            if inside:
                continue
            tris.append((a, b, c))
            del idx[m]
            clipped = True
            break
        if not clipped:
            break
    if len(idx) == 3 and _orient(xy[idx[0]], xy[idx[1]], xy[idx[2]]) > EAR_EPS:
        tris.append(tuple(idx))
    return tris


def _components(mesh: TriangleMesh, blocked: set) -> np.ndarray:
    """Face component labels; faces connect across shared edges not in ``blocked``."""
    f = mesh.faces
    nf = len(f)
    if nf == 0:
        return np.zeros(0, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.sort(e, axis=1)
    owner = np.tile(np.arange(nf), 3)
    order = np.lexsort((e[:, 1], e[:, 0]))
    e, owner = e[order], owner[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    if blocked:
        b = np.array(sorted(blocked), dtype=np.int64)
        nmax = int(max(e.max(), b.max())) + 1
        is_blocked = np.isin(e[1:, 0] * nmax + e[1:, 1], b[:, 0] * nmax + b[:, 1])
        same &= ~is_blocked
    i, j = owner[:-1][same], owner[1:][same]
    return mesh_components(nf, (i, j))
