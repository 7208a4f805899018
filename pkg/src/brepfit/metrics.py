"""Evaluation of a reconstructed B-rep against a reference model.

Distances between surfaces and between edges are measured on samples: each
surface contributes ``samples_per_surface`` area-uniform samples, each edge
the same number of length-uniform samples. Scores are computed in the
reference model's normalized (unit-diagonal) frame, so thresholds mean the
same thing for every model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .mesh import MeshIndex, merge_meshes, sample_mesh, sample_polyline
from .types import BRepModel, Polyline, TriangleMesh


@dataclass(frozen=True)
class EvalConfig:
    pcov_radius: float = 0.01
    surface_thresholds: tuple = (0.08, 0.06, 0.03)
    edge_thresholds: tuple = (0.05, 0.03, 0.02)
    corner_thresholds: tuple = (0.03, 0.02, 0.01)
    samples_per_surface: int = 8192
    seed: int = 0

    def __post_init__(self):
        if not self.pcov_radius > 0:
            raise ValueError("pcov_radius must be positive")
        for name in ("surface_thresholds", "edge_thresholds", "corner_thresholds"):
            t = tuple(float(x) for x in getattr(self, name))
            if not t or min(t) <= 0 or list(t) != sorted(t, reverse=True):
                raise ValueError(f"{name} must be positive and sorted descending")
            object.__setattr__(self, name, t)
        if self.samples_per_surface < 1:
            raise ValueError("samples_per_surface must be positive")


def _as_index(surface):
    if isinstance(surface, MeshIndex):
        return surface
    return MeshIndex(surface)


def residual_error(samples, surface) -> float:
    """Mean distance from ``samples`` (taken on the reference surface) to ``surface``.

    ``surface`` is a TriangleMesh or a prebuilt MeshIndex.
    """
    pts = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(pts) == 0:
        raise ValueError("residual_error needs at least one sample")
    return float(_as_index(surface).distance(pts).mean())


def p_coverage(points, meshes, r: float = 0.01) -> float:
    """Fraction of ``points`` within ``r`` of the union of ``meshes``."""
    merged = merge_meshes(meshes if not isinstance(meshes, TriangleMesh) else [meshes])
    if len(merged.faces) == 0:
        raise ValueError("p_coverage needs a non-empty reconstruction")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return float(np.mean(MeshIndex(merged).distance(pts) <= r))


def chamfer(a, b) -> float:
    """Symmetric chamfer distance: (mean NN distance a->b + mean b->a) / 2."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs two non-empty point sets")
    dab = cKDTree(b).query(a)[0]
    dba = cKDTree(a).query(b)[0]
    return float((dab.mean() + dba.mean()) / 2.0)


def hungarian_match(cost) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost one-to-one assignment; returns (sorted (row, col) pairs, total cost).

    Rectangular matrices leave the surplus rows or columns unmatched.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2D")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix must be finite")
    if c.size == 0:
        return [], 0.0
    rows, cols = linear_sum_assignment(c)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    return pairs, float(c[rows, cols].sum())


def _match_within(dist: np.ndarray, theta: float) -> int:
    """Largest number of pairs matched one-to-one with distance at most ``theta``."""
    if dist.size == 0:
        return 0
    allowed = dist <= theta
    if not allowed.any():
        return 0
    # a forbidden pair costs more than any complete set of allowed pairs
    penalty = 1.0 + min(dist.shape) * max(theta, 0.0) * 2.0
    cost = np.where(allowed, dist, penalty)
    rows, cols = linear_sum_assignment(cost)
    return int(allowed[rows, cols].sum())


def prf(dist, theta: float) -> tuple[float, float, float]:
    """Precision, recall and F-score from a (predicted x reference) distance matrix.

    A true positive is a pair of the best one-to-one matching whose distance is
    at most ``theta``. Both sets empty scores (1, 1, 1); one empty scores zero.
    """
    d = np.asarray(dist, dtype=np.float64)
    n_pred, n_gt = d.shape if d.ndim == 2 else (0, 0)
    if n_pred == 0 and n_gt == 0:
        return 1.0, 1.0, 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0, 0.0, 0.0
    tp = _match_within(d, theta)
    p, r = tp / n_pred, tp / n_gt
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def distance_matrix(a_samples, b_samples) -> np.ndarray:
    """Chamfer distance between every pair of sample sets."""
    out = np.zeros((len(a_samples), len(b_samples)))
    for i, x in enumerate(a_samples):
        for j, y in enumerate(b_samples):
            out[i, j] = chamfer(x, y)
    return out


def _corner_distances(a, b) -> np.ndarray:
    a, b = np.asarray(a).reshape(-1, 3), np.asarray(b).reshape(-1, 3)
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


def _normalized(model: BRepModel, norm):
    meshes = [TriangleMesh(norm.apply(model.normalization.invert(m.vertices)), m.faces) for m in model.meshes]
    edges = [Polyline(norm.apply(model.normalization.invert(e.vertices)), e.closed) for e in model.edges]
    corners = norm.apply(model.normalization.invert(model.corners)) if len(model.corners) else np.zeros((0, 3))
    return meshes, edges, corners


def evaluate(gt: BRepModel, pred: BRepModel, cfg: EvalConfig = EvalConfig()) -> dict:
    """Metrics report of ``pred`` against the reference ``gt``, as an ordered dict.

    Keys: ``Err`` (mean residual over matched reference surfaces), ``Pcov``
    (share of reference surface samples within ``pcov_radius`` of the
    prediction), ``chamfer`` (between all surface samples), counts, and
    ``{surface,edge,corner}_{P,R,F}@theta`` for every threshold.
    """
    norm = gt.normalization
    g_mesh, g_edge, g_corner = _normalized(gt, norm)
    p_mesh, p_edge, p_corner = _normalized(pred, norm)
    n = cfg.samples_per_surface

    def samples(items, sampler):
        # one generator per item index, so both models draw identical streams
        return [sampler(x, n, np.random.default_rng([cfg.seed, i])) for i, x in enumerate(items)]

    gs, ps = samples(g_mesh, sample_mesh), samples(p_mesh, sample_mesh)
    ge, pe = samples(g_edge, sample_polyline), samples(p_edge, sample_polyline)

    report = {}
    surf_d = distance_matrix(ps, gs)
    pairs, _ = hungarian_match(surf_d.T) if surf_d.size else ([], 0.0)
    residuals = [residual_error(gs[i], p_mesh[j]) for i, j in pairs]
    report["Err"] = float(np.mean(residuals)) if residuals else float("nan")
    all_gt = np.concatenate(gs) if gs else np.zeros((0, 3))
    report["Pcov"] = p_coverage(all_gt, p_mesh, cfg.pcov_radius) if p_mesh and len(all_gt) else 0.0
    report["chamfer"] = chamfer(all_gt, np.concatenate(ps)) if gs and ps else float("nan")
    report["unmatched_gt_surfaces"] = len(gs) - len(pairs)
    report["n_surfaces"] = len(ps)
    report["n_edges"] = len(pe)
    report["n_corners"] = len(p_corner)
    edge_d = distance_matrix(pe, ge)
    corner_d = _corner_distances(p_corner, g_corner)
    for name, d, thetas in (("surface", surf_d, cfg.surface_thresholds), ("edge", edge_d, cfg.edge_thresholds),
                            ("corner", corner_d, cfg.corner_thresholds)):
        for t in thetas:
            p, r, f = prf(d, t)
            report[f"{name}_P@{t:g}"] = p
            report[f"{name}_R@{t:g}"] = r
            report[f"{name}_F@{t:g}"] = f
    return report


def format_report(report: dict) -> str:
    lines = []
    for k, v in report.items():
        lines.append(f"{k}={v}" if isinstance(v, int) else f"{k}={v:.17g}")
    return "\n".join(lines) + "\n"
