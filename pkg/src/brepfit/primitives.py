"""Least-squares fitting of planes, spheres, cylinders and cones to point clusters.

Each ``fit_*`` function returns a :class:`FitResult` whose model carries the
mean unsigned point-to-surface distance over the input cluster as its
residual. All fits are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .types import (
    Cone,
    Cylinder,
    GeometryError,
    Plane,
    PointCloud,
    Sphere,
    SurfaceModel,
    canonical_direction,
    unit,
)

SPHERE_MAX_ITER = 200
SPHERE_TOL = 1e-10

CONE_MAX_ITER = 200
CONE_GRAD_TOL = 1e-10
CONE_THETA_MARGIN = 0.005

POWELL_SEEDS = tuple(
    (phi, psi) for psi in (np.pi / 4, 3 * np.pi / 4) for phi in (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
)


@dataclass(frozen=True)
class FitResult:
    model: SurfaceModel
    iterations: int
    converged: bool

    @property
    def params(self):
        return self.model.params

    @property
    def residual(self) -> float:
        return self.model.residual


def _points(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    return PointCloud(points).points


# --- distances -------------------------------------------------------------


def distances(params, points) -> np.ndarray:
    """Unsigned Euclidean distance from each point to the (infinite) surface."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if isinstance(params, Plane):
        return np.abs(p @ params.n - params.d)
    if isinstance(params, Sphere):
        return np.abs(np.linalg.norm(p - params.c, axis=1) - params.r)
    if isinstance(params, Cylinder):
        d = p - params.c
        radial = d - np.outer(d @ params.a, params.a)
        return np.abs(np.linalg.norm(radial, axis=1) - params.r)
    if isinstance(params, Cone):
        d = p - params.v
        t = d @ params.a
        rho = np.linalg.norm(d - np.outer(t, params.a), axis=1)
        norm = np.hypot(t, rho)
        # angle of p off the axis, measured in the half plane through the axis
        off = np.arctan2(rho, t) - params.theta
        return np.where(off <= np.pi / 2, norm * np.abs(np.sin(off)), norm)
    from .inr import FreeformSurface

    if isinstance(params, FreeformSurface):
        return params.distances(p)
    raise TypeError(f"unsupported surface parameters {type(params).__name__}")


def distance_to_surface(model, p) -> float:
    params = model.params if isinstance(model, SurfaceModel) else model
    return float(distances(params, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def _result(params, pts, iterations, converged) -> FitResult:
    res = float(np.mean(distances(params, pts)))
    if not np.isfinite(res):
        res = float("inf")
        converged = False
    return FitResult(SurfaceModel.of(params, res), iterations, bool(converged))


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def _sph2vec(phi, psi):
    return np.array([np.cos(phi) * np.sin(psi), np.sin(phi) * np.sin(psi), np.cos(psi)])


def _vec2sph(a):
    a = unit(a)
    return np.arctan2(a[1], a[0]), np.arccos(np.clip(a[2], -1.0, 1.0))


# --- plane -----------------------------------------------------------------


def fit_plane(points) -> FitResult:
    pts = _points(points)
    if len(pts) < 3:
        raise GeometryError("plane fit needs at least 3 points")
    c = pts.mean(axis=0)
    q = pts - c
    scatter = q.T @ q / len(pts)
    if np.max(np.abs(q)) <= 1e-12 * max(1.0, np.max(np.abs(c))):
        raise GeometryError("degenerate cluster")
    _, vecs = np.linalg.eigh(scatter)
    n = canonical_direction(unit(vecs[:, 0]))
    return _result(Plane(n, float(n @ c)), pts, 1, True)


def plane_scatter(points) -> np.ndarray:
    pts = _points(points)
    q = pts - pts.mean(axis=0)
    return q.T @ q / len(pts)


# --- sphere ----------------------------------------------------------------


def fit_sphere(points) -> FitResult:
    """Fixed-point iteration on the stationarity conditions of the squared radial error."""
    pts = _points(points)
    if len(pts) < 4:
        raise GeometryError("sphere fit needs at least 4 points")
    mean = pts.mean(axis=0)
    c = mean.copy()
    converged = False
    it = 0
    for it in range(1, SPHERE_MAX_ITER + 1):
        diff = pts - c
        lengths = np.linalg.norm(diff, axis=1)
        if np.any(lengths == 0.0):
            # nudge off a sample point so the unit directions are defined
            lengths = np.maximum(lengths, 1e-300)
        r = lengths.mean()
        c_new = mean - r * (diff / lengths[:, None]).mean(axis=0)
        step = np.linalg.norm(c_new - c)
        c = c_new
        if step < SPHERE_TOL:
            converged = True
            break
    r = float(np.linalg.norm(pts - c, axis=1).mean())
    if not r > 0:
        raise GeometryError("degenerate cluster")
    return _result(Sphere(c, r), pts, it, converged)


# --- cylinder --------------------------------------------------------------


class _CylinderObjective:
    """Axis-only cylinder error with centre and radius eliminated in closed form.

    Data are centred on their mean; all sums are replaced by moments up to
    fourth order so that one evaluation is O(1) in the number of points.
    """

    def __init__(self, pts: np.ndarray):
        self.mean = pts.mean(axis=0)
        x = pts - self.mean
        n = len(x)
        self.x = x
        self.m2 = x.T @ x / n
        xx = np.einsum("ia,ib->iab", x, x).reshape(n, 9)
        self.m3 = xx.T @ x / n  # (9, 3)
        self.m4 = xx.T @ xx / n  # (9, 9)

    def parts(self, a):
        P = np.eye(3) - np.outer(a, a)
        S = _skew(a)
        A = P @ self.m2 @ P
        pv = P.ravel()
        qbar = pv @ self.m2.ravel()
        B = P @ (pv @ self.m3)
        A_hat = S @ A @ S.T
        denom = float(np.sum(A_hat * A.T))
        return pv, A, B, qbar, A_hat, denom

    def __call__(self, angles) -> float:
        a = _sph2vec(*angles)
        pv, A, B, qbar, A_hat, denom = self.parts(a)
        if denom <= 1e-300:
            return float("inf")
        pc = A_hat @ B / denom
        q2 = pv @ self.m4 @ pv
        return float(q2 - qbar * qbar - 4.0 * pc @ B + 4.0 * pc @ A @ pc)

    def center_radius(self, a):
        P, A, B, qbar, A_hat, denom = self.parts(a)
        pc = A_hat @ B / denom
        y = self.x @ P.reshape(3, 3)
        r = float(np.sqrt(np.mean(np.sum((y - pc) ** 2, axis=1))))
        return self.mean + pc, r


def fit_cylinder(points) -> FitResult:
    """Axis by multi-start Powell search over spherical angles, then centre and radius."""
    pts = _points(points)
    if len(pts) < 6:
        raise GeometryError("cylinder fit needs at least 6 points")
    obj = _CylinderObjective(pts)
    if np.linalg.eigvalsh(obj.m2)[1] <= 1e-18:
        raise GeometryError("degenerate cluster")
    best = None
    total_iter = 0
    # coarse search from every seed, then a tight polish of the best basin
    for seed in POWELL_SEEDS:
        res = minimize(obj, np.array(seed), method="Powell", options={"xtol": 1e-2, "ftol": 1e-4, "maxfev": 150})
        total_iter += int(res.nit)
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise GeometryError("cylinder objective undefined for every start")
    best = minimize(
        obj, best.x, method="Powell", options={"xtol": 1e-12, "ftol": 1e-16, "maxiter": 2000, "maxfev": 8000}
    )
    total_iter += int(best.nit)
    a = canonical_direction(_sph2vec(*best.x))
    c, r = obj.center_radius(a)
    # slide the axis point to the foot of the centroid, which makes it unique
    c = c + ((obj.mean - c) @ a) * a
    converged = bool(best.success) and np.isfinite(r) and r > 0
    if not (np.isfinite(r) and r > 0):
        r = 1e300
    return _result(Cylinder(a, c, r), pts, total_iter, converged)


# --- cone ------------------------------------------------------------------


def _cone_residuals(x, pts):
    v, a, theta = x[:3], _sph2vec(x[3], x[4]), x[5]
    d = pts - v
    ad = d @ a
    dd = np.einsum("ij,ij->i", d, d)
    c2 = np.cos(theta) ** 2
    f = c2 * dd - ad**2
    J = np.empty((len(pts), 6))
    J[:, :3] = -2.0 * (c2 * d - ad[:, None] * a)
    da = -2.0 * ad[:, None] * d
    phi, psi = x[3], x[4]
    J[:, 3] = da @ np.array([-np.sin(phi) * np.sin(psi), np.cos(phi) * np.sin(psi), 0.0])
    J[:, 4] = da @ np.array([np.cos(phi) * np.cos(psi), np.sin(phi) * np.cos(psi), -np.sin(psi)])
    J[:, 5] = -np.sin(2.0 * theta) * dd
    return f, J


def _levenberg_marquardt(x0, pts):
    """Marquardt-damped Gauss-Newton; returns (x, iterations, converged)."""
    lo, hi = CONE_THETA_MARGIN, np.pi / 2 - CONE_THETA_MARGIN
    x = x0.copy()
    lam = 1e-3
    f, J = _cone_residuals(x, pts)
    cost = f @ f
    clamped = False
    converged = False
    rel = 1.0
    it = 0
    for it in range(1, CONE_MAX_ITER + 1):
        g = J.T @ f
        if np.linalg.norm(g) < CONE_GRAD_TOL:
            converged = True
            break
        H = J.T @ J
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            xn = x + step
            hit = not lo < xn[5] < hi
            xn[5] = np.clip(xn[5], lo, hi)
            fn, Jn = _cone_residuals(xn, pts)
            cn = fn @ fn
            if cn < cost:
                if hit:
                    clamped = True
                rel = (cost - cn) / max(cost, 1e-300)
                x, f, J, cost = xn, fn, Jn, cn
                lam = max(lam / 10.0, 1e-15)
                improved = True
                break
            lam *= 10.0
        if not improved or rel < 1e-15:
            # no further descent possible in floating point
            converged = np.linalg.norm(J.T @ f) < 1e-6 * max(1.0, np.sqrt(cost))
            break
    if clamped or not lo < x[5] < hi or x[5] in (lo, hi):
        converged = False
    return x, it, converged, cost


def _estimate_normals(pts, k=10):
    k = min(k, len(pts))
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx] - pts[idx].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def _cone_start(pts, axis):
    """Initial (v, a, theta) from an axis guess by a line fit of radius versus height."""
    m = pts.mean(axis=0)
    d = pts - m
    t = d @ axis
    rho = np.linalg.norm(d - np.outer(t, axis), axis=1)
    A = np.stack([t, np.ones_like(t)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, rho, rcond=None)
    if abs(slope) < 1e-6:
        slope = 1e-6 if slope >= 0 else -1e-6
    apex = m + (-icpt / slope) * axis
    a = axis if slope > 0 else -axis
    theta = float(np.clip(np.arctan(abs(slope)), 2 * CONE_THETA_MARGIN, np.pi / 2 - 2 * CONE_THETA_MARGIN))
    return apex, a, theta


def fit_cone(points, cylinder_axis=None) -> FitResult:
    """Cone fit minimising the quadratic-form error by Levenberg-Marquardt.

    Starts from the cylinder-fit axis and from the axis implied by the local
    normals (which all make the same angle with a cone axis); the better of
    the two converged solutions is returned.
    """
    pts = _points(points)
    if len(pts) < 7:
        raise GeometryError("cone fit needs at least 7 points")
    axes = []
    if cylinder_axis is None:
        cylinder_axis = fit_cylinder(pts).params.a
    axes.append(unit(cylinder_axis))
    normals = _estimate_normals(pts)
    # outward normals of a cone all make the same angle with its axis, so they
    # lie on a circle of the unit sphere whose plane normal is the axis
    side = np.einsum("ij,ij->i", normals, pts - pts.mean(axis=0))
    normals = normals * np.where(side < 0, -1.0, 1.0)[:, None]
    nq = normals - normals.mean(axis=0)
    axes.append(unit(np.linalg.eigh(nq.T @ nq)[1][:, 0]))

    best = None
    total = 0
    for ax in axes:
        v0, a0, th0 = _cone_start(pts, ax)
        x0 = np.concatenate([v0, _vec2sph(a0), [th0]])
        x, it, conv, cost = _levenberg_marquardt(x0, pts)
        total += it
        cand = (cost, x, conv)
        if best is None or (cand[2], -cand[0]) > (best[2], -best[0]):
            best = cand
    cost, x, conv = best
    a = unit(_sph2vec(x[3], x[4]))
    theta = float(x[5])
    v = x[:3]
    if not np.all(np.isfinite(v)):
        raise GeometryError("cone fit diverged")
    return _result(Cone(v, a, theta), pts, total, conv)


FITTERS = {
    "plane": fit_plane,
    "sphere": fit_sphere,
    "cylinder": fit_cylinder,
    "cone": fit_cone,
}
