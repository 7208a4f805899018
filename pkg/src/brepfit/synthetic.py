"""Synthetic point clouds sampled from known surfaces.

These generators are the ground-truth oracles for tests and benchmarks: each
returns exact samples (optionally with Gaussian noise) of a surface whose
parameters are known in closed form.
"""

from __future__ import annotations

import numpy as np

from .types import Cone, Cylinder, Plane, Sphere, unit


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def orthonormal_frame(axis) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``axis`` to a right-handed orthonormal frame."""
    a = unit(axis)
    helper = np.eye(3)[int(np.argmin(np.abs(a)))]
    e1 = unit(np.cross(a, helper))
    e2 = np.cross(a, e1)
    return e1, e2


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(_rng(rng).normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_unit(rng) -> np.ndarray:
    return unit(_rng(rng).normal(size=3))


def sample_plane(plane: Plane, n: int, rng=0, half_size: float = 0.5, noise: float = 0.0) -> np.ndarray:
    rng = _rng(rng)
    e1, e2 = orthonormal_frame(plane.n)
    uv = rng.uniform(-half_size, half_size, size=(n, 2))
    pts = plane.d * plane.n + uv[:, :1] * e1 + uv[:, 1:] * e2
    return pts + noise * rng.normal(size=pts.shape)


def sample_sphere(sphere: Sphere, n: int, rng=0, max_polar: float = np.pi, pole=(0.0, 0.0, 1.0), noise=0.0):
    """Uniform samples on the cap of polar angle ``max_polar`` around ``pole``."""
    rng = _rng(rng)
    z = rng.uniform(np.cos(max_polar), 1.0, size=n)
    phi = rng.uniform(0, 2 * np.pi, size=n)
    s = np.sqrt(1 - z**2)
    e1, e2 = orthonormal_frame(pole)
    dirs = z[:, None] * unit(pole) + (s * np.cos(phi))[:, None] * e1 + (s * np.sin(phi))[:, None] * e2
    pts = sphere.c + sphere.r * dirs
    return pts + noise * rng.normal(size=pts.shape)


def sample_cylinder(cyl: Cylinder, n: int, rng=0, height=(-0.5, 0.5), arc=2 * np.pi, noise=0.0):
    rng = _rng(rng)
    e1, e2 = orthonormal_frame(cyl.a)
    phi = rng.uniform(0, arc, size=n)
    t = rng.uniform(*height, size=n)
    pts = cyl.c + t[:, None] * cyl.a + cyl.r * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    return pts + noise * rng.normal(size=pts.shape)


def sample_cone(cone: Cone, n: int, rng=0, height=(0.3, 1.0), arc=2 * np.pi, noise=0.0):
    """Samples uniform in area on the frustum between axial heights ``height``."""
    rng = _rng(rng)
    e1, e2 = orthonormal_frame(cone.a)
    h0, h1 = height
    # area element grows linearly with height
    t = np.sqrt(rng.uniform(h0**2, h1**2, size=n))
    phi = rng.uniform(0, arc, size=n)
    rho = t * np.tan(cone.theta)
    pts = cone.v + t[:, None] * cone.a + rho[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    return pts + noise * rng.normal(size=pts.shape)


def heightfield(x, y):
    return 0.1 * np.sin(4 * x) * np.cos(4 * y)


def sample_heightfield(n: int, rng=0, half_size: float = 0.5, noise: float = 0.0) -> np.ndarray:
    """Samples of ``z = 0.1 sin(4x) cos(4y)`` over ``[-half_size, half_size]^2``."""
    rng = _rng(rng)
    xy = rng.uniform(-half_size, half_size, size=(n, 2))
    pts = np.column_stack([xy, heightfield(xy[:, 0], xy[:, 1])])
    return pts + noise * rng.normal(size=pts.shape)


def heightfield_grid(res: int, half_size: float = 0.5) -> np.ndarray:
    s = np.linspace(-half_size, half_size, res)
    x, y = np.meshgrid(s, s, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel(), heightfield(x.ravel(), y.ravel())])


def cube_clusters(n_per_face: int, rng=0, size: float = 1.0, origin=(0.0, 0.0, 0.0)):
    """Points on the six faces of an axis-aligned cube, labelled one cluster per face."""
    rng = _rng(rng)
    o = np.asarray(origin, dtype=np.float64)
    pts, labels = [], []
    k = 0
    for axis in range(3):
        for side in (0.0, size):
            uv = rng.uniform(0, size, size=(n_per_face, 2))
            p = np.empty((n_per_face, 3))
            others = [i for i in range(3) if i != axis]
            p[:, axis] = side
            p[:, others[0]] = uv[:, 0]
            p[:, others[1]] = uv[:, 1]
            pts.append(p + o)
            labels.append(np.full(n_per_face, k))
            k += 1
    return np.concatenate(pts), np.concatenate(labels)


def cube_vertices(size: float = 1.0, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    g = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.float64)
    return g * size + np.asarray(origin)


def capped_cylinder_clusters(n_side: int, n_cap: int, rng=0, radius=0.5, height=1.0):
    """Closed cylinder around the z axis from z=0 to z=height; clusters side, bottom, top."""
    rng = _rng(rng)
    side = sample_cylinder(Cylinder([0, 0, 1], [0, 0, 0], radius), n_side, rng, height=(0.0, height))
    caps = []
    for z in (0.0, height):
        r = radius * np.sqrt(rng.uniform(0, 1, size=n_cap))
        phi = rng.uniform(0, 2 * np.pi, size=n_cap)
        caps.append(np.column_stack([r * np.cos(phi), r * np.sin(phi), np.full(n_cap, z)]))
    pts = np.concatenate([side] + caps)
    labels = np.concatenate([np.zeros(n_side), np.ones(n_cap), np.full(n_cap, 2)]).astype(np.int64)
    return pts, labels
