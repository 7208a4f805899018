import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brepfit.mesh import closest_points_on_triangles, grid_faces, sample_mesh
from brepfit.meshing import TopologyConfig, mesh_surface
from brepfit.metrics import EvalConfig, chamfer, evaluate, format_report, hungarian_match, p_coverage, prf, residual_error
from brepfit.primitives import fit_sphere
from brepfit.synthetic import sample_sphere
from brepfit.types import BRepModel, Normalization, Sphere, TriangleMesh


def _square(z=0.0, res=5):
    s = np.linspace(0, 1, res)
    u, v = np.meshgrid(s, s, indexing="ij")
    return TriangleMesh(np.column_stack([u.ravel(), v.ravel(), np.full(res * res, z)]), grid_faces(res, res))


def _brute_assignment(c):
    n = c.shape[0]
    return min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def _brute_chamfer(a, b):
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    return (d.min(axis=1).mean() + d.min(axis=0).mean()) / 2


# --- brute-force oracles first ------------------------------------------------

def test_hungarian_equals_brute_force(rng):
    for _ in range(100):
        c = rng.uniform(0, 1, size=(6, 6))
        pairs, total = hungarian_match(c)
        assert total == pytest.approx(_brute_assignment(c), abs=1e-12)
        assert sorted(i for i, _ in pairs) == list(range(6)) and sorted(j for _, j in pairs) == list(range(6))


def test_chamfer_equals_brute_force(rng):
    a, b = rng.normal(size=(1000, 3)), rng.normal(size=(1000, 3)) + 0.3
    assert abs(chamfer(a, b) - _brute_chamfer(a, b)) < 1e-12


def test_residual_matches_brute_force_sphere(rng):
    sph = Sphere([0.1, -0.2, 0.3], 0.7)
    noisy = sample_sphere(sph, 2000, rng, noise=0.005)
    fitted = fit_sphere(noisy).model
    cfg = TopologyConfig(mesh_resolution=60)
    mesh = mesh_surface(fitted, noisy, cfg)
    samples = sample_sphere(sph, 300, rng)
    got = residual_error(samples, mesh)
    # brute force: nearest point over every triangle of the mesh
    tri = mesh.triangles
    brute = np.mean([np.linalg.norm(closest_points_on_triangles(np.repeat(p[None], len(tri), 0), tri) - p,
                                    axis=1).min() for p in samples])
    assert got == pytest.approx(brute, abs=1e-12)
    # and close to the analytic distance to the fitted sphere, up to chordal error
    analytic = np.mean(np.abs(np.linalg.norm(samples - fitted.params.c, axis=1) - fitted.params.r))
    assert abs(got - analytic) < 2 * (np.pi / 60) ** 2 * fitted.params.r


# --- residual / coverage ----------------------------------------------------------

def test_residual_identical_zero_and_offset():
    m = _square()
    s = sample_mesh(m, 500, np.random.default_rng(0))
    assert residual_error(s, m) == pytest.approx(0.0, abs=1e-15)
    assert residual_error(s, _square(0.01)) == pytest.approx(0.01, abs=1e-9)
    with pytest.raises(ValueError):
        residual_error(np.zeros((0, 3)), m)


def test_p_coverage_examples():
    m = _square()
    s = sample_mesh(m, 1000, np.random.default_rng(1))
    assert p_coverage(s, [m]) == 1.0
    moved = s.copy()
    moved[:500, 2] += 0.02
    assert p_coverage(moved, [m], 0.01) == 0.5
    with pytest.raises(ValueError):
        p_coverage(s, [])


# --- matching ------------------------------------------------------------------

def test_hungarian_examples():
    assert hungarian_match([[0, 1], [1, 0]]) == ([(0, 0), (1, 1)], 0.0)
    assert hungarian_match([[1.0]]) == ([(0, 0)], 1.0)
    pairs, total = hungarian_match([[5, 1, 9], [1, 5, 9]])
    assert pairs == [(0, 1), (1, 0)] and total == 2.0
    with pytest.raises(ValueError):
        hungarian_match([[np.inf]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_hungarian_not_worse_than_identity(n, seed):
    c = np.random.default_rng(seed).uniform(0, 1, size=(n, n))
    assert hungarian_match(c)[1] <= np.trace(c) + 1e-12


# --- precision / recall ----------------------------------------------------------

def test_prf_conventions():
    assert prf(np.zeros((0, 0)), 0.1) == (1.0, 1.0, 1.0)
    assert prf(np.zeros((0, 3)), 0.1) == (0.0, 0.0, 0.0)
    assert prf(np.zeros((3, 0)), 0.1) == (0.0, 0.0, 0.0)
    assert prf(np.diag([0.01] * 8) + 1 - np.eye(8), 0.03) == (1.0, 1.0, 1.0)


def test_prf_uses_one_to_one_matching():
    # two predictions close to the same reference: only one can count
    d = np.array([[0.0, 1.0], [0.0, 1.0]])
    p, r, f = prf(d, 0.1)
    assert (p, r) == (0.5, 0.5) and f == pytest.approx(0.5)
    # greedy would pair (0, 0) and lose the second match
    d = np.array([[0.01, 0.02], [0.02, 0.5]])
    assert prf(d, 0.03) == (1.0, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**31))
def test_prf_monotone_and_harmonic(n, m, seed):
    d = np.random.default_rng(seed).uniform(0, 0.1, size=(n, m))
    for thetas in (EvalConfig().surface_thresholds, EvalConfig().edge_thresholds, EvalConfig().corner_thresholds):
        scores = [prf(d, t) for t in sorted(thetas)]
        for lo, hi in zip(scores, scores[1:]):
            assert all(a <= b + 1e-15 for a, b in zip(lo, hi))
        for p, r, f in scores:
            assert 0 <= p <= 1 and 0 <= r <= 1
            assert f == (2 * p * r / (p + r) if p + r > 0 else 0.0)


# --- chamfer -----------------------------------------------------------------

def test_chamfer_examples():
    a = np.random.default_rng(2).normal(size=(50, 3))
    assert chamfer(a, a) == 0.0
    assert chamfer([[0, 0, 0]], [[0, 0, 0.25]]) == pytest.approx(0.25)
    assert chamfer(a, a + 1e-3) > 0
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), a)


# --- full report ---------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(surface_thresholds=(0.03, 0.06))
    with pytest.raises(ValueError):
        EvalConfig(pcov_radius=0)


def test_self_evaluation_perfect(cube_model):
    rep = evaluate(cube_model, cube_model, EvalConfig(samples_per_surface=2048))
    # point-to-triangle distances of on-surface samples carry round-off only
    assert rep["Err"] <= 1e-12 and rep["Pcov"] == 1.0 and rep["chamfer"] == 0.0
    assert all(v == 1.0 for k, v in rep.items() if "@" in k)
    assert (rep["n_surfaces"], rep["n_edges"], rep["n_corners"]) == (6, 12, 8)


def test_shifted_prediction_scored(cube_model):
    m = cube_model
    assert m.normalization.scale == 1.0
    # same geometry reported in a frame shifted by 0.02 along z
    moved = BRepModel(m.surfaces, m.edges, m.corners, m.surface_edge_adjacency, m.edge_corner_adjacency,
                      Normalization(m.normalization.center + [0, 0, 0.02], 1.0))
    rep = evaluate(m, moved, EvalConfig(samples_per_surface=2048))
    assert rep["corner_F@0.03"] == 1.0 and rep["corner_F@0.01"] == 0.0
    assert 0 < rep["Err"] < 0.02 + 1e-9
    text = format_report(rep)
    assert text.splitlines()[0].startswith("Err=") and text.endswith("\n")
