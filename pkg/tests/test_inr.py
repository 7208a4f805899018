import numpy as np
import pytest

from brepfit import synthetic as S
from brepfit.inr import (ACTIVATIONS, FitDiverged, FreeformSurface, InrConfig, ROUTINGS, TopologyRouting, _Net,
                         fit_inr, fit_inr_auto, learning_rate, reconstruction_error, train)
from brepfit.types import Cylinder, GeometryError, Plane

SMALL = dict(hidden_width=16, steps=200, warmup_steps=20)


def _central_differences(net, p, x, h=1e-6):
    out = {}
    for k, v in p.items():
        g = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            q = {kk: vv.copy() for kk, vv in p.items()}
            q[k][idx] += h
            up = net.loss_and_grad(q, x, need_grad=False)[0]
            q[k][idx] -= 2 * h
            dn = net.loss_and_grad(q, x, need_grad=False)[0]
            g[idx] = (up - dn) / (2 * h)
        out[k] = g
    return out


@pytest.mark.parametrize("routing", ROUTINGS, ids=lambda r: r.name)
@pytest.mark.parametrize("activation", ["mixed", "silu-posenc"])
def test_gradients_match_finite_differences(routing, activation):
    cfg = InrConfig.for_activation(activation, hidden_width=8)
    net = _Net(cfg, routing, fast_trig=False)
    rng = np.random.default_rng(3)
    p = net.init(rng)
    # the decoder output starts at zero, which would zero the decoder-hidden gradients
    p["W4"] = rng.normal(0.0, 0.3, size=p["W4"].shape)
    p["b4"] = rng.normal(0.0, 0.1, size=p["b4"].shape)
    x = rng.uniform(-1, 1, size=(10, 3))
    fd = _central_differences(net, p, x)
    _, g = net.loss_and_grad(p, x)
    for k in p:
        scale = max(np.abs(fd[k]).max(), 1e-8)
        assert np.abs(g[k] - fd[k]).max() / scale < 1e-4, k


def test_learning_rate_schedule():
    cfg = InrConfig(steps=1000, warmup_steps=50, base_learning_rate=1e-2)
    assert learning_rate(1, cfg) == pytest.approx(1e-2 / 50)
    assert learning_rate(50, cfg) == pytest.approx(1e-2)
    assert learning_rate(1000, cfg) == 0.0
    lrs = [learning_rate(s, cfg) for s in range(50, 1001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_config_validation_and_presets():
    with pytest.raises(ValueError):
        InrConfig(sine_fraction=1.5)
    with pytest.raises(ValueError):
        InrConfig(steps=10, warmup_steps=10)
    with pytest.raises(ValueError):
        InrConfig(margin_fraction=-0.1)
    assert InrConfig.for_activation("siren").n_sine == 64
    assert InrConfig.for_activation("silu").n_sine == 0
    assert InrConfig.for_activation("silu-posenc").posenc_levels > 0
    assert InrConfig.for_activation("relu").base_activation == "relu"
    assert InrConfig().n_sine == 32
    with pytest.raises(ValueError):
        InrConfig.for_activation("tanh")
    assert set(ACTIVATIONS) == {"relu", "silu", "silu-posenc", "siren", "mixed"}


@pytest.fixture(scope="module")
def plane_fit():
    pts = S.sample_plane(Plane([0, 0, 1], 0.0), 200, 0, half_size=0.5)
    return pts, fit_inr(pts, TopologyRouting(), InrConfig(seed=0))


def test_plane_fit_rms(plane_fit):
    pts, surf = plane_fit
    assert np.sqrt(reconstruction_error(surf, pts)) < 1e-3


def test_plane_extrapolation_stays_on_plane(plane_fit):
    _, surf = plane_fit
    u0, u1, v0, v1 = surf.uv_bbox
    du, dv = 0.05 * (u1 - u0), 0.05 * (v1 - v0)
    ring = [(u0 - du, v) for v in np.linspace(v0, v1, 20)] + [(u1 + du, v) for v in np.linspace(v0, v1, 20)]
    ring += [(u, v0 - dv) for u in np.linspace(u0, u1, 20)] + [(u, v1 + dv) for u in np.linspace(u0, u1, 20)]
    assert np.abs(surf.decode(np.array(ring))[:, 2]).max() < 0.02


def test_encode_properties(plane_fit):
    pts, surf = plane_fit
    uv = surf.encode(pts)
    u0, u1, v0, v1 = surf.uv_bbox
    assert np.all((uv[:, 0] >= u0) & (uv[:, 0] <= u1) & (uv[:, 1] >= v0) & (uv[:, 1] <= v1))
    assert np.all(np.abs(uv) <= 1)
    assert np.array_equal(surf.encode(pts[:5]), surf.encode(pts[:5]))
    centre = surf.decode([[(u0 + u1) / 2, (v0 + v1) / 2]])[0]
    lo, hi = pts.min(0), pts.max(0)
    pad = 0.1 * (hi - lo)
    assert np.all(centre >= lo - pad) and np.all(centre <= hi + pad)


def test_cycle_consistency_on_grid(plane_fit):
    _, surf = plane_fit
    u0, u1, v0, v1 = surf.uv_bbox
    g = np.stack(np.meshgrid(np.linspace(u0, u1, 10), np.linspace(v0, v1, 10)), -1).reshape(-1, 2)
    back = surf.encode(surf.decode(g))
    assert np.sqrt(np.mean(np.sum((back - g) ** 2, axis=1))) < 0.05


def test_training_is_deterministic():
    pts = S.sample_plane(Plane([0, 0, 1], 0.0), 100, 1)
    a = fit_inr(pts, TopologyRouting(), InrConfig(seed=4, **SMALL))
    b = fit_inr(pts, TopologyRouting(), InrConfig(seed=4, **SMALL))
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_loss_never_jumps_over_100_step_window():
    pts = S.sample_heightfield(2000, 0)
    x = (pts - pts.mean(0)) / np.abs(pts - pts.mean(0)).max()
    hist = []
    train(x, TopologyRouting(), InrConfig(seed=0), history=hist)
    h = np.array(hist)
    for s in range(0, len(h) - 100):
        assert h[s + 100] <= 1.1 * h[s]


@pytest.mark.parametrize("routing", ROUTINGS, ids=lambda r: r.name)
def test_closed_dims_are_exactly_periodic(routing):
    net = _Net(InrConfig(hidden_width=8), routing)
    p = net.init(np.random.default_rng(0))
    surf = FreeformSurface(p, routing, (-1, 1, -1, 1), np.zeros(3), 1.0, InrConfig(hidden_width=8))
    uv = np.random.default_rng(1).uniform(-1, 1, size=(100, 2))
    shift = np.array([2.0 if routing.closed_u else 0.0, 2.0 if routing.closed_v else 0.0])
    if routing.n_closed:
        assert np.array_equal(surf.decode(uv), surf.decode(uv + shift))
    if routing.closed_u:
        v = uv[:, 1]
        assert np.array_equal(surf.decode(np.column_stack([-np.ones(100), v])),
                              surf.decode(np.column_stack([np.ones(100), v])))


def test_sample_extended_grid_counts():
    cfg = InrConfig(hidden_width=8)
    p = _Net(cfg, TopologyRouting()).init(np.random.default_rng(0))
    open_surf = FreeformSurface(p, TopologyRouting(), (-0.5, 0.5, -0.5, 0.5), np.zeros(3), 1.0, cfg)
    m = open_surf.sample_extended_grid(2)
    assert len(m.vertices) == 4 and len(m.faces) == 2
    assert len(open_surf.sample_extended_grid(7).faces) == 2 * 6 * 6
    r = TopologyRouting(closed_u=True)
    pc = _Net(cfg, r).init(np.random.default_rng(0))
    ring = FreeformSurface(pc, r, (-1, 1, -0.5, 0.5), np.zeros(3), 1.0, cfg)
    mr = ring.sample_extended_grid(9)
    assert len(mr.vertices) == 9 * 8
    assert len(mr.faces) == 2 * 8 * 8  # the seam row is welded, not duplicated


def test_surface_invariants():
    cfg = InrConfig(hidden_width=8)
    p = _Net(cfg, TopologyRouting(True, False)).init(np.random.default_rng(0))
    with pytest.raises(GeometryError):
        FreeformSurface(p, TopologyRouting(True, False), (-0.5, 1, -1, 1), np.zeros(3), 1.0, cfg)
    with pytest.raises(GeometryError):
        FreeformSurface(p, TopologyRouting(), (-1.5, 1, -1, 1), np.zeros(3), 1.0, cfg)


def test_fit_requires_eight_points():
    with pytest.raises(GeometryError):
        fit_inr(np.zeros((7, 3)))


def test_divergence_aborts():
    pts = S.sample_plane(Plane([0, 0, 1], 0.0), 50, 0)
    with pytest.raises(FitDiverged, match="non-finite"):
        fit_inr(pts, TopologyRouting(), InrConfig(base_learning_rate=1e200, **SMALL))


def test_auto_routing_prefers_closed_for_ring():
    pts = S.sample_cylinder(Cylinder([0, 0, 1], [0, 0, 0], 0.5), 2000, 0, height=(-0.3, 0.3))
    surf, errors = fit_inr_auto(pts, InrConfig(seed=0))
    assert surf.routing.n_closed >= 1
    assert errors["open-open"] > min(errors["closed-u"], errors["closed-v"])


def test_closed_ring_mesh_close_to_cylinder():
    cyl = Cylinder([0, 0, 1], [0, 0, 0], 0.5)
    pts = S.sample_cylinder(cyl, 2000, 0, height=(-0.3, 0.3))
    surf = fit_inr(pts, TopologyRouting(closed_u=True), InrConfig(seed=0))
    v = surf.sample_extended_grid(40, margin=0.0).vertices
    radial = np.linalg.norm(v[:, :2], axis=1)
    assert np.abs(radial - 0.5).max() < 0.01
