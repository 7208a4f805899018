"""Freeform surfaces as a tiny autoencoder with a 2D latent bottleneck.

The encoder maps a 3D point to latent ``(u, v)``, the decoder maps latent
coordinates back to 3D, so the decoder alone is a parametric surface
``[-1, 1]^2 -> R^3``. Both halves have one hidden layer whose units mix SiLU
and sinusoidal activations. Training is plain Adam on the reconstruction
error with hand-written backpropagation; no autodiff framework is involved.

Latent routing
    Open latent axes pass through ``tanh``. A closed (periodic) axis is
    produced as an angle: the encoder emits two pre-activations ``(a, b)``
    and ``u = atan2(a, b) / pi``; the decoder consumes ``(sin(pi u),
    cos(pi u))``, so decoding is exactly 2-periodic in ``u``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import MeshIndex, grid_faces
from .types import GeometryError, PointCloud, TriangleMesh

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "silu", "silu-posenc", "siren", "mixed")


@dataclass(frozen=True)
class TopologyRouting:
    closed_u: bool = False
    closed_v: bool = False

    @property
    def n_closed(self) -> int:
        return int(self.closed_u) + int(self.closed_v)

    @property
    def name(self) -> str:
        return {
            (False, False): "open-open",
            (True, False): "closed-u",
            (False, True): "closed-v",
            (True, True): "closed-both",
        }[(self.closed_u, self.closed_v)]


ROUTINGS = (
    TopologyRouting(False, False),
    TopologyRouting(True, False),
    TopologyRouting(False, True),
    TopologyRouting(True, True),
)


@dataclass(frozen=True)
class InrConfig:
    hidden_width: int = 64
    sine_fraction: float = 0.5
    sine_frequency: float = 30.0
    steps: int = 1000
    warmup_steps: int = 50
    base_learning_rate: float = 1e-2
    full_batch_limit: int = 10000
    batch_size: int = 4096
    seed: int = 0
    margin_fraction: float = 0.10
    # ablation-only knobs
    base_activation: str = "silu"
    posenc_levels: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sine_fraction <= 1.0:
            raise ValueError("sine_fraction must lie in [0, 1]")
        if not 0 <= self.warmup_steps < self.steps:
            raise ValueError("warmup_steps must be smaller than steps")
        if self.margin_fraction < 0:
            raise ValueError("margin_fraction must be non-negative")
        if self.base_activation not in ("silu", "relu"):
            raise ValueError("base_activation must be 'silu' or 'relu'")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be positive")

    @classmethod
    def for_activation(cls, name: str, **kw) -> "InrConfig":
        """Configuration of one variant of the activation ablation."""
        presets = {
            "relu": dict(sine_fraction=0.0, base_activation="relu"),
            "silu": dict(sine_fraction=0.0),
            "silu-posenc": dict(sine_fraction=0.0, posenc_levels=4),
            "siren": dict(sine_fraction=1.0),
            "mixed": dict(),
        }
        if name not in presets:
            raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")
        return cls(**{**presets[name], **kw})

    @property
    def n_sine(self) -> int:
        return int(round(self.hidden_width * self.sine_fraction))


def learning_rate(step: int, cfg: InrConfig) -> float:
    """Linear warm-up to the base rate, then linear decay reaching zero at ``cfg.steps``.

    ``step`` counts from 1.
    """
    base = cfg.base_learning_rate
    if step <= cfg.warmup_steps:
        return base * step / cfg.warmup_steps
    return base * max(cfg.steps - step, 0) / (cfg.steps - cfg.warmup_steps)


# --- network ---------------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class _Net:
    """Stateless forward/backward over a parameter dict."""

    def __init__(self, cfg: InrConfig, routing: TopologyRouting, fast_trig: bool = True):
        self.cfg = cfg
        self.fast_trig = fast_trig
        self.routing = routing
        self.ns = cfg.n_sine
        self.omega = cfg.sine_frequency
        self.relu = cfg.base_activation == "relu"
        self.closed = (routing.closed_u, routing.closed_v)
        self.n_latent_out = 2 + routing.n_closed
        self.n_embed_base = 2 + routing.n_closed
        self.n_embed = self.n_embed_base * (1 + 2 * cfg.posenc_levels)

    # activations; sine units occupy the leading columns
    def _trig(self, z):
        wz = self.omega * z[:, : self.ns]
        if self.fast_trig:
            # float32 trig is vectorized and ~30x faster; precision is ample for training
            wz = wz.astype(np.float32)
        return wz

    def act(self, z):
        return self.act_and_grad(z, need_grad=False)[0]

    def act_and_grad(self, z, need_grad=True):
        """Activation values and (optionally) their derivative with respect to ``z``."""
        ns = self.ns
        h = np.empty_like(z)
        dh = np.empty_like(z) if need_grad else None
        if ns:
            wz = self._trig(z)
            h[:, :ns] = np.sin(wz)
            if need_grad:
                dh[:, :ns] = np.cos(wz)
                dh[:, :ns] *= self.omega
        zb = z[:, ns:]
        if self.relu:
            h[:, ns:] = np.maximum(zb, 0.0)
            if need_grad:
                dh[:, ns:] = zb > 0
        else:
            sg = _sigmoid(zb)
            h[:, ns:] = zb * sg
            if need_grad:
                dh[:, ns:] = sg * (1.0 + zb * (1.0 - sg))
        return h, dh

    def init(self, rng: np.random.Generator) -> dict:
        cfg = self.cfg
        h = cfg.hidden_width

        def hidden_layer(fan_in):
            w = np.empty((fan_in, h))
            ns = self.ns
            # sine units: SIREN uniform init scaled by 1/omega, so omega * w stays O(1)
            lim = np.sqrt(6.0 / fan_in) / self.omega
            w[:, :ns] = rng.uniform(-lim, lim, size=(fan_in, ns))
            # SiLU / ReLU units: He init
            w[:, ns:] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, h - ns))
            b = np.zeros(h)
            b[:ns] = rng.uniform(-1.0 / fan_in, 1.0 / fan_in, size=ns)
            return w, b

        def out_layer(fan_out):
            lim = np.sqrt(6.0 / (h + fan_out))
            return rng.uniform(-lim, lim, size=(h, fan_out)), np.zeros(fan_out)

        W1, b1 = hidden_layer(3)
        W2, b2 = out_layer(self.n_latent_out)
        W3, b3 = hidden_layer(self.n_embed)
        # zero decoder output: training starts from a surface collapsed on the
        # cluster centre instead of a random O(1) offset
        W4, b4 = np.zeros((h, 3)), np.zeros(3)
        return {"W1": W1, "b1": b1, "W2": W2, "b2": b2, "W3": W3, "b3": b3, "W4": W4, "b4": b4}

    # latent routing
    def latent(self, z2):
        """Pre-activations -> (uv, base embedding, cache for backward)."""
        n = len(z2)
        uv = np.empty((n, 2))
        emb = np.empty((n, self.n_embed_base))
        cache = []
        col = 0
        ecol = 0
        for k, closed in enumerate(self.closed):
            if closed:
                a, b = z2[:, col], z2[:, col + 1]
                rho2 = a * a + b * b
                rho = np.sqrt(rho2)
                uv[:, k] = np.arctan2(a, b) / np.pi
                emb[:, ecol] = a / rho
                emb[:, ecol + 1] = b / rho
                cache.append(("closed", col, ecol, a, b, rho))
                col += 2
                ecol += 2
            else:
                t = np.tanh(z2[:, col])
                uv[:, k] = t
                emb[:, ecol] = t
                cache.append(("open", col, ecol, t))
                col += 1
                ecol += 1
        return uv, emb, cache

    def embed_uv(self, uv):
        cols = []
        for k, closed in enumerate(self.closed):
            if closed:
                cols += [np.sin(np.pi * uv[:, k]), np.cos(np.pi * uv[:, k])]
            else:
                cols.append(uv[:, k])
        return np.column_stack(cols)

    def posenc(self, e):
        if self.cfg.posenc_levels == 0:
            return e
        feats = [e]
        for l in range(self.cfg.posenc_levels):
            f = np.pi * 2.0**l
            feats += [np.sin(f * e), np.cos(f * e)]
        return np.concatenate(feats, axis=1)

    def dposenc(self, e, g):
        if self.cfg.posenc_levels == 0:
            return g
        m = e.shape[1]
        out = g[:, :m].copy()
        for l in range(self.cfg.posenc_levels):
            f = np.pi * 2.0**l
            gs = g[:, m * (1 + 2 * l) : m * (2 + 2 * l)]
            gc = g[:, m * (2 + 2 * l) : m * (3 + 2 * l)]
            out += gs * f * np.cos(f * e) - gc * f * np.sin(f * e)
        return out

    def encode(self, p, x, need_grad=False):
        z1 = x @ p["W1"] + p["b1"]
        h1, d1 = self.act_and_grad(z1, need_grad)
        z2 = h1 @ p["W2"] + p["b2"]
        return d1, h1, z2

    def decode_embedding(self, p, emb, need_grad=False):
        e = self.posenc(emb)
        z3 = e @ p["W3"] + p["b3"]
        h3, d3 = self.act_and_grad(z3, need_grad)
        y = h3 @ p["W4"] + p["b4"]
        return e, d3, h3, y

    def loss_and_grad(self, p, x, need_grad=True):
        n = len(x)
        d1, h1, z2 = self.encode(p, x, need_grad)
        uv, emb, cache = self.latent(z2)
        e, d3, h3, y = self.decode_embedding(p, emb, need_grad)
        r = y - x
        loss = float(np.sum(r * r) / n)
        if not need_grad:
            return loss, None
        g = {}
        dy = 2.0 * r / n
        g["W4"] = h3.T @ dy
        g["b4"] = dy.sum(axis=0)
        dz3 = (dy @ p["W4"].T) * d3
        g["W3"] = e.T @ dz3
        g["b3"] = dz3.sum(axis=0)
        demb = self.dposenc(emb, dz3 @ p["W3"].T)
        dz2 = np.zeros_like(z2)
        for item in cache:
            if item[0] == "open":
                _, col, ecol, t = item
                dz2[:, col] = demb[:, ecol] * (1.0 - t * t)
            else:
                _, col, ecol, a, b, rho = item
                r3 = rho**3
                ga, gb = demb[:, ecol], demb[:, ecol + 1]
                dz2[:, col] = (ga * b * b - gb * a * b) / r3
                dz2[:, col + 1] = (gb * a * a - ga * a * b) / r3
        g["W2"] = h1.T @ dz2
        g["b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ p["W2"].T) * d1
        g["W1"] = x.T @ dz1
        g["b1"] = dz1.sum(axis=0)
        return loss, g


# --- trained surface -------------------------------------------------------


def _frozen_params(p):
    out = {}
    for k, v in p.items():
        a = np.array(v, dtype=np.float64, copy=True)
        a.setflags(write=False)
        out[k] = a
    return out


@dataclass(frozen=True, eq=False)
class FreeformSurface:
    params: dict
    routing: TopologyRouting
    uv_bbox: tuple  # (u_min, u_max, v_min, v_max)
    center: np.ndarray
    scale: float
    config: InrConfig = field(default_factory=InrConfig)
    train_loss: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "params", _frozen_params(self.params))
        c = np.array(self.center, dtype=np.float64).reshape(3)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "uv_bbox", tuple(float(x) for x in self.uv_bbox))
        u0, u1, v0, v1 = self.uv_bbox
        if not (-1.0 <= u0 <= u1 <= 1.0 and -1.0 <= v0 <= v1 <= 1.0):
            raise GeometryError("uv bounding box must lie inside [-1, 1]^2")
        if self.routing.closed_u and (u0, u1) != (-1.0, 1.0):
            raise GeometryError("closed u axis must span [-1, 1]")
        if self.routing.closed_v and (v0, v1) != (-1.0, 1.0):
            raise GeometryError("closed v axis must span [-1, 1]")

    @functools.cached_property
    def _net(self) -> _Net:
        return _Net(self.config, self.routing)

    def encode(self, points) -> np.ndarray:
        """Latent coordinates of 3D points, shape (N, 2)."""
        x = (np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.center) / self.scale
        _, _, z2 = self._net.encode(self.params, x)
        return self._net.latent(z2)[0]

    def decode(self, uv) -> np.ndarray:
        """3D points (original coordinates) for latent coordinates, shape (N, 3)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        y = self._net.decode_embedding(self.params, self._net.embed_uv(uv))[3]
        return y * self.scale + self.center

    def grid_axes(self, resolution: int, margin: float | None = None):
        if resolution < 2:
            raise ValueError("resolution must be at least 2")
        m = self.config.margin_fraction if margin is None else margin
        u0, u1, v0, v1 = self.uv_bbox
        axes = []
        for closed, lo, hi in ((self.routing.closed_u, u0, u1), (self.routing.closed_v, v0, v1)):
            if closed:
                axes.append(-1.0 + 2.0 * np.arange(resolution - 1) / (resolution - 1))
            else:
                w = hi - lo
                axes.append(np.linspace(lo - m * w, hi + m * w, resolution))
        return axes

    def sample_extended_grid(self, resolution: int, margin: float | None = None) -> TriangleMesh:
        """Decode a regular latent grid over the (margin-inflated) bounding box."""
        au, av = self.grid_axes(resolution, margin)
        uu, vv = np.meshgrid(au, av, indexing="ij")
        verts = self.decode(np.column_stack([uu.ravel(), vv.ravel()]))
        faces = grid_faces(len(au), len(av), wrap_cols=self.routing.closed_v, wrap_rows=self.routing.closed_u)
        return TriangleMesh(verts, faces)

    @functools.cached_property
    def _distance_index(self) -> MeshIndex:
        return MeshIndex(self.sample_extended_grid(129).compact())

    def distances(self, points) -> np.ndarray:
        """Distance to the decoded surface (sampled as a 129x129 grid with margin)."""
        return self._distance_index.distance(points)


# --- fitting ---------------------------------------------------------------


class FitDiverged(RuntimeError):
    pass


def _cluster_normalization(x: np.ndarray):
    center = x.mean(axis=0)
    scale = float(np.max(np.abs(x - center)))
    return center, scale if scale > 0 else 1.0


def train(x: np.ndarray, routing: TopologyRouting, cfg: InrConfig, history: list | None = None) -> dict:
    """Train network parameters on normalized points ``x``; returns the parameter dict."""
    rng = np.random.default_rng(cfg.seed)
    net = _Net(cfg, routing)
    p = net.init(rng)
    m = {k: np.zeros_like(v) for k, v in p.items()}
    s = {k: np.zeros_like(v) for k, v in p.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    full = len(x) <= cfg.full_batch_limit
    for step in range(1, cfg.steps + 1):
        batch = x if full else x[rng.choice(len(x), size=cfg.batch_size, replace=False)]
        loss, g = net.loss_and_grad(p, batch)
        if not np.isfinite(loss):
            raise FitDiverged(f"non-finite loss at step {step} (routing {routing.name}, seed {cfg.seed})")
        if history is not None:
            history.append(loss)
        lr = learning_rate(step, cfg)
        c1 = 1.0 - b1**step
        c2 = 1.0 - b2**step
        for k in p:
            m[k] = b1 * m[k] + (1 - b1) * g[k]
            s[k] = b2 * s[k] + (1 - b2) * g[k] * g[k]
            p[k] = p[k] - lr * (m[k] / c1) / (np.sqrt(s[k] / c2) + eps)
    return p


def fit_inr(points, routing: TopologyRouting = TopologyRouting(), cfg: InrConfig = InrConfig(),
            history: list | None = None, bbox_points=None) -> FreeformSurface:
    """Fit a freeform surface to a cluster.

    ``bbox_points`` (default: the training points) are encoded to define the
    latent bounding box.
    """
    pts = points.points if isinstance(points, PointCloud) else PointCloud(points).points
    if len(pts) < 8:
        raise GeometryError("freeform fit needs at least 8 points")
    center, scale = _cluster_normalization(pts)
    x = (pts - center) / scale
    p = train(x, routing, cfg, history)
    net = _Net(cfg, routing)
    bx = x if bbox_points is None else (np.asarray(bbox_points, dtype=np.float64) - center) / scale
    uv = net.latent(net.encode(p, bx)[2])[0]
    u0, v0 = uv.min(axis=0)
    u1, v1 = uv.max(axis=0)
    if routing.closed_u:
        u0, u1 = -1.0, 1.0
    if routing.closed_v:
        v0, v1 = -1.0, 1.0
    loss = net.loss_and_grad(p, x, need_grad=False)[0]
    return FreeformSurface(p, routing, (u0, u1, v0, v1), center, scale, cfg, loss)


def reconstruction_error(surface: FreeformSurface, points) -> float:
    """Mean squared ``|decode(encode(p)) - p|^2`` in the surface's normalized units."""
    pts = np.asarray(points, dtype=np.float64)
    rec = surface.decode(surface.encode(pts))
    return float(np.mean(np.sum(((rec - pts) / surface.scale) ** 2, axis=1)))


def fit_inr_auto(points, cfg: InrConfig = InrConfig()):
    """Fit all four routings and keep the one with the lowest held-out error.

    Returns ``(surface, {routing name: validation error})``. Ties resolve to
    the routing with fewer closed axes.
    """
    pts = points.points if isinstance(points, PointCloud) else PointCloud(points).points
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(pts))
    n_val = max(1, int(round(0.1 * len(pts))))
    val, trn = pts[perm[:n_val]], pts[perm[n_val:]]
    best, best_err, errors = None, np.inf, {}
    for routing in sorted(ROUTINGS, key=lambda r: r.n_closed):
        surf = fit_inr(trn, routing, cfg, bbox_points=pts)
        err = reconstruction_error(surf, val)
        errors[routing.name] = err
        log.debug("routing %s: validation error %.3g", routing.name, err)
        if err < best_err:
            best, best_err = surf, err
    return best, errors


def with_config(surface: FreeformSurface, **kw) -> FreeformSurface:
    return replace(surface, config=replace(surface.config, **kw))
