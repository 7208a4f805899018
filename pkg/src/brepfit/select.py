"""Pick the simplest surface type that explains a cluster about as well as the best one."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .inr import FitDiverged, InrConfig, fit_inr_auto
from .primitives import FitResult, _points, fit_cone, fit_cylinder, fit_plane, fit_sphere
from .types import GeometryError, SurfaceKind, SurfaceModel

log = logging.getLogger(__name__)

# lower rank = simpler; sphere and cylinder share a rank
SIMPLICITY = {
    SurfaceKind.PLANE: 0,
    SurfaceKind.SPHERE: 1,
    SurfaceKind.CYLINDER: 1,
    SurfaceKind.CONE: 2,
    SurfaceKind.FREEFORM: 3,
}
# order used inside a rank when residuals tie
_TIE_ORDER = [SurfaceKind.PLANE, SurfaceKind.SPHERE, SurfaceKind.CYLINDER, SurfaceKind.CONE, SurfaceKind.FREEFORM]


class SelectionError(GeometryError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SelectionConfig:
    tolerance_factor: float = 0.05
    absolute_floor: float = 2e-3
    # fit every candidate even when a simpler one already meets the floor
    exhaustive: bool = False
    kinds: tuple = field(default=tuple(_TIE_ORDER))

    def __post_init__(self):
        if self.tolerance_factor < 0:
            raise ValueError("tolerance_factor must be non-negative")
        if self.absolute_floor < 0:
            raise ValueError("absolute_floor must be non-negative")
        object.__setattr__(self, "kinds", tuple(SurfaceKind(k) for k in self.kinds))
        if not self.kinds:
            raise ValueError("at least one surface kind is required")

    @property
    def simplicity_order(self) -> tuple:
        return tuple(sorted(self.kinds, key=lambda k: (SIMPLICITY[k], _TIE_ORDER.index(k))))


def select_model(candidates: dict, cfg: SelectionConfig = SelectionConfig()) -> SurfaceModel:
    """Choose among fitted candidates (``{kind: SurfaceModel}``).

    With ``e*`` the smallest residual, the admissible set is every candidate
    with residual at most ``max(e* (1 + delta), floor)``; the lowest simplicity
    rank wins, then the lower residual, then the fixed kind order.
    """
    if not candidates:
        raise SelectionError("no candidate surfaces", {})
    best = min(m.residual for m in candidates.values())
    limit = max(best * (1.0 + cfg.tolerance_factor), cfg.absolute_floor)
    ok = [(SIMPLICITY[k], m.residual, _TIE_ORDER.index(k), k) for k, m in candidates.items() if m.residual <= limit]
    return candidates[min(ok)[3]]


def _fit_one(kind, pts, state, inr_cfg):
    if kind is SurfaceKind.PLANE:
        return fit_plane(pts).model
    if kind is SurfaceKind.SPHERE:
        return fit_sphere(pts).model
    if kind is SurfaceKind.CYLINDER:
        res = fit_cylinder(pts)
        state["cylinder"] = res
        return res.model
    if kind is SurfaceKind.CONE:
        cyl: FitResult | None = state.get("cylinder")
        return fit_cone(pts, None if cyl is None else cyl.params.a).model
    surf, errors = fit_inr_auto(pts, inr_cfg)
    log.debug("freeform routing errors: %s", errors)
    return SurfaceModel.of(surf, float(surf.distances(pts).mean()))


def fit_candidates(cluster, cfg: SelectionConfig = SelectionConfig(), inr_cfg: InrConfig = InrConfig()):
    """Fit candidates rank by rank; returns ``({kind: SurfaceModel}, {kind: error message})``.

    Unless ``cfg.exhaustive`` is set, fitting stops after the first rank whose
    provisional selection already has residual at or below the floor. Later
    candidates can only shrink the admissible threshold towards the floor, so
    the final choice is the same as with every candidate fitted.
    """
    pts = _points(cluster)
    models, failures, state = {}, {}, {}
    order = cfg.simplicity_order
    for i, kind in enumerate(order):
        try:
            models[kind] = _fit_one(kind, pts, state, inr_cfg)
        except (GeometryError, FitDiverged, ArithmeticError, ValueError) as exc:
            failures[kind] = f"{type(exc).__name__}: {exc}"
            log.debug("%s fit failed: %s", kind.value, exc)
        rank_done = i + 1 == len(order) or SIMPLICITY[order[i + 1]] != SIMPLICITY[kind]
        if rank_done and models and not cfg.exhaustive:
            if select_model(models, cfg).residual <= cfg.absolute_floor:
                break
    return models, failures


def fit_best_surface(cluster, cfg: SelectionConfig = SelectionConfig(), inr_cfg: InrConfig = InrConfig()) -> SurfaceModel:
    models, failures = fit_candidates(cluster, cfg, inr_cfg)
    if not models:
        raise SelectionError("every surface fit failed: " + "; ".join(f"{k.value}: {v}" for k, v in failures.items()),
                             failures)
    return select_model(models, cfg)
