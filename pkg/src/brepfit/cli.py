"""Command-line entry point: ``brepfit reconstruct | fit-surface | evaluate | ablate-inr``.

Exit status is 0 on success, 1 when the pipeline fails and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .ablation import AblationResult, COVERAGE_RADIUS
from .inr import ACTIVATIONS, FitDiverged, InrConfig, TopologyRouting, fit_inr, fit_inr_auto
from .io import export_brep, load_brep, load_segmented_xyz
from .mesh import MeshIndex
from .meshing import TopologyConfig
from .metrics import EvalConfig, evaluate, format_report
from .primitives import FITTERS
from .select import SelectionConfig, SelectionError, fit_best_surface
from .topology import reconstruct
from .types import (Cone, Cylinder, GeometryError, Plane, PointCloud, SegmentedPointCloud, Sphere,
                    SurfaceModel, normalize_to_unit_diagonal)

log = logging.getLogger("brepfit")

THREADS_ENV = "P2B_THREADS"
KINDS = ("auto", "plane", "sphere", "cylinder", "cone", "inr")


class UsageError(Exception):
    pass


def resolve_threads(arg: int | None) -> int:
    """Thread count from ``--threads``, else ``$P2B_THREADS``, else 1; 0 means one per CPU."""
    value = arg
    if value is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                value = int(env)
            except ValueError:
                raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            value = 1
    if value < 0:
        raise UsageError("thread count must be non-negative")
    return value or (os.cpu_count() or 1)


def normalized_cloud(seg: SegmentedPointCloud):
    norm = normalize_to_unit_diagonal(seg.cloud.points)
    return SegmentedPointCloud(PointCloud(norm.apply(seg.cloud.points)), seg.labels), norm


# --- reporting in the original frame ---------------------------------------


def _fmt(x) -> str:
    s = f"{float(x):.6g}"
    return "0" if s == "-0" else s


def _tuple(v) -> str:
    return "(" + ",".join(_fmt(x) for x in v) + ")"


def describe(model: SurfaceModel, norm) -> str:
    """One-line description with parameters mapped back to the input frame."""
    p, s, c = model.params, norm.scale, norm.center
    res = f"residual={_fmt(model.residual * s)}"
    if isinstance(p, Plane):
        return f"plane n={_tuple(p.n)} d={_fmt(p.d * s + p.n @ c)} {res}"
    if isinstance(p, Sphere):
        return f"sphere c={_tuple(p.c * s + c)} r={_fmt(p.r * s)} {res}"
    if isinstance(p, Cylinder):
        return f"cylinder a={_tuple(p.a)} c={_tuple(p.c * s + c)} r={_fmt(p.r * s)} {res}"
    if isinstance(p, Cone):
        return f"cone v={_tuple(p.v * s + c)} a={_tuple(p.a)} theta={_fmt(p.theta)} {res}"
    return f"inr routing={p.routing.name} uv_bbox={_tuple(p.uv_bbox)} {res}"


# --- commands -----------------------------------------------------------------


def cmd_reconstruct(args) -> int:
    seg, norm = normalized_cloud(load_segmented_xyz(args.input))
    topo = TopologyConfig() if args.epsilon is None else TopologyConfig(epsilon=args.epsilon)
    model = reconstruct(seg, SelectionConfig(), InrConfig(seed=args.seed), topo, resolve_threads(args.threads), norm)
    export_brep(model, args.output)
    print(f"surfaces={len(model.surfaces)} edges={len(model.edges)} corners={len(model.corners)}")
    for k, msg in model.failures:
        print(f"warning: cluster {k}: {msg}", file=sys.stderr)
    return 0


def _single_cluster(seg: SegmentedPointCloud, k: int | None):
    if k is None:
        if seg.n_clusters > 1:
            raise UsageError(f"input has {seg.n_clusters} clusters; pick one with --cluster")
        k = 0
    if not 0 <= k < seg.n_clusters:
        raise UsageError(f"--cluster must lie in [0, {seg.n_clusters - 1}]")
    return seg.cluster(k).points


def cmd_fit_surface(args) -> int:
    seg = load_segmented_xyz(args.input)
    pts = _single_cluster(seg, args.cluster)
    norm = normalize_to_unit_diagonal(pts)
    x = norm.apply(pts)
    inr_cfg = InrConfig(seed=args.seed)
    if args.kind == "auto":
        model = fit_best_surface(x, SelectionConfig(), inr_cfg)
    elif args.kind == "inr":
        surf, _ = fit_inr_auto(x, inr_cfg)
        model = SurfaceModel.of(surf, float(surf.distances(x).mean()))
    else:
        model = FITTERS[args.kind](x).model
    print(describe(model, norm))
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate(load_brep(args.gt), load_brep(args.pred), EvalConfig())
    text = format_report(report)
    sys.stdout.write(text)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def cmd_ablate(args) -> int:
    seg = load_segmented_xyz(args.input)
    pts = _single_cluster(seg, args.cluster)
    x = normalize_to_unit_diagonal(pts).apply(pts)
    names = ACTIVATIONS if args.activation == "all" else (args.activation,)
    for name in names:
        cfg = InrConfig.for_activation(name, seed=args.seed)
        surf = fit_inr(x, TopologyRouting(), cfg)
        d = MeshIndex(surf.sample_extended_grid(129).compact()).distance(x)
        r = AblationResult(name, args.seed, float(d.mean()), float(np.mean(d <= COVERAGE_RADIUS)), surf.train_loss)
        print(r.line())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brepfit", description="Recover B-rep CAD models from segmented point clouds.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="run the full pipeline and export a model directory")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fit-surface", help="fit one cluster and print its parameters")
    p.add_argument("input")
    p.add_argument("--kind", choices=KINDS, default="auto")
    p.add_argument("--cluster", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit_surface)

    p = sub.add_parser("evaluate", help="score a reconstruction against a reference model")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--output", default=None, help="also write the report to this file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-inr", help="fit INR activation variants to one cluster")
    p.add_argument("input")
    p.add_argument("--activation", choices=ACTIVATIONS + ("all",), required=True)
    p.add_argument("--cluster", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"brepfit: error: {exc}", file=sys.stderr)
        return 2
    except (GeometryError, SelectionError, FitDiverged, OSError, ValueError, ArithmeticError) as exc:
        print(f"brepfit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
