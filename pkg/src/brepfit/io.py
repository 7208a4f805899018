"""Plain-text file formats: segmented XYZ input and the exported B-rep directory.

An exported model directory holds

* ``surface_###.obj``: one triangle mesh per surface,
* ``edges.obj``: every edge polyline as OBJ ``l`` elements,
* ``corners.xyz``: one corner per line,
* ``model.json``: surface parameters (including INR weights), adjacency
  matrices, the input normalization and any per-cluster failures.

Mesh, edge and corner geometry is written in the original input frame.
Surface parameters stay in the normalized frame the pipeline worked in; the
recorded normalization maps between the two. Floats are written with 17
significant digits, so everything re-loads bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from pathlib import Path

import numpy as np

from .inr import FreeformSurface, InrConfig, TopologyRouting
from .types import (BRepModel, Cone, Cylinder, GeometryError, Normalization, Plane, Polyline, SegmentedPointCloud,
                    Sphere, SurfaceKind, SurfaceModel, TriangleMesh, validate_segmented_cloud)

FORMAT = "brepfit-model"
VERSION = 1


class ParseError(GeometryError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


# --- input -------------------------------------------------------------------


def load_segmented_xyz(path) -> SegmentedPointCloud:
    """Read ``x y z [label]`` lines; ``#`` starts a comment line.

    Without a label column every point belongs to cluster 0. Lines must agree
    on whether they carry a label.
    """
    pts, labels = [], []
    has_label = None
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if len(tok) not in (3, 4):
                raise ParseError(path, no, f"expected 'x y z [label]', got {len(tok)} fields")
            try:
                xyz = [float(t) for t in tok[:3]]
            except ValueError:
                raise ParseError(path, no, "coordinates must be numbers") from None
            if not all(math.isfinite(v) for v in xyz):
                raise ParseError(path, no, "coordinates must be finite")
            labelled = len(tok) == 4
            if has_label is None:
                has_label = labelled
            elif has_label != labelled:
                raise ParseError(path, no, "mixes labelled and unlabelled lines")
            if labelled:
                try:
                    lab = int(tok[3])
                except ValueError:
                    raise ParseError(path, no, "label must be an integer") from None
                if lab < 0:
                    raise ParseError(path, no, "label must be non-negative")
                labels.append(lab)
            pts.append(xyz)
    if not pts:
        raise GeometryError(f"{path}: no points")
    lab = np.array(labels, dtype=np.int64) if has_label else np.zeros(len(pts), dtype=np.int64)
    return validate_segmented_cloud(np.array(pts), lab)


def save_segmented_xyz(path, points, labels=None):
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in enumerate(pts):
            row = " ".join(_num(v) for v in p)
            fh.write(row + (f" {int(labels[i])}\n" if labels is not None else "\n"))


# --- structured text ---------------------------------------------------------


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("cannot serialize a non-finite float")
    s = format(x, ".17g")
    return "0" if s == "-0" else s


def _dump(obj, indent=0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_dump(v) for v in obj) + "]"
        items = [pad + "  " + _dump(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _vec(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def _params_to_dict(p) -> dict:
    if isinstance(p, Plane):
        return {"n": _vec(p.n), "d": p.d}
    if isinstance(p, Sphere):
        return {"c": _vec(p.c), "r": p.r}
    if isinstance(p, Cylinder):
        return {"a": _vec(p.a), "c": _vec(p.c), "r": p.r}
    if isinstance(p, Cone):
        return {"v": _vec(p.v), "a": _vec(p.a), "theta": p.theta}
    if isinstance(p, FreeformSurface):
        return {
            "routing": {"closed_u": p.routing.closed_u, "closed_v": p.routing.closed_v},
            "uv_bbox": list(p.uv_bbox),
            "center": _vec(p.center),
            "scale": p.scale,
            "train_loss": p.train_loss if math.isfinite(p.train_loss) else None,
            "config": dataclasses.asdict(p.config),
            "weights": {k: {"shape": list(v.shape), "data": _vec(v)} for k, v in p.params.items()},
        }
    raise TypeError(f"cannot serialize {type(p).__name__}")


def _params_from_dict(kind: SurfaceKind, d: dict):
    if kind is SurfaceKind.PLANE:
        return Plane(d["n"], d["d"])
    if kind is SurfaceKind.SPHERE:
        return Sphere(d["c"], d["r"])
    if kind is SurfaceKind.CYLINDER:
        return Cylinder(d["a"], d["c"], d["r"])
    if kind is SurfaceKind.CONE:
        return Cone(d["v"], d["a"], d["theta"])
    w = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["weights"].items()}
    cfg = InrConfig(**d["config"])
    loss = d.get("train_loss")
    return FreeformSurface(w, TopologyRouting(**d["routing"]), tuple(d["uv_bbox"]), np.array(d["center"]),
                           d["scale"], cfg, float("nan") if loss is None else loss)


def model_to_dict(model: BRepModel) -> dict:
    surfaces = []
    for i, (sm, _) in enumerate(model.surfaces):
        surfaces.append({"mesh": f"surface_{i:03d}.obj", "kind": sm.kind.value, "residual": sm.residual,
                         "params": _params_to_dict(sm.params)})
    return {
        "format": FORMAT,
        "version": VERSION,
        "normalization": {"center": _vec(model.normalization.center), "scale": model.normalization.scale},
        "surfaces": surfaces,
        "edges": [{"closed": e.closed, "n_vertices": len(e.vertices)} for e in model.edges],
        "corners": [_vec(c) for c in model.normalization.invert(model.corners)] if len(model.corners) else [],
        "surface_edge_adjacency": [[int(x) for x in row] for row in model.surface_edge_adjacency],
        "edge_corner_adjacency": [[int(x) for x in row] for row in model.edge_corner_adjacency],
        "failures": [{"cluster": k, "message": m} for k, m in model.failures],
    }


# --- OBJ ---------------------------------------------------------------------


def write_obj_mesh(path, mesh: TriangleMesh):
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {_num(v[0])} {_num(v[1])} {_num(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def read_obj(path):
    """Vertices, faces and line elements of an OBJ file (0-based indices)."""
    verts, faces, lines = [], [], []
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, 1):
            tok = raw.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                if tok[0] == "v":
                    verts.append([float(t) for t in tok[1:4]])
                elif tok[0] == "f":
                    faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
                elif tok[0] == "l":
                    lines.append([int(t) - 1 for t in tok[1:]])
            except (ValueError, IndexError):
                raise ParseError(path, no, "malformed OBJ element") from None
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3), lines


def write_obj_polylines(path, polylines):
    with open(path, "w", encoding="utf-8") as fh:
        base = 1
        for pl in polylines:
            for v in pl.vertices:
                fh.write(f"v {_num(v[0])} {_num(v[1])} {_num(v[2])}\n")
            idx = list(range(base, base + len(pl.vertices)))
            if pl.closed:
                idx.append(base)
            fh.write("l " + " ".join(map(str, idx)) + "\n")
            base += len(pl.vertices)


# --- export / load -----------------------------------------------------------


def export_brep(model: BRepModel, directory) -> Path:
    """Write the model directory; geometry goes back to the original frame."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    norm = model.normalization
    for i, mesh in enumerate(model.meshes):
        write_obj_mesh(out / f"surface_{i:03d}.obj", TriangleMesh(norm.invert(mesh.vertices), mesh.faces))
    write_obj_polylines(out / "edges.obj", [Polyline(norm.invert(e.vertices), e.closed) for e in model.edges])
    with open(out / "corners.xyz", "w", encoding="utf-8") as fh:
        for c in (norm.invert(model.corners) if len(model.corners) else []):
            fh.write(" ".join(_num(x) for x in c) + "\n")
    (out / "model.json").write_text(_dump(model_to_dict(model)) + "\n", encoding="utf-8")
    return out


def load_brep(directory) -> BRepModel:
    """Read a model directory written by :func:`export_brep`."""
    d = Path(directory)
    try:
        doc = json.loads((d / "model.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GeometryError(f"cannot read {d / 'model.json'}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise GeometryError(f"{d}: not a {FORMAT} directory")
    norm = Normalization(np.array(doc["normalization"]["center"]), doc["normalization"]["scale"])
    surfaces = []
    for s in doc["surfaces"]:
        kind = SurfaceKind(s["kind"])
        v, f, _ = read_obj(d / s["mesh"])
        surfaces.append((SurfaceModel(kind, _params_from_dict(kind, s["params"]), s["residual"]),
                         TriangleMesh(norm.apply(v), f)))
    v, _, lines = read_obj(d / "edges.obj")
    edges = []
    for meta, idx in zip(doc["edges"], lines):
        if meta["closed"]:
            idx = idx[:-1]
        edges.append(Polyline(norm.apply(v[idx]), meta["closed"]))
    if len(edges) != len(doc["edges"]):
        raise GeometryError(f"{d}: edges.obj does not match model.json")
    corners = norm.apply(np.array(doc["corners"], dtype=np.float64).reshape(-1, 3))
    se = np.array(doc["surface_edge_adjacency"], dtype=bool).reshape(len(surfaces), len(edges))
    ec = np.array(doc["edge_corner_adjacency"], dtype=bool).reshape(len(edges), len(corners))
    failures = [(x["cluster"], x["message"]) for x in doc.get("failures", [])]
    return BRepModel(surfaces, edges, corners, se, ec, norm, failures)
