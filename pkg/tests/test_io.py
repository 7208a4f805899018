import json

import numpy as np
import pytest

from brepfit import synthetic as S
from brepfit.inr import InrConfig, TopologyRouting, fit_inr
from brepfit.io import ParseError, export_brep, load_brep, load_segmented_xyz, read_obj, save_segmented_xyz
from brepfit.types import BRepModel, GeometryError, Normalization, Plane, SurfaceModel, TriangleMesh


def _write(tmp_path, text, name="in.xyz"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- segmented XYZ ------------------------------------------------------------

def test_single_label_reindexed(tmp_path):
    lines = "".join(f"{i} {i % 3} {i % 2} 1\n" for i in range(8))
    seg = load_segmented_xyz(_write(tmp_path, lines))
    assert seg.n_clusters == 1 and np.all(seg.labels == 0) and len(seg.cloud.points) == 8


def test_comments_and_unlabelled(tmp_path):
    body = "".join(f"{i} {i * i} {-i}\n" for i in range(10))
    seg = load_segmented_xyz(_write(tmp_path, "# header\n# more\n" + body + "\n"))
    assert seg.n_clusters == 1 and seg.cloud.points[3].tolist() == [3, 9, -3]


@pytest.mark.parametrize("text,line", [
    ("0 0\n", 1),
    ("# c\n0 0 0 0\n1 1 1\n", 3),
    ("0 0 x 1\n", 1),
    ("0 0 0 1.5\n", 1),
    ("0 0 nan\n", 1),
    ("0 0 0 -1\n", 1),
])
def test_parse_errors_carry_line(tmp_path, text, line):
    with pytest.raises(ParseError) as info:
        load_segmented_xyz(_write(tmp_path, text))
    assert info.value.line == line and f":{line}:" in str(info.value)


def test_empty_file_rejected(tmp_path):
    with pytest.raises(GeometryError):
        load_segmented_xyz(_write(tmp_path, "# nothing\n"))


def test_xyz_round_trip(tmp_path):
    pts, labels = S.cube_clusters(20, 0)
    p = tmp_path / "cube.xyz"
    save_segmented_xyz(p, pts, labels)
    seg = load_segmented_xyz(p)
    assert np.array_equal(seg.cloud.points, pts) and np.array_equal(seg.labels, labels)


# --- model directory -----------------------------------------------------------

def test_cube_export_layout(cube_model, tmp_path):
    out = export_brep(cube_model, tmp_path / "cube")
    assert sorted(p.name for p in out.glob("surface_*.obj")) == [f"surface_{i:03d}.obj" for i in range(6)]
    _, _, lines = read_obj(out / "edges.obj")
    assert len(lines) == 12
    assert len((out / "corners.xyz").read_text().splitlines()) == 8
    doc = json.loads((out / "model.json").read_text(encoding="utf-8"))
    assert list(doc) == ["format", "version", "normalization", "surfaces", "edges", "corners",
                         "surface_edge_adjacency", "edge_corner_adjacency", "failures"]


def test_round_trip_bit_exact(capped_cylinder_model, tmp_path):
    m = capped_cylinder_model
    back = load_brep(export_brep(m, tmp_path / "cyl"))
    assert len(back.surfaces) == 3
    for (a, ma), (b, mb) in zip(m.surfaces, back.surfaces):
        assert a.kind is b.kind and a.residual == b.residual
        for f in ("n", "d", "c", "r", "a", "v", "theta"):
            if hasattr(a.params, f):
                assert np.array_equal(getattr(a.params, f), getattr(b.params, f))
        assert np.array_equal(ma.faces, mb.faces)
        assert np.allclose(ma.vertices, mb.vertices, atol=1e-15)
    for ea, eb in zip(m.edges, back.edges):
        assert ea.closed == eb.closed and np.allclose(ea.vertices, eb.vertices, atol=1e-15)
    assert np.array_equal(m.surface_edge_adjacency, back.surface_edge_adjacency)
    # a second export of the re-loaded model is byte-identical
    again = export_brep(back, tmp_path / "cyl2")
    assert (again / "model.json").read_bytes() == (tmp_path / "cyl" / "model.json").read_bytes()


def test_freeform_weights_round_trip(tmp_path):
    pts = S.sample_heightfield(300, 0)
    surf = fit_inr(pts, TopologyRouting(True, False), InrConfig(steps=60, warmup_steps=5))
    mesh = surf.sample_extended_grid(8).compact()
    model = BRepModel([(SurfaceModel.of(surf, 0.125), mesh)], [], np.zeros((0, 3)), np.zeros((1, 0), bool),
                      np.zeros((0, 0), bool), Normalization([1.0, 2.0, 3.0], 2.5))
    back = load_brep(export_brep(model, tmp_path / "ff"))
    s2 = back.surfaces[0][0].params
    for k, v in surf.params.items():
        assert np.array_equal(v, s2.params[k])
    assert s2.routing == surf.routing and s2.uv_bbox == surf.uv_bbox and s2.config == surf.config
    uv = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    assert np.array_equal(surf.decode(uv), s2.decode(uv))
    # empty edge file is present but holds no line elements
    assert read_obj(tmp_path / "ff" / "edges.obj")[2] == []


def test_geometry_written_in_input_frame(tmp_path):
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    model = BRepModel([(SurfaceModel.of(Plane([0, 0, 1], 0.0), 0.0), mesh)], [], np.zeros((0, 3)),
                      np.zeros((1, 0), bool), np.zeros((0, 0), bool), Normalization([10.0, 0, 0], 2.0))
    out = export_brep(model, tmp_path / "p")
    v, f, _ = read_obj(out / "surface_000.obj")
    assert v.tolist() == [[10, 0, 0], [12, 0, 0], [10, 2, 0]] and f.tolist() == [[0, 1, 2]]


def test_unwritable_directory(tmp_path, cube_model):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export_brep(cube_model, blocker / "sub")


def test_load_rejects_foreign_json(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "model.json").write_text('{"format": "other"}')
    with pytest.raises(GeometryError):
        load_brep(d)
