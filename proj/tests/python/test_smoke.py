import json
import math
import urllib.error
import urllib.request

import pytest

import streetbase


def point(x, y):
    return {"type": "Feature", "geometry": {"type": "Point", "coordinates": [x, y]}, "properties": {}}


def line(*pts, **props):
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": [list(p) for p in pts]},
        "properties": props,
    }


@pytest.fixture
def demo():
    engine = streetbase.Engine()
    engine.build_demo()
    return engine


def test_demo_is_coherent(demo):
    assert demo.check() == []
    stats = demo.stats()
    assert stats["layers"]["road_edge"]["features"] == 49
    assert stats["layers"]["road_node"]["features"] == 30


def test_generate_is_idempotent(demo):
    assert demo.generate() == 0


def test_edit_through_views_cascades():
    engine = streetbase.Engine()
    engine.insert("edit_node", point(0, 0))
    engine.insert("edit_node", point(60, 0))
    out = engine.insert("edit_edge", line((0, 0), (60, 0), width=10.0, lane_count=2))
    layers = {r["layer"] for r in out["records"]}
    assert {"road_edge", "section", "lane"} <= layers
    (edge_id,) = out["ids"]
    section = engine.query("section")["features"]
    assert len(section) == 1 and section[0]["properties"]["edge_id"] == edge_id


def test_engine_errors_carry_codes():
    engine = streetbase.Engine()
    with pytest.raises(streetbase.EngineError) as info:
        engine.insert("road_edge", line((0, 0), (1, 0)))
    assert streetbase.error_info(info.value)["code"] == "Rejected"
    with pytest.raises(streetbase.EngineError) as info:
        engine.query("no_such_layer")
    assert streetbase.error_info(info.value)["code"] == "NotFound"


def test_save_load_round_trip(demo, tmp_path):
    demo.save(tmp_path / "a")
    again = streetbase.Engine.open(tmp_path / "a")
    again.save(tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
    assert again.check() == []


def test_round_extent_area():
    poly = streetbase.round_extent(0, 0, 40, 20)
    ring = poly["coordinates"][0]
    area = 0.5 * abs(sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring, ring[1:])))
    assert area == pytest.approx(800 - (4 - math.pi) * 25, rel=0.01)


def test_altimetry_profile_offsets():
    prof, z_min = streetbase.altimetry_profile([(0, 0, 0), (10, 0, 2), (20, 0, 1)])
    assert z_min == 0
    assert [p[1] for p in prof] == pytest.approx([0, 2, 1], abs=1e-12)


def test_http_service(demo):
    service = streetbase.Service(demo.native)
    port = service.start("127.0.0.1", 0)
    base = f"http://127.0.0.1:{port}"
    try:
        with urllib.request.urlopen(base + "/layers") as r:
            names = {l["name"] for l in json.load(r)}
        assert {"road_edge", "edit_edge", "conflicts"} <= names
        with urllib.request.urlopen(base + "/layers/road_edge/features?bbox=0,0,150,50") as r:
            assert len(json.load(r)["features"]) > 0
        with urllib.request.urlopen(base + "/conflicts") as r:
            kinds = [f["properties"]["kind"] for f in json.load(r)["features"]]
        assert kinds == ["concurrent"]
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(base + "/layers/nope/features")
        assert err.value.code == 404
        assert json.load(err.value)["code"] == "NotFound"
    finally:
        service.stop()
