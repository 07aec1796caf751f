import numpy as np
import pytest

from rds_conley.boxmap import (
    BoxMapError,
    MapBuilder,
    Multimap,
    aggregate,
    build_box_map,
    chain_reachable,
    export_dot,
    parse_mode,
)
from rds_conley.cocycle import double_well, evolve, random_lorenz
from rds_conley.grid import BoxGrid
from rds_conley.noise import generate_ensemble, generate_sample


@pytest.fixture(scope="module")
def dw_maps():
    g = BoxGrid([-2.0], [2.0], [256])
    ens = generate_ensemble("wiener", 6, 0.01, 4.0, 7)
    maps = [build_box_map(double_well(0.1), s, g, 0.5, 0.0, 4) for s in ens]
    return g, ens, maps


def test_box_map_contains_images_of_random_points(dw_maps):
    g, ens, maps = dw_maps
    rng = np.random.default_rng(3)
    for s, m in zip(ens, maps):
        boxes = rng.integers(0, g.n_boxes, 400)
        x = g.lower(boxes)[:, 0] + rng.uniform(0, 1, 400) * g.h[0]
        y = evolve(double_well(0.1), s, x[:, None], 0.5, policy="clamp")
        for b, j in zip(boxes, g.locate(y[:, 0])):
            assert m.relation.has_edge(int(b), int(j))


def test_lorenz_box_map_soundness_with_exterior():
    g = BoxGrid([-3.0] * 3, [3.0] * 3, [8, 8, 8], exterior=True)
    s = generate_sample("ou", 2, 0.01, 2.0, channels=3)
    m = build_box_map(random_lorenz(), s, g, 0.2, 0.0, 3)
    rng = np.random.default_rng(0)
    boxes = rng.integers(0, g.n_boxes, 300)
    x = g.lower(boxes) + rng.uniform(0, 1, (300, 3)) * g.h
    y = evolve(random_lorenz(), s, x, 0.2, policy="free")
    for b, j in zip(boxes, g.locate(y)):
        assert m.relation.has_edge(int(b), int(j))


def test_aggregation_is_monotone_in_quantile(dw_maps):
    g, _, maps = dw_maps
    rels = [aggregate(maps, f"quantile({q})").relation for q in (0.2, 0.5, 0.8)]
    rels.append(aggregate(maps, "all_samples").relation)
    for loose, tight in zip(rels, rels[1:]):
        s1, d1 = loose.edges_within()
        s2, d2 = tight.edges_within()
        assert set(zip(s2.tolist(), d2.tolist())) <= set(zip(s1.tolist(), d1.tolist()))


def test_all_samples_is_edgewise_intersection(dw_maps):
    g, _, maps = dw_maps
    inter = None
    for m in maps:
        s, d = m.relation.edges_within()
        e = set(zip(s.tolist(), d.tolist()))
        inter = e if inter is None else inter & e
    s, d = aggregate(maps, "all_samples").relation.edges_within()
    assert set(zip(s.tolist(), d.tolist())) == inter
    # the counting path must agree with the rectangle intersection
    s, d = aggregate(maps, "quantile(1.0)").relation.edges_within()
    assert set(zip(s.tolist(), d.tolist())) == inter


def test_single_sample_aggregation_is_identity(dw_maps):
    _, _, maps = dw_maps
    for mode in ("all_samples", "quantile(0.3)"):
        agg = aggregate(maps[:1], mode)
        assert agg.relation is maps[0].relation


def test_builder_snapshots_match_fresh_builds():
    g = BoxGrid([-2.0], [2.0], [64])
    s = generate_sample("wiener", 5, 0.01, 3.0)
    b = MapBuilder(double_well(0.1), s, g, 4)
    b.advance(0.25, 0.1)
    late = b.advance(1.0, 0.05)
    fresh = build_box_map(double_well(0.1), s, g, 1.0, 0.05, 4)
    assert np.array_equal(late.relation.lo, fresh.relation.lo)
    assert np.array_equal(late.relation.hi, fresh.relation.hi)
    with pytest.raises(BoxMapError):
        b.advance(0.5, 0.05)


def test_multimap_from_edges_and_closures():
    m = Multimap.from_edges(5, [0, 1, 2, 3], [1, 2, 0, 4])
    s, d = m.edges_within()
    assert sorted(zip(s.tolist(), d.tolist())) == [(0, 1), (1, 2), (2, 0), (3, 4)]
    assert chain_reachable(m, 0, 0) and not chain_reachable(m, 3, 3)
    mask = np.zeros(5, dtype=bool)
    mask[4] = True
    assert m.backward_closure(mask).tolist() == [False, False, False, True, True]
    assert m.preimage(mask).tolist() == [False, False, False, True, False]
    with pytest.raises(BoxMapError):
        Multimap.from_edges(3, [0], [5])


def test_parse_mode():
    assert parse_mode("all_samples") == ("all_samples", 1.0)
    assert parse_mode("quantile(0.25)") == ("quantile", 0.25)
    for bad in ("median", "quantile(0)", "quantile(1.5)"):
        with pytest.raises(BoxMapError):
            parse_mode(bad)


def test_export_dot(tmp_path):
    m = Multimap.from_edges(3, [0, 1], [1, 2])
    export_dot(m, tmp_path / "m.dot")
    assert (tmp_path / "m.dot").read_text() == "digraph boxmap {\n  0 -> 1;\n  1 -> 2;\n}\n"
