import numpy as np
import pytest

from rds_conley.boxmap import Multimap
from rds_conley.conley import (
    _downsets,
    _select_records,
    chain_recurrent_set,
    check_duality,
    enumerate_attractors,
    morse_dot,
    trim,
    universal_basin,
)
from rds_conley.verify import chain_recurrence_oracle, random_digraph


def _graph(n, edges):
    s, d = zip(*edges) if edges else ((), ())
    return Multimap.from_edges(n, list(s), list(d))


def test_scc_decomposition_matches_exhaustive_search():
    rng = np.random.default_rng(11)
    for _ in range(60):
        n = int(rng.integers(1, 120))
        rel = random_digraph(rng, n, p=float(rng.uniform(0.2, 3.0)) / n)
        d = chain_recurrent_set(rel)
        rec, comps, order = chain_recurrence_oracle(rel)
        assert np.flatnonzero(d.recurrent_mask).tolist() == rec
        assert [sorted(c.tolist()) for c in d.components] == comps
        assert d.order == order


def test_three_fixed_points_chain():
    # 0 <- 1 -> 2 with self loops on all three and transient nodes 3, 4
    rel = _graph(5, [(0, 0), (1, 1), (2, 2), (1, 3), (3, 0), (1, 4), (4, 2)])
    d = chain_recurrent_set(rel)
    assert [c.tolist() for c in d.components] == [[0], [1], [2]]
    assert d.order == {(1, 0), (1, 2)}
    assert d.hasse_edges() == [(1, 0), (1, 2)]
    recs = enumerate_attractors(d)
    assert [r.attractor.indices.tolist() for r in recs] == [[0], [2], [0, 2], [0, 1, 2, 3, 4]]
    assert check_duality(d, recs).ok


def test_downsets_of_a_chain_and_an_antichain():
    assert _downsets(3, {(2, 1), (1, 0), (2, 0)}, 100) == [frozenset({0}), frozenset({0, 1}), frozenset({0, 1, 2})]
    assert len(_downsets(4, set(), 100)) == 15
    assert _downsets(12, set(), 100) is None


def test_trim_removes_sources_and_sinks():
    rel = _graph(4, [(0, 1), (1, 2), (2, 1), (2, 3)])
    assert trim(rel).tolist() == [False, True, True, False]


def test_universal_basin_excludes_escape_routes():
    # 2 can go to the cycle {0} or to the sink cycle {3}
    rel = _graph(4, [(0, 0), (1, 0), (2, 0), (2, 3), (3, 3)])
    t = np.array([True, False, False, False])
    assert universal_basin(rel, t).tolist() == [True, True, False, False]


def test_empty_attractor_on_acyclic_graph():
    rel = _graph(3, [(0, 1), (1, 2)])
    d = chain_recurrent_set(rel)
    recs = enumerate_attractors(d)
    assert len(recs) == 1 and recs[0].attractor.is_empty()
    assert check_duality(d, recs).ok


def test_duality_on_random_graphs():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(1, 80))
        rel = random_digraph(rng, n, p=float(rng.uniform(0.3, 2.5)) / n)
        d = chain_recurrent_set(rel)
        assert check_duality(d, enumerate_attractors(d)).ok


def test_record_cap_keeps_duality():
    # 7 isolated self loops: 127 downsets, capped at 40 records
    rel = _graph(8, [(i, i) for i in range(7)] + [(7, i) for i in range(7)])
    d = chain_recurrent_set(rel)
    diag = {}
    recs = enumerate_attractors(d, diagnostics=diag)
    assert len(recs) == 40 and diag["truncated_pairs"] == 127 - 40
    assert check_duality(d, recs).ok
    # the transient node needs the full attractor, which comes last in canonical order
    full = enumerate_attractors(d, max_pairs=1000)
    assert full[-1].attractor.indices.tolist() == list(range(7)) and 7 in full[-1].basin
    assert any(len(r.attractor) == 7 for r in _select_records(d, full, 8))


def test_morse_dot(tmp_path):
    rel = _graph(3, [(0, 0), (1, 1), (1, 0)])
    d = chain_recurrent_set(rel)
    morse_dot(d, tmp_path / "m.dot", labels=["a", "b"])
    text = (tmp_path / "m.dot").read_text()
    assert "M1 -> M0" in text and text.startswith("digraph")
