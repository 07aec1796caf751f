import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rds_conley.grid import (
    BoxGrid,
    BoxSet,
    GridError,
    OutOfWindow,
    RandomBoxSet,
    export_boxset_csv,
    inflate,
    interior,
)


def test_locate_matches_floor_oracle():
    g = BoxGrid([-2.0, 0.0], [2.0, 3.0], [16, 12])
    rng = np.random.default_rng(1)
    p = rng.uniform([-2, 0], [2, 3], size=(5000, 2))
    expect = np.ravel_multi_index(np.floor((p - g.lo) / g.h).astype(int).T, g.shape)
    got = g.locate(p)
    # floor may disagree only within rounding of a face
    bad = got != expect
    assert bad.sum() <= 2


def test_locate_faces_and_window_edges():
    g = BoxGrid([0.0], [1.0], [4])
    assert g.locate(0.25) == 1  # half-open boxes
    assert g.locate(1.0) == 3  # the top face belongs to the last box
    with pytest.raises(OutOfWindow):
        g.locate(1.5)
    ge = BoxGrid([0.0], [1.0], [4], exterior=True)
    assert ge.locate(1.5) == ge.exterior == 4
    assert ge.locate(np.array([np.nan])).tolist() == [4]


def test_bad_grids_rejected():
    with pytest.raises(GridError):
        BoxGrid([1.0], [0.0], [4])
    with pytest.raises(GridError):
        BoxGrid([0.0, 0.0], [1.0], [4])
    with pytest.raises(GridError):
        BoxGrid([0.0], [1.0], [0])


def test_mixed_grid_operations_rejected():
    a = BoxGrid([0.0], [1.0], [4]).full()
    b = BoxGrid([0.0], [1.0], [5]).full()
    with pytest.raises(GridError):
        _ = a | b


def _brute_inflate(g, mask, r):
    inner = np.flatnonzero(mask[: g.n_boxes])
    out = np.zeros(g.n_nodes, dtype=bool)
    if inner.size:
        src = g.unravel(inner)
        for b in range(g.n_boxes):
            d = np.abs(src - g.unravel(b)).max(axis=1)
            out[b] = bool(np.any(d <= r))
    return out


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=48, max_size=48), st.integers(0, 3))
def test_inflate_matches_brute_force(bits, k):
    g = BoxGrid([0.0, 0.0], [6.0, 8.0], [6, 8])
    mask = np.array(bits)
    s = BoxSet(g, mask)
    got = inflate(s, k * 1.0).mask
    assert np.array_equal(got, _brute_inflate(g, mask, k))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=26, max_size=26), st.lists(st.booleans(), min_size=26, max_size=26))
def test_de_morgan_and_interior_duality(a_bits, b_bits):
    g = BoxGrid([0.0, 0.0], [5.0, 5.0], [5, 5], exterior=True)
    a = BoxSet(g, a_bits)
    b = BoxSet(g, b_bits)
    assert ~(a | b) == (~a & ~b)
    assert ~(a & b) == (~a | ~b)
    assert (a - b) <= a
    # interior is the dual of a one-box inflation, exterior node included
    assert ~interior(a) == inflate(~a, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=30, max_size=30))
def test_interior_without_exterior(bits):
    g = BoxGrid([0.0], [30.0], [30])
    a = BoxSet(g, bits)
    assert ~interior(a) == inflate(~a, 1.0)
    assert interior(a) <= a


def test_exterior_inflation_reaches_window_collar():
    g = BoxGrid([0.0, 0.0], [4.0, 4.0], [4, 4], exterior=True)
    ext = g.from_indices([g.exterior])
    grown = inflate(ext, 1.0)
    assert len(grown) == 1 + 12  # the boundary ring
    corner = g.from_indices([0])
    assert g.exterior in inflate(corner, 1.0)
    assert g.exterior not in inflate(g.from_indices([5]), 1.0)


def test_inflate_zero_is_identity():
    g = BoxGrid([0.0], [1.0], [10])
    s = g.from_indices([2, 7])
    assert inflate(s, 0.0) == s


def test_box_sets_are_immutable():
    g = BoxGrid([0.0], [1.0], [4])
    s = g.from_indices([1])
    with pytest.raises(ValueError):
        s.mask[0] = True


def test_random_box_set_algebra():
    g = BoxGrid([0.0], [1.0], [4])
    r = RandomBoxSet((g.from_indices([0, 1]), g.from_indices([1, 2])))
    assert r.intersection_all() == g.from_indices([1])
    assert r.union_all() == g.from_indices([0, 1, 2])
    assert (~r)[0] == g.from_indices([2, 3])
    with pytest.raises(GridError):
        RandomBoxSet(())


def test_boxes_in_and_export(tmp_path):
    g = BoxGrid([0.0, 0.0], [4.0, 4.0], [4, 4], exterior=True)
    s = g.boxes_in([0.5, 0.5], [1.5, 1.5])
    assert sorted(s.indices.tolist()) == [0, 1, 4, 5]
    export_boxset_csv(s | g.from_indices([g.exterior]), tmp_path / "s.csv", only_members=True)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "box,lo_0,lo_1,side_0,side_1,member"
    assert len(lines) == 6 and lines[-1] == "16,,,,,1"
