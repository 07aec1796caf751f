import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rds_conley.noise import (
    HorizonExhausted,
    NoiseError,
    derive_seeds,
    dump_ensemble,
    generate_ensemble,
    generate_sample,
    load_ensemble,
    steps_for,
)


def test_same_seed_same_bytes():
    a = generate_sample("wiener", 7, 0.01, 2.0)
    b = generate_sample("wiener", 7, 0.01, 2.0)
    assert a.values.tobytes() == b.values.tobytes()


def test_ensemble_seeds_distinct_and_reproducible():
    e1 = generate_ensemble("ou", 12, 0.01, 1.0, 3, channels=3)
    e2 = generate_ensemble("ou", 12, 0.01, 1.0, 3, channels=3)
    assert len(set(e1.seeds)) == 12
    assert all(a == b for a, b in zip(e1, e2))
    assert e1.seeds == derive_seeds(3, 12)


@pytest.mark.parametrize("args", [("wiener", 1, 0.0, 1.0), ("wiener", 1, 0.1, -1.0), ("bogus", 1, 0.1, 1.0)])
def test_rejects_bad_parameters(args):
    kind, n, dt, hz = args
    with pytest.raises(NoiseError):
        generate_ensemble(kind, n, dt, hz, 0)


def test_rejects_empty_ensemble():
    with pytest.raises(NoiseError):
        generate_ensemble("wiener", 0, 0.1, 1.0, 0)


def test_wiener_increment_variance():
    s = generate_sample("wiener", 11, 0.01, 500.0)
    assert abs(s.values.var() / 0.01 - 1.0) < 0.02


def test_shift_group_property():
    s = generate_sample("wiener", 5, 0.1, 5.0)
    a = s.shift(1.2).shift(-0.7)
    b = s.shift(0.5)
    assert a == b
    assert np.array_equal(a.window(0, 3), s.window(5, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(-20, 20), st.integers(-20, 20))
def test_shift_composition_property(i, j):
    s = generate_sample("ou", 2, 0.1, 5.0)
    assert s.shift_steps(i).shift_steps(j) == s.shift_steps(i + j)


def test_horizon_exhaustion_is_an_error():
    s = generate_sample("wiener", 5, 0.1, 1.0)
    with pytest.raises(HorizonExhausted):
        s.shift(1.5)
    with pytest.raises(HorizonExhausted):
        s.window(5, 10)


def test_non_multiple_time_rejected():
    with pytest.raises(NoiseError):
        steps_for(0.015, 0.01)
    assert steps_for(0.3, 0.1) == 3


def test_reflect_negates_wiener_increments():
    s = generate_sample("wiener", 9, 0.1, 2.0)
    r = s.reflect()
    assert np.array_equal(r.window(0, 4), -s.window(-4, 4)[::-1])
    assert r.reflect() == s


def test_constant_noise_is_zero_and_shift_invariant():
    s = generate_sample("constant", 1, 0.1, 1.0, channels=2)
    assert not s.window(0, 5).any()
    assert s.shift(0.5) is s


def test_dump_roundtrip(tmp_path):
    e = generate_ensemble("ou", 3, 0.05, 1.0, 4, channels=2)
    p = tmp_path / "n.rdsn"
    dump_ensemble(e, p)
    assert p.read_bytes()[:5] == b"RDSN1"
    f = load_ensemble(p)
    assert f.seeds == e.seeds and all(a == b for a, b in zip(e, f))


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE" + b"\0" * 40)
    with pytest.raises(NoiseError):
        load_ensemble(p)
