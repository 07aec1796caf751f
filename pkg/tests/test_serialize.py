from fractions import Fraction

import numpy as np
import pytest

from rds_conley.serialize import fmt_float, to_json, write_csv, write_float_table


def test_float_round_trip():
    for v in (0.1, 1 / 3, 2 / 27, -1e-300, 123456789.123456789):
        assert float(fmt_float(v)) == v
    assert fmt_float(float("inf")) == "inf" and fmt_float(float("nan")) == "nan"


def test_json_is_deterministic_and_typed():
    obj = {"b": [1, 2.5, np.int64(3)], "a": {"f": Fraction(2, 9), "inf": float("-inf")},
           "arr": np.array([[1, 2]]), "flag": np.bool_(True), "none": None, "empty": []}
    text = to_json(obj)
    assert text == to_json(obj)
    assert '"f": "2/9"' in text and '"inf": "-inf"' in text and '"flag": true' in text
    assert text.index('"b"') < text.index('"a"')
    with pytest.raises(TypeError):
        to_json({"x": object()})


def test_float_table(tmp_path):
    p = tmp_path / "t.csv"
    write_float_table(p, ["i", "x"], [np.arange(3)], np.array([[0.1, 0.2, 1 / 3]]), chunk=2)
    write_float_table(p, None, [np.arange(1)], np.array([[2.0]]), prefix="s,", mode="a")
    assert p.read_text().splitlines() == ["i,x", "0,0.10000000000000001", "1,0.20000000000000001",
                                          "2,0.33333333333333331", "s,0,2"]


def test_write_csv(tmp_path):
    p = tmp_path / "r.csv"
    write_csv(p, ["a", "b"], [[1, 0.5], ["x", np.float64(0.25)]])
    assert p.read_text() == "a,b\n1,0.5\nx,0.25\n"
