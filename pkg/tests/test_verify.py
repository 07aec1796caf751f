from fractions import Fraction
from types import SimpleNamespace

import numpy as np

from rds_conley.boxmap import Multimap
from rds_conley.conley import chain_recurrent_set, enumerate_attractors
from rds_conley.grid import BoxGrid
from rds_conley.lyapunov import exact_value
from rds_conley.verify import (
    VerificationReport,
    box_distance,
    closed_form_check,
    decode_float,
    digit_check,
    duality_check,
    scc_oracle_check,
    signature_from_value,
    ternary_digits,
    verify_ordering,
    verify_range,
)


def _chain():
    # M0 <- M1 -> M2, transient nodes 3 and 4
    rel = Multimap.from_edges(5, [0, 1, 2, 1, 3, 1, 4], [0, 1, 2, 3, 0, 4, 2])
    d = chain_recurrent_set(rel)
    recs = enumerate_attractors(d)
    return d, recs


def _field(d, recs, override=None):
    n = len(recs)
    exact = {}
    for v in np.flatnonzero(d.recurrent_mask).tolist():
        exact[v] = exact_value([bool(r.repeller.mask[v]) for r in recs])
    if override:
        exact.update(override)
    L = np.zeros((2, d.relation.n_nodes))
    for v, c in exact.items():
        L[:, v] = float(c)
    return SimpleNamespace(n_pairs=n, exact=exact, L=L)


def test_three_chain_ordering_passes():
    d, recs = _chain()
    f = _field(d, recs)
    sec = verify_ordering(f, d)
    assert sec.passed, sec.counterexamples
    crit = [f.exact[int(c[0])] for c in d.components]
    assert crit[1] > crit[0] and crit[1] > crit[2] and crit[0] != crit[2]
    assert verify_range(f, d).passed


def test_corrupted_field_fails_range():
    d, recs = _chain()
    f = _field(d, recs, {1: Fraction(1, 2)})
    sec = verify_range(f, d)
    assert not sec.passed
    assert any(c.get("box") == 1 for c in sec.counterexamples)


def test_swapped_values_fail_ordering():
    d, recs = _chain()
    good = _field(d, recs)
    f = _field(d, recs, {1: good.exact[0], 0: good.exact[1]})
    sec = verify_ordering(f, d)
    assert not sec.passed and sec.counterexamples


def test_ternary_helpers():
    assert ternary_digits(Fraction(20, 27), 3) == ([2, 0, 2], 0)
    assert ternary_digits(Fraction(1), 2)[0] == [2, 2]
    assert signature_from_value(Fraction(20, 27), 3) == "RAR"
    assert decode_float(20 / 27, 3) == Fraction(20, 27)
    assert decode_float(0.5, 20) is None
    assert decode_float(1.5, 3) is None


def test_oracle_sections_pass():
    assert scc_oracle_check(20, 60, seed=1).passed
    assert duality_check(20, seed=1).passed
    assert closed_form_check().passed
    assert digit_check().passed


def test_box_distance():
    g = BoxGrid([0.0, 0.0], [5.0, 5.0], [5, 5])
    m = np.zeros(25, dtype=bool)
    m[12] = True
    d = box_distance(g, m).reshape(5, 5)
    assert d[2, 2] == 0 and d[0, 0] == 2 and d[1, 3] == 1


def test_report_rendering():
    rep = VerificationReport()
    d, recs = _chain()
    rep.add(verify_range(_field(d, recs, {1: Fraction(1, 2)}), d))
    assert not rep.ok
    text = rep.to_text()
    assert text.startswith("FAIL  range") and text.rstrip().endswith("overall: FAIL")
    assert '"ok": false' in rep.to_json()
