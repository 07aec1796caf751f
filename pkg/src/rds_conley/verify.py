"""Trajectory checks of a complete Lyapunov function, plus brute-force oracles.

Every check returns a :class:`Section`; a failing section always carries
at least one concrete counterexample.  Random choices (points, times,
graphs) come from a generator seeded by the run's master seed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .boxmap import Multimap
from .cocycle import double_well, double_well_exact, integrate
from .conley import chain_recurrent_set, check_duality, enumerate_attractors
from .lyapunov import ScanSpec, entrance_times, evaluate, exact_value
from .noise import generate_sample, steps_for
from .serialize import fmt_float, to_json

MAX_COUNTEREXAMPLES = 20


@dataclass
class Section:
    name: str
    passed: bool
    counterexamples: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed),
                "counterexamples": self.counterexamples[:MAX_COUNTEREXAMPLES], "stats": self.stats}


@dataclass
class VerificationReport:
    sections: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(s.passed for s in self.sections)

    def add(self, section):
        self.sections.append(section)
        return section

    def section(self, name):
        for s in self.sections:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self):
        return {"ok": self.ok, "config": self.config, "sections": [s.to_dict() for s in self.sections]}

    def to_json(self):
        return to_json(self.to_dict())

    def to_text(self):
        lines = []
        for s in self.sections:
            lines.append(f"{'PASS' if s.passed else 'FAIL'}  {s.name}")
            for k, v in s.stats.items():
                if isinstance(v, (list, dict)):
                    continue
                lines.append(f"      {k} = {fmt_float(v) if isinstance(v, float) else v}")
            for c in s.counterexamples[:3]:
                lines.append(f"      counterexample: {c}")
        lines.append("overall: " + ("PASS" if self.ok else "FAIL"))
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ helpers

def _rng(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def sample_points(grid, mask, n, rng):
    """``n`` uniform points in randomly chosen interior boxes of ``mask``."""
    boxes = np.flatnonzero(mask[: grid.n_boxes])
    if boxes.size == 0 or n <= 0:
        return boxes[:0], np.zeros((0, grid.dim))
    pick = boxes[rng.integers(0, boxes.size, size=n)]
    low = grid.lower(pick).reshape(-1, grid.dim)
    # stay off the faces so each point belongs to the box it was drawn from
    u = 0.01 + 0.98 * rng.random((n, grid.dim))
    return pick, low + u * grid.h


def _policy(grid):
    return "free" if grid.exterior_enabled else "clamp"


def _ex(sample_id, x, t, **vals):
    d = {"sample": str(sample_id), "x": [float(v) for v in np.atleast_1d(x)], "t": float(t)}
    d.update({k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in vals.items()})
    return d


def _groups(n, S):
    """Round-robin assignment of ``n`` points to ``S`` samples."""
    owner = np.arange(n) % S
    return [np.flatnonzero(owner == s) for s in range(S)]


def box_distance(grid, recurrent):
    """Chessboard distance (in boxes) from every interior box to ``recurrent``."""
    inner = recurrent[: grid.n_boxes].reshape(grid.shape)
    if not inner.any():
        return np.full(grid.n_boxes, -1)
    return ndimage.distance_transform_cdt(~inner, metric="chessboard").ravel()


# -------------------------------------------------------------- properties

def verify_decrease(system, ensemble, lyap, decomp, records, n_points, t_checks, delta_dec=1e-9, seed=0):
    """Strict decrease of ``L`` along orbits started in non-recurrent boxes."""
    grid = lyap.grid
    rng = _rng(seed, 1)
    mask = ~decomp.recurrent_mask
    boxes, pts = sample_points(grid, mask, n_points, rng)
    times = np.asarray(t_checks, dtype=float)[rng.integers(0, len(t_checks), size=boxes.size)]
    scan = lyap.scan
    margins = np.full(boxes.size, np.nan)
    cex = []
    for s, idx in enumerate(_groups(boxes.size, len(ensemble))):
        sample = ensemble[s]
        if idx.size == 0:
            continue
        L0, _, _, _ = evaluate(system, sample, grid, pts[idx], records, scan)
        for t in np.unique(times[idx]):
            sub = idx[times[idx] == t]
            k = steps_for(t, sample.dt)
            y, _ = integrate(system, sample, pts[sub], k, policy=_policy(grid))
            L1, _, _, _ = evaluate(system, sample, grid, y, records, scan, start=k)
            margins[sub] = L0[np.searchsorted(idx, sub)] - L1
    bad = ~(margins > delta_dec)
    for i in np.flatnonzero(bad)[:MAX_COUNTEREXAMPLES]:
        cex.append(_ex(ensemble[i % len(ensemble)].seed, pts[i], times[i], box=int(boxes[i]),
                       margin=margins[i]))
    dist = box_distance(grid, decomp.recurrent_mask)[boxes] if boxes.size else np.zeros(0, int)
    by_dist = []
    for d in np.unique(dist):
        sel = dist == d
        by_dist.append([int(d), int(sel.sum()), float(np.min(margins[sel]))])
    stats = {
        "points": int(boxes.size),
        "failures": int(bad.sum()),
        "min_margin": float(np.min(margins)) if boxes.size else math.inf,
        "median_margin": float(np.median(margins)) if boxes.size else math.inf,
        "delta_dec": float(delta_dec),
        "margin_by_box_distance": by_dist[:64],
    }
    return Section("decrease", bool(boxes.size == 0 or not bad.any()), cex, stats)


def verify_constancy(system, ensemble, lyap, decomp, records, n_points, t_checks, seed=0):
    """``L`` stays on the critical value along orbits inside recurrent boxes.

    Orbits whose endpoint leaves the recurrent boxes (possible because
    boxes are larger than the recurrent set they cover) are counted as
    escaped and not compared.  Stationary points are always included.
    """
    grid = lyap.grid
    rng = _rng(seed, 2)
    tol = lyap.delta_const
    rec = decomp.recurrent_mask
    boxes, pts = sample_points(grid, rec, n_points, rng)
    stat = system.stationary_points()
    if stat.size:
        inside = np.all((stat >= grid.lo) & (stat <= grid.hi), axis=1)
        stat = stat[inside]
        sb = np.atleast_1d(grid.locate(stat)) if stat.size else np.zeros(0, int)
        keep = rec[sb]
        boxes = np.concatenate([boxes, sb[keep]])
        pts = np.vstack([pts, stat[keep]])
    times = np.asarray(t_checks, dtype=float)[rng.integers(0, len(t_checks), size=boxes.size)]
    drift = np.full(boxes.size, np.nan)
    escaped = np.zeros(boxes.size, dtype=bool)
    jumped = np.zeros(boxes.size, dtype=bool)
    comp = decomp.component_of
    for s, idx in enumerate(_groups(boxes.size, len(ensemble))):
        sample = ensemble[s]
        if idx.size == 0:
            continue
        L0, _, _, _ = evaluate(system, sample, grid, pts[idx], records, lyap.scan)
        for t in np.unique(times[idx]):
            sub = idx[times[idx] == t]
            k = steps_for(t, sample.dt)
            y, _ = integrate(system, sample, pts[sub], k, policy=_policy(grid))
            yb = np.atleast_1d(grid.locate(y)) if grid.exterior_enabled else _locate_inside(grid, y)
            esc = ~rec[yb]
            escaped[sub] = esc
            jumped[sub] = ~esc & (comp[yb] != comp[boxes[sub]])
            L1, _, _, _ = evaluate(system, sample, grid, y, records, lyap.scan, start=k)
            drift[sub] = np.abs(L1 - L0[np.searchsorted(idx, sub)])
    checked = ~escaped
    bad = checked & ~(drift <= tol)
    cex = [_ex(ensemble[i % len(ensemble)].seed, pts[i], times[i], box=int(boxes[i]), drift=drift[i],
               changed_component=bool(jumped[i])) for i in np.flatnonzero(bad)[:MAX_COUNTEREXAMPLES]]
    stats = {
        "points": int(boxes.size),
        "checked": int(checked.sum()),
        "escaped": int(escaped.sum()),
        "changed_component": int(jumped.sum()),
        "max_drift": float(np.max(drift[checked])) if checked.any() else 0.0,
        "delta_const": float(tol),
    }
    return Section("constancy", not bad.any(), cex, stats)


def _locate_inside(grid, y):
    lo, hi = grid.lo, grid.hi
    return np.atleast_1d(grid.locate(np.clip(y, lo, hi)))


def ternary_digits(value: Fraction, depth):
    """First ``depth`` base-3 digits of ``value`` in [0, 1] and the exact remainder."""
    r = Fraction(value)
    digits = []
    for _ in range(depth):
        r *= 3
        d = int(r)
        if d == 3:  # value 1 = 0.222...
            d = 2
        digits.append(d)
        r -= d
    return digits, r


def decode_float(v, depth):
    """Nearest value with digits in {0, 2} up to ``depth``, or None if ``v`` is not one."""
    if not 0.0 <= v <= 1.0:
        return None
    r = Fraction(v)
    bits = []
    for k in range(1, depth + 1):
        w = Fraction(2, 3 ** k)
        b = r >= w * Fraction(3, 4)
        bits.append(b)
        if b:
            r -= w
    c = exact_value(bits)
    if abs(float(c) - v) <= 4 * math.ulp(max(v, 1e-300)) + 1e-300:
        return c
    return None


def verify_range(lyap, decomp):
    """Values on recurrent boxes have base-3 digits in {0, 2} only."""
    depth = lyap.n_pairs
    rec = np.flatnonzero(decomp.recurrent_mask)
    cex = []
    critical = set()
    for v in rec.tolist():
        c = lyap.exact.get(v)
        if c is None:
            cex.append({"box": v, "reason": "no exact value"})
            continue
        digits, rem = ternary_digits(c, depth)
        if rem != 0 or any(d == 1 for d in digits):
            cex.append({"box": v, "value": str(c), "digits": "".join(map(str, digits))})
        critical.add(c)
    # the stored float field must decode to such values as well
    vals = lyap.L[:, rec] if rec.size else np.zeros((0, 0))
    uniq = np.unique(vals)
    decoded = {}
    for u in uniq.tolist():
        decoded[u] = decode_float(u, depth)
    for u, c in decoded.items():
        if c is None:
            where = np.argwhere(vals == u)[0]
            cex.append({"box": int(rec[where[1]]), "sample": int(where[0]), "value": float(u),
                        "reason": "float value is not a sum of 2/3^n"})
    for j, v in enumerate(rec.tolist()):
        c = lyap.exact.get(v)
        if c is None:
            continue
        col = vals[:, j]
        if np.any(col != float(c)):
            cex.append({"box": v, "value": float(col[col != float(c)][0]), "expected": str(c),
                        "reason": "float field disagrees with exact value"})
            if len(cex) > MAX_COUNTEREXAMPLES:
                break
    stats = {"recurrent_boxes": int(rec.size), "depth": depth,
             "critical_values": [str(c) for c in sorted(critical)],
             "critical_floats": [float(c) for c in sorted(critical)]}
    return Section("range", not cex, cex, stats)


def critical_values(lyap, decomp):
    """Exact critical value per component, read from the field."""
    out = []
    for comp in decomp.components:
        vals = {lyap.exact.get(int(v)) for v in comp.tolist()}
        out.append(vals.pop() if len(vals) == 1 else None)
    return out


def signature_from_value(c: Fraction, depth):
    digits, _ = ternary_digits(c, depth)
    return "".join("R" if d == 2 else "A" for d in digits)


def verify_ordering(lyap, decomp):
    """Components higher in the order carry strictly larger critical values."""
    depth = lyap.n_pairs
    crit = critical_values(lyap, decomp)
    cex = []
    for i, c in enumerate(crit):
        if c is None:
            cex.append({"component": i, "reason": "L not constant on the component"})
    premise_ok = True
    for i, j in sorted(decomp.order):
        ci, cj = crit[i], crit[j]
        if ci is None or cj is None:
            continue
        if not ci > cj:
            cex.append({"edge": [i, j], "upper": str(ci), "lower": str(cj)})
        si, sj = signature_from_value(ci, depth), signature_from_value(cj, depth)
        # every attractor containing the upper component contains the lower one
        bad = [n + 1 for n in range(depth) if si[n] == "A" and sj[n] != "A"]
        if bad:
            premise_ok = False
            cex.append({"edge": [i, j], "reason": "attractor inclusion violated", "pairs": bad})
    stats = {"edges": len(decomp.order), "components": len(crit),
             "critical_values": [str(c) for c in crit], "inclusion_premise": premise_ok,
             "distinct": len(set(crit)) == len(crit)}
    if len(set(crit)) != len(crit):
        cex.append({"reason": "two components share a critical value"})
    return Section("ordering", not cex, cex, stats)


def verify_shift_identity(system, ensemble, lyap, decomp, records, n_points, t_checks, seed=0,
                          max_rounds=8):
    """``tau(theta_t w, phi(t, w) x) = tau(w, x) - t`` up to ``dt_scan``.

    The identity needs both entrance times finite.  Points are drawn in
    rounds until ``n_points`` pairs meet that condition; the others are
    counted by reason.
    """
    grid = lyap.grid
    rng = _rng(seed, 3)
    scan = lyap.scan
    k_scan = steps_for(scan.dt_scan, ensemble[0].dt)
    n_max = steps_for(max(t_checks), scan.dt_scan)
    skipped = {"same_infinity": 0, "one_side_infinite": 0, "truncated": 0}
    resid, xs, ts, pairs, sids = [], [], [], [], []
    drawn = 0
    for _ in range(max_rounds):
        want = n_points - len(resid)
        if want <= 0:
            break
        m = want + want // 2 + 8
        boxes, pts = sample_points(grid, ~decomp.recurrent_mask, m, rng)
        if boxes.size == 0:
            break
        times = rng.integers(1, n_max + 1, size=boxes.size) * scan.dt_scan
        # for each point the first pair with a finite entrance time at the box
        which = np.zeros(boxes.size, dtype=np.int64)
        for i, b in enumerate(boxes.tolist()):
            for n, r in enumerate(records):
                if r.basin.mask[b] and not r.attractor.mask[b]:
                    which[i] = n
                    break
        owner = (np.arange(boxes.size) + drawn) % len(ensemble)
        drawn += boxes.size
        for s in range(len(ensemble)):
            sample = ensemble[s]
            mine = owner == s
            for n in np.unique(which[mine]):
                for t in np.unique(times[mine]):
                    sub = np.flatnonzero(mine & (which == n) & (times == t))
                    if sub.size == 0:
                        continue
                    k = int(round(t / scan.dt_scan)) * k_scan
                    tau0, tr0 = entrance_times(system, sample, grid, pts[sub], records[n], scan)
                    y, _ = integrate(system, sample, pts[sub], k, policy=_policy(grid))
                    tau1, tr1 = entrance_times(system, sample, grid, y, records[n], scan, start=k)
                    trunc = tr0 | tr1
                    fin = np.isfinite(tau0) & np.isfinite(tau1)
                    ok = fin & ~trunc
                    skipped["truncated"] += int(trunc.sum())
                    inf = ~fin & ~trunc
                    same = inf & (tau1 == tau0)
                    skipped["same_infinity"] += int(same.sum())
                    skipped["one_side_infinite"] += int((inf & ~same).sum())
                    for j in np.flatnonzero(ok):
                        resid.append(abs(tau1[j] - (tau0[j] - t)))
                        xs.append(pts[sub[j]])
                        ts.append(t)
                        pairs.append(int(n))
                        sids.append(sample.seed)
    resid = np.array(resid[:n_points])
    tol = scan.dt_scan * (1 + 1e-9)
    bad = resid > tol
    cex = [_ex(sids[i], xs[i], ts[i], pair=pairs[i] + 1, residual=resid[i])
           for i in np.flatnonzero(bad)[:MAX_COUNTEREXAMPLES]]
    stats = {"requested": int(n_points), "checked": int(resid.size), "drawn": int(drawn),
             "skipped": skipped, "max_residual": float(resid.max()) if resid.size else 0.0,
             "dt_scan": scan.dt_scan}
    passed = not bad.any() and resid.size == n_points
    if resid.size < n_points:
        cex.append({"reason": f"only {resid.size} of {n_points} points had finite entrance times"})
    return Section("shift_identity", passed, cex, stats)


# ------------------------------------------------------------------ oracles

def random_digraph(rng, n, p=None):
    p = p if p is not None else min(1.0, 2.0 / max(n, 1))
    adj = rng.random((n, n)) < p
    src, dst = np.nonzero(adj)
    return Multimap.from_edges(n, src, dst)


def reachability_oracle(rel):
    """Per-node sets of nodes reachable by paths of length >= 1, by plain BFS."""
    n = rel.n_nodes
    succ = [rel.successors(u).tolist() for u in range(n)]
    reach = []
    for u in range(n):
        seen = set()
        q = deque(succ[u])
        while q:
            v = q.popleft()
            if v in seen:
                continue
            seen.add(v)
            q.extend(succ[v])
        reach.append(seen)
    return reach


def chain_recurrence_oracle(rel):
    """Recurrent nodes, components and order from exhaustive path search."""
    reach = reachability_oracle(rel)
    n = rel.n_nodes
    rec = [u for u in range(n) if u in reach[u]]
    comps = []
    placed = set()
    for u in rec:
        if u in placed:
            continue
        c = sorted(v for v in rec if v == u or (v in reach[u] and u in reach[v]))
        placed.update(c)
        comps.append(c)
    order = set()
    for i, ci in enumerate(comps):
        for j, cj in enumerate(comps):
            if i != j and cj[0] in reach[ci[0]]:
                order.add((i, j))
    return rec, comps, order


def scc_oracle_check(n_graphs=100, max_nodes=200, seed=0):
    rng = _rng(seed, 4)
    cex = []
    sizes = []
    for g in range(n_graphs):
        n = int(rng.integers(1, max_nodes + 1))
        rel = random_digraph(rng, n, p=float(rng.uniform(0.2, 3.0)) / n)
        d = chain_recurrent_set(rel)
        rec, comps, order = chain_recurrence_oracle(rel)
        got = [sorted(c.tolist()) for c in d.components]
        same = (np.flatnonzero(d.recurrent_mask).tolist() == rec and got == comps and d.order == order)
        sizes.append(n)
        if not same:
            cex.append({"graph": g, "nodes": n})
    return Section("scc_oracle", not cex, cex, {"graphs": n_graphs, "max_nodes": max(sizes, default=0)})


def duality_check(n_graphs=50, max_nodes=80, seed=0):
    rng = _rng(seed, 5)
    cex = []
    for g in range(n_graphs):
        n = int(rng.integers(1, max_nodes + 1))
        rel = random_digraph(rng, n, p=float(rng.uniform(0.3, 2.5)) / n)
        d = chain_recurrent_set(rel)
        recs = enumerate_attractors(d)
        rep = check_duality(d, recs)
        if not rep.ok:
            cex.append({"graph": g, "nodes": n, "meet_witnesses": rep.meet_witnesses[:10],
                        "join_witnesses": rep.join_witnesses[:10]})
    return Section("duality_random_graphs", not cex, cex, {"graphs": n_graphs})


def closed_form_check(dt=1e-3, t_end=10.0, tol=1e-6):
    """Noise-free double well against its closed-form solution."""
    sys = double_well(0.0)
    sample = generate_sample("constant", 0, dt, t_end + dt)
    x0 = np.array([-1.9, -1.2, -0.5, -0.05, 0.0, 0.05, 0.5, 1.2, 1.9])
    n = steps_for(t_end, dt)
    err = [0.0]

    def rec(j, s):
        if j % 10 == 0 or j == n:
            err[0] = max(err[0], float(np.max(np.abs(s[0] - double_well_exact(x0, j * dt)))))

    integrate(sys, sample, x0[:, None], n, record=rec)
    passed = err[0] < tol
    cex = [] if passed else [{"max_error": err[0]}]
    return Section("closed_form", passed, cex, {"max_error": err[0], "dt": dt, "t_end": t_end})


def digit_check():
    """The ternary digit test on known values."""
    cases = [(Fraction(0), True), (Fraction(2, 3), True), (Fraction(8, 9), True),
             (Fraction(1, 2), False), (Fraction(1, 3), False)]
    cex = []
    for v, want in cases:
        digits, rem = ternary_digits(v, 12)
        ok = rem == 0 and 1 not in digits
        if ok != want:
            cex.append({"value": str(v)})
    if decode_float(0.5, 12) is not None:
        cex.append({"value": 0.5, "reason": "decoded"})
    return Section("digit_oracle", not cex, cex, {"cases": len(cases) + 1})


def run_oracles(cfg) -> list:
    """All brute-force comparisons; ``cfg`` needs the oracle counts and a seed."""
    return [
        scc_oracle_check(cfg.oracle_graphs, cfg.oracle_max_nodes, cfg.master_seed),
        duality_check(cfg.duality_graphs, seed=cfg.master_seed),
        closed_form_check(),
        digit_check(),
    ]


def verify_all(lr, cfg) -> VerificationReport:
    """Every property check on a Lyapunov run, plus the oracles."""
    dec = lr.dec
    rep = VerificationReport(config=cfg.echo())
    args = (dec.system, dec.ensemble, lr.field, dec.decomp, dec.records)
    rep.add(verify_decrease(*args, cfg.n_points, cfg.t_checks, cfg.delta_dec, cfg.master_seed))
    rep.add(verify_constancy(*args, cfg.n_points, cfg.t_checks, cfg.master_seed))
    rep.add(verify_range(lr.field, dec.decomp))
    rep.add(verify_ordering(lr.field, dec.decomp))
    if cfg.shift_points:
        rep.add(verify_shift_identity(*args, cfg.shift_points, cfg.t_checks, cfg.master_seed))
    d = dec.duality
    rep.add(Section("duality", d.ok, [] if d.ok else [d.to_dict()],
                    {"records": len(dec.records), "repulsion_basin_ok": d.repulsion_basin_ok,
                     "basins_forward_invariant": d.basins_forward_invariant}))
    for s in run_oracles(cfg):
        rep.add(s)
    return rep
