"""Entrance times, pair functions and the complete Lyapunov function.

For an attractor record with pre-attractor ``U`` the entrance time of
``x`` is ``-inf`` on attractor boxes, ``+inf`` on repeller boxes, and
otherwise the first grid time at which the orbit of ``x`` lies in ``U``:
a forward scan if ``x`` starts outside ``U``, a backward scan (last time
still inside) if it starts inside.  Each pair contributes

    l(tau) = exp(tau) / 2                      for tau < 0
    l(tau) = (1 + (2/pi) arctan(tau)) / 2      for tau >= 0

and the complete function is ``L = sum_n 2 l_n / 3^n``.  On recurrent boxes
every ``l_n`` is 0 or 1, so ``L`` is kept there as an exact fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cocycle import integrate
from .noise import steps_for

PAIR_LIPSCHITZ = 0.5  # sup of |dl/dtau| over both branches


class LyapunovError(ValueError):
    pass


def pair_lyapunov_value(tau) -> float:
    """Map an entrance time to ``[0, 1]``; strictly increasing, 1/2 at 0."""
    tau = float(tau)
    if math.isnan(tau):
        raise LyapunovError("entrance time is NaN")
    if tau == -math.inf:
        return 0.0
    if tau == math.inf:
        return 1.0
    if tau < 0:
        return 0.5 * math.exp(tau)
    return 0.5 * (1.0 + (2.0 / math.pi) * math.atan(tau))


def pair_values(tau):
    """Vectorized :func:`pair_lyapunov_value`."""
    tau = np.asarray(tau, dtype=float)
    if np.isnan(tau).any():
        raise LyapunovError("entrance time is NaN")
    out = np.empty_like(tau)
    neg = tau < 0
    with np.errstate(over="ignore"):
        out[neg] = 0.5 * np.exp(tau[neg])
        out[~neg] = 0.5 * (1.0 + (2.0 / math.pi) * np.arctan(tau[~neg]))
    out[tau == -np.inf] = 0.0
    out[tau == np.inf] = 1.0
    return out


def series_weights(n):
    return np.array([2.0 / 3.0 ** k for k in range(1, n + 1)])


def exact_weights(n):
    return [Fraction(2, 3 ** k) for k in range(1, n + 1)]


def complete_lyapunov(values):
    """``sum_n 2 l_n / 3^n`` over the leading axis of ``values``."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 0:
        raise LyapunovError("expected one row of pair values per pair")
    if v.shape[0] == 0:
        return np.zeros(v.shape[1:])
    if np.any((v < 0) | (v > 1)):
        raise LyapunovError("pair values must lie in [0, 1]")
    # Horner form, innermost term first
    acc = np.zeros(v.shape[1:])
    for row in v[::-1]:
        acc = (2.0 * row + acc) / 3.0
    return acc


def exact_value(bits):
    """Exact ``L`` for 0/1 pair values (``bits[n]`` true means l_n = 1)."""
    return sum((w for w, b in zip(exact_weights(len(bits)), bits) if b), Fraction(0))


def constancy_tolerance(n_pairs, dt_scan):
    """Drift bound on recurrent points from the scan resolution.

    A tau error of at most ``dt_scan`` moves each ``l_n`` by at most
    ``PAIR_LIPSCHITZ * dt_scan``; the weights add up to below 1.  The bound
    is doubled for the two evaluations being compared.
    """
    return 2.0 * dt_scan * PAIR_LIPSCHITZ * float(series_weights(n_pairs).sum())


# ----------------------------------------------------------- entrance times

@dataclass
class ScanSpec:
    """Scan range and resolution; ``lookback`` is the chain time ``T``.

    Looking backward, an orbit that has stayed outside ``U`` for a full
    ``lookback`` cannot have been inside earlier, because ``U`` is closed
    under the time-``T`` box map.
    """
    t_max: float
    dt_scan: float
    lookback: float = 0.0

    def steps(self, dt):
        m = steps_for(self.dt_scan, dt)
        k = steps_for(self.t_max, self.dt_scan)
        if m < 1 or k < 1:
            raise LyapunovError("dt_scan and t_max must be positive multiples of dt")
        return m, k

    def run_steps(self):
        return steps_for(self.lookback, self.dt_scan) if self.lookback > 0 else 0


def _membership(grid, states, mask):
    multi, outside = grid.locate_multi(states)
    res = np.zeros(states.shape[0], dtype=bool)
    inside = ~outside
    if inside.any():
        res[inside] = mask[np.ravel_multi_index(multi[inside].T, grid.shape)]
    if outside.any() and grid.exterior_enabled:
        res[outside] = mask[grid.exterior]
    return res


def _bbox(grid, mask):
    """Coordinate box enclosing the interior boxes of ``mask``, or None for everything."""
    if grid.exterior_enabled and mask[grid.exterior]:
        return None
    inner = mask[: grid.n_boxes].reshape(grid.shape)
    if not inner.any():
        return grid.lo, grid.lo - 1.0
    lo, hi = [], []
    for a in range(grid.dim):
        axes = tuple(b for b in range(grid.dim) if b != a)
        idx = np.flatnonzero(inner.any(axis=axes))
        lo.append(grid.bounds[a][idx[0]])
        hi.append(grid.bounds[a][idx[-1] + 1])
    return np.array(lo), np.array(hi)


def _in_set(grid, states, mask, box):
    if box is None:
        return _membership(grid, states, mask)
    lo, hi = box
    cand = np.all((states >= lo) & (states <= hi), axis=1)
    res = np.zeros(states.shape[0], dtype=bool)
    if cand.any():
        res[cand] = _membership(grid, states[cand], mask)
    return res


def _scan(system, sample, grid, X, mask, box, m, k_max, start, policy):
    """Forward scan: first index ``k`` with the orbit in ``mask``; -1 if none."""
    hit = np.full(X.shape[0], -1, dtype=np.int64)
    active = np.arange(X.shape[0])
    S = X.copy()
    for k in range(1, k_max + 1):
        if active.size == 0:
            break
        S, _ = integrate(system, sample, S, m, start=start + (k - 1) * m, policy=policy)
        done = _in_set(grid, S, mask, box)
        if done.any():
            hit[active[done]] = k
            active = active[~done]
            S = S[~done]
    return hit


def _lookback(system, sample, grid, X, inside0, mask, box, m, k_max, k_run, start, policy):
    """Backward scan for the earliest index ``k`` (time ``-k``) with the orbit in ``mask``.

    A point stops once it has been outside for ``k_run + 1`` consecutive
    scan times.  Returns ``(earliest, truncated)``; earliest is -1 if the
    orbit was never inside.
    """
    n = X.shape[0]
    earliest = np.where(inside0, 0, -1).astype(np.int64)
    run = np.where(inside0, 0, 1).astype(np.int64)
    active = np.flatnonzero(run <= k_run)
    S = X[active].copy()
    for k in range(1, k_max + 1):
        if active.size == 0:
            break
        S, _ = integrate(system, sample, S, -m, start=start - (k - 1) * m, policy=policy)
        far = ~np.all(np.abs(S) < _FAR, axis=1)
        inside = _in_set(grid, np.where(far[:, None], 0.0, S), mask, box) & ~far
        earliest[active[inside]] = k
        run[active] = np.where(inside, 0, run[active] + 1)
        # orbits that left every bounded region are treated as gone for good
        run[active[far]] = k_run + 1
        keep = run[active] <= k_run
        active = active[keep]
        S = S[keep]
    trunc = np.zeros(n, dtype=bool)
    trunc[active] = True
    return earliest, trunc


_FAR = 1e12


def entrance_times(system, sample, grid, points, record, scan: ScanSpec, start=0, policy=None):
    """Entrance times of ``points`` into ``record.pre_attractor``.

    The entrance time is the earliest scan time at which the orbit lies in
    ``U``: looking back at most ``t_max`` (see :class:`ScanSpec` for the
    stopping rule), then forward at most ``t_max``.  Returns
    ``(tau, truncated)``; a truncated entry either found no entry
    (tau = +inf) or was still inside ``U``, or had not yet stayed out
    long enough, when the look-back ran out.  ``start`` is the step offset
    of the time origin inside ``sample``.
    """
    X = np.asarray(points, dtype=float).reshape(-1, grid.dim)
    policy = policy or ("free" if grid.exterior_enabled else "clamp")
    m, k_max = scan.steps(sample.dt)
    k_run = scan.run_steps()
    nodes = _nodes_of(grid, X)
    A = record.attractor.mask
    R = record.repeller.mask
    U = record.pre_attractor.mask
    tau = np.empty(X.shape[0])
    trunc = np.zeros(X.shape[0], dtype=bool)
    in_a = A[nodes]
    in_r = R[nodes] & ~in_a
    tau[in_a] = -np.inf
    tau[in_r] = np.inf
    rest = np.flatnonzero(~(in_a | in_r))
    if rest.size == 0:
        return tau, trunc
    box = _bbox(grid, U)
    in_u = U[nodes[rest]]
    first, tr = _lookback(system, sample, grid, X[rest], in_u, U, box, m, k_max, k_run, start, policy)
    trunc[rest] = tr
    seen = first >= 0
    tau[rest[seen]] = -first[seen] * scan.dt_scan
    fwd = rest[~seen]
    if fwd.size:
        k = _scan(system, sample, grid, X[fwd], U, box, m, k_max, start, policy)
        tau[fwd] = np.where(k > 0, k * scan.dt_scan, np.inf)
        trunc[fwd] |= k < 0
    return tau, trunc


def _nodes_of(grid, X):
    multi, outside = grid.locate_multi(X)
    if outside.any() and not grid.exterior_enabled:
        from .grid import OutOfWindow
        raise OutOfWindow("entrance time requested for a point outside the window")
    nodes = np.full(X.shape[0], grid.exterior, dtype=np.int64)
    inside = ~outside
    if inside.any():
        nodes[inside] = np.ravel_multi_index(multi[inside].T, grid.shape)
    return nodes


def entrance_time(system, sample, grid, x, record, t_max, dt_scan, lookback=0.0):
    """Scalar version of :func:`entrance_times`; returns ``(tau, truncated)``."""
    x = np.asarray(x, dtype=float).reshape(1, grid.dim)
    tau, trunc = entrance_times(system, sample, grid, x, record, ScanSpec(t_max, dt_scan, lookback))
    return float(tau[0]), bool(trunc[0])


def shift_identity_check(system, sample, grid, x, record, t, t_max, dt_scan, lookback=0.0):
    """``|tau(theta_t w, phi(t, w) x) - (tau(w, x) - t)|``; 0 when both sides are the same infinity."""
    x = np.asarray(x, dtype=float).reshape(1, grid.dim)
    scan = ScanSpec(t_max, dt_scan, lookback)
    tau0, _ = entrance_times(system, sample, grid, x, record, scan)
    n = steps_for(t, sample.dt)
    policy = "free" if grid.exterior_enabled else "clamp"
    y, _ = integrate(system, sample, x, n, policy=policy)
    tau1, _ = entrance_times(system, sample, grid, y, record, scan, start=n)
    a, b = float(tau1[0]), float(tau0[0]) - t
    if math.isinf(a) or math.isinf(b):
        return 0.0 if a == b else math.inf
    return abs(a - b)


def evaluate(system, sample, grid, points, records, scan, start=0):
    """Fresh ``(L, l, tau, truncated)`` at ``points`` for time origin ``start``."""
    X = np.asarray(points, dtype=float).reshape(-1, grid.dim)
    n = len(records)
    tau = np.empty((n, X.shape[0]))
    trunc = np.zeros((n, X.shape[0]), dtype=bool)
    for i, r in enumerate(records):
        tau[i], trunc[i] = entrance_times(system, sample, grid, X, r, scan, start=start)
    l = pair_values(tau)
    return complete_lyapunov(l), l, tau, trunc


# ------------------------------------------------------------------- fields

@dataclass
class LyapunovField:
    grid: object
    sample_ids: list
    points: np.ndarray
    tau: np.ndarray          # (samples, pairs, nodes)
    truncated: np.ndarray
    l: np.ndarray
    L: np.ndarray            # (samples, nodes)
    exact: dict              # node -> Fraction, recurrent nodes
    pair_keys: list
    scan: ScanSpec
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_pairs(self):
        return self.l.shape[1]

    @property
    def delta_const(self):
        return constancy_tolerance(self.n_pairs, self.scan.dt_scan)


def representative_points(grid):
    """Box centers, plus one point just outside the window for the exterior."""
    pts = grid.center(np.arange(grid.n_boxes)).reshape(-1, grid.dim)
    if grid.exterior_enabled:
        p = 0.5 * (grid.lo + grid.hi)
        p[0] = grid.hi[0] + 0.5 * grid.h[0]
        pts = np.vstack([pts, p])
    return pts


def lyapunov_field(system, ensemble, grid, decomp, records, t_max, dt_scan, lookback=0.0,
                   executor=None) -> LyapunovField:
    scan = ScanSpec(t_max, dt_scan, lookback)
    pts = representative_points(grid)
    n = len(records)
    rec = decomp.recurrent_mask

    def one(sample):
        return evaluate(system, sample, grid, pts, records, scan)

    results = list(executor.map(one, ensemble)) if executor is not None else [one(s) for s in ensemble]
    S = len(results)
    tau = np.empty((S, n, grid.n_nodes))
    trunc = np.zeros((S, n, grid.n_nodes), dtype=bool)
    lv = np.empty((S, n, grid.n_nodes))
    L = np.empty((S, grid.n_nodes))
    for i, (Li, li, ti, tri) in enumerate(results):
        tau[i], trunc[i], lv[i], L[i] = ti, tri, li, Li
    exact = {}
    if n:
        bits = np.stack([r.repeller.mask for r in records])  # (n, nodes)
        inside = np.stack([r.attractor.mask | r.repeller.mask for r in records])
        for v in np.flatnonzero(rec).tolist():
            if not inside[:, v].all():
                raise LyapunovError(f"recurrent node {v} lies outside some attractor-repeller pair")
            c = exact_value(bits[:, v].tolist())
            exact[v] = c
            L[:, v] = float(c)
    else:
        for v in np.flatnonzero(rec).tolist():
            exact[v] = Fraction(0)
    diag = {
        "truncated_forward": int(np.sum(trunc & (tau == np.inf))),
        "truncated_lookback": int(np.sum(trunc & np.isfinite(tau))),
    }
    return LyapunovField(grid, [s.seed for s in ensemble], pts, tau, trunc, lv, L, exact,
                         [r.key() for r in records], scan, diag)


# -------------------------------------------------------------- components

@dataclass
class ComponentLabeling:
    critical: list           # Fraction per component
    signatures: list         # str over {A, R} per component
    box_component: np.ndarray
    merged: list = field(default_factory=list)

    def critical_float(self):
        return [float(c) for c in self.critical]


class ComponentConsistencyError(LyapunovError):
    pass


def label_components(decomp, records, fld: LyapunovField, tol=0.0) -> ComponentLabeling:
    """Critical value and A/R signature of every recurrent component."""
    n = len(records)
    crit, sigs = [], []
    for i, comp in enumerate(decomp.components):
        sig = []
        for r in records:
            if np.all(r.attractor.mask[comp]):
                sig.append("A")
            elif np.all(r.repeller.mask[comp]):
                sig.append("R")
            else:
                raise ComponentConsistencyError(f"component {i} is split by a pair")
        c = exact_value([s == "R" for s in sig])
        vals = fld.L[:, comp]
        if np.max(np.abs(vals - float(c))) > tol:
            raise ComponentConsistencyError(f"L is not constant on component {i}")
        crit.append(c)
        sigs.append("".join(sig) if n else "")
    merged = []
    seen = {}
    for i, s in enumerate(sigs):
        if s in seen:
            merged.append((seen[s], i))
        else:
            seen[s] = i
    return ComponentLabeling(crit, sigs, decomp.component_of.copy(), merged)
