"""Morse decompositions, attractor-repeller pairs and their duality.

Everything combinatorial here works on a :class:`~rds_conley.boxmap.Multimap`:

* recurrent nodes are the nodes of nontrivial strongly connected
  components or with a self-loop;
* an attractor is ``A = reach*(S)`` for a set ``S`` of recurrent
  components closed under reachability;
* its basin is the set of nodes every path of which eventually enters
  the pre-attractor ``U``;
* its dual repeller is the complement of the basin.

With this basin and the downset seed family, ``recurrent == meet(A | R)``
and ``~recurrent == join(basin - A)`` hold exactly on every finite graph.
Pullback limit sets of simulated trajectories are provided as well, to
compare the combinatorial objects with the dynamics sample by sample.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .boxmap import AggregatedMap, BoxMap, Multimap, halton_points, point_template
from .cocycle import integrate
from .grid import BoxSet, RandomBoxSet, inflate_mask, interior
from .noise import steps_for

DOWNSET_CAP = 1024
MAX_PAIRS = 40


def _relation(obj):
    if isinstance(obj, (AggregatedMap, BoxMap)):
        return obj.relation
    if isinstance(obj, MorseDecomposition):
        return obj.relation
    return obj


# ------------------------------------------------------------- decomposition

@dataclass
class MorseDecomposition:
    relation: Multimap
    core: np.ndarray
    recurrent_mask: np.ndarray
    components: list
    order: set
    component_of: np.ndarray
    self_loops: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.relation.grid

    @property
    def recurrent(self) -> BoxSet:
        return BoxSet(self.grid, self.recurrent_mask)

    def component_set(self, i) -> BoxSet:
        m = np.zeros(self.grid.n_nodes, dtype=bool)
        m[self.components[i]] = True
        return BoxSet(self.grid, m)

    def reaches(self, i, j):
        return (i, j) in self.order

    def hasse_edges(self):
        """Covering relation of the component order."""
        out = []
        for i, j in sorted(self.order):
            if not any((i, k) in self.order and (k, j) in self.order for k in range(len(self.components))):
                out.append((i, j))
        return out

    def exterior_component(self):
        g = self.grid
        if not g.exterior_enabled:
            return None
        c = self.component_of[g.exterior]
        return int(c) if c >= 0 else None


def trim(rel: Multimap, mask=None):
    """Largest subset whose nodes all have a predecessor and a successor in it."""
    s = np.ones(rel.n_nodes, dtype=bool) if mask is None else np.array(mask, dtype=bool)
    while True:
        new = s & rel.image(s) & rel.preimage(s)
        if np.array_equal(new, s):
            return s
        s = new


def chain_recurrent_set(agg) -> MorseDecomposition:
    """Recurrent components of a box map and their reachability order."""
    rel = _relation(agg)
    n = rel.n_nodes
    core = trim(rel)
    nodes = np.flatnonzero(core)
    local = np.full(n, -1, dtype=np.int64)
    local[nodes] = np.arange(nodes.size)
    src, dst = rel.edges_within(core)
    ls, ld = local[src], local[dst]
    k = nodes.size
    self_loop = np.zeros(n, dtype=bool)
    self_loop[src[src == dst]] = True
    if k:
        graph = csr_matrix((np.ones(ls.size, dtype=np.int8), (ls, ld)), shape=(k, k))
        ncomp, labels = connected_components(graph, directed=True, connection="strong")
    else:
        ncomp, labels = 0, np.zeros(0, dtype=np.int64)
    sizes = np.bincount(labels, minlength=ncomp)
    loops = np.zeros(ncomp, dtype=bool)
    loops[labels[ls[ls == ld]]] = True
    is_rec = (sizes > 1) | loops
    # canonical numbering: recurrent components by smallest node index
    first = np.full(ncomp, np.iinfo(np.int64).max)
    np.minimum.at(first, labels, nodes)
    rec_labels = sorted(np.flatnonzero(is_rec).tolist(), key=lambda c: first[c])
    rec_index = {c: i for i, c in enumerate(rec_labels)}
    components = []
    by_label = [[] for _ in range(ncomp)]
    for node, lab in zip(nodes.tolist(), labels.tolist()):
        by_label[lab].append(node)
    component_of = np.full(n, -1, dtype=np.int64)
    recurrent = np.zeros(n, dtype=bool)
    for c in rec_labels:
        members = np.array(by_label[c], dtype=np.int64)
        components.append(members)
        component_of[members] = rec_index[c]
        recurrent[members] = True
    order = _component_order(ncomp, labels[ls], labels[ld], rec_index)
    diag = {"core_size": int(k), "scc_count": int(ncomp), "dead_ends": int(np.sum(rel.out_degree() == 0))}
    return MorseDecomposition(rel, core, recurrent, components, order, component_of, self_loop, diag)


def _component_order(ncomp, a, b, rec_index):
    """Pairs (i, j), i != j, of recurrent components with a path i -> j."""
    keep = a != b
    pairs = np.unique(np.stack([a[keep], b[keep]], axis=1), axis=0) if keep.any() else np.zeros((0, 2), np.int64)
    succ = [[] for _ in range(ncomp)]
    indeg = np.zeros(ncomp, dtype=np.int64)
    for x, y in pairs.tolist():
        succ[x].append(y)
        indeg[y] += 1
    topo = []
    queue = deque(np.flatnonzero(indeg == 0).tolist())
    while queue:
        x = queue.popleft()
        topo.append(x)
        for y in succ[x]:
            indeg[y] -= 1
            if indeg[y] == 0:
                queue.append(y)
    reach = [0] * ncomp  # bitsets over recurrent indices
    for x in reversed(topo):
        r = 0
        for y in succ[x]:
            r |= reach[y]
            if y in rec_index:
                r |= 1 << rec_index[y]
        reach[x] = r
    order = set()
    for c, i in rec_index.items():
        r = reach[c]
        j = 0
        while r:
            if r & 1:
                order.add((i, j))
            r >>= 1
            j += 1
    return order


# --------------------------------------------------------- attractor records

@dataclass
class AttractorRecord:
    attractor: BoxSet
    repeller: BoxSet
    basin: BoxSet
    pre_attractor: BoxSet
    seed: str
    forward_invariant: bool
    isolated: bool = True
    components: tuple = ()

    def key(self):
        idx = self.attractor.indices
        return (idx.size, tuple(idx.tolist()))

    def as_random(self, n):
        """The record's sets as sample-independent random box sets."""
        return {name: RandomBoxSet.constant(getattr(self, name), n)
                for name in ("attractor", "repeller", "basin", "pre_attractor")}


def omega_comb(rel, mask, recurrent):
    """Combinatorial omega-limit: everything reachable from recurrent nodes reachable from ``mask``."""
    reach = rel.forward_closure(mask)
    return rel.forward_closure(reach & recurrent)


def forward_invariant_hull(U, agg):
    """Smallest superset of ``U`` closed under the edges of ``agg``."""
    rel = _relation(agg)
    if isinstance(U, RandomBoxSet):
        return RandomBoxSet(tuple(forward_invariant_hull(u, rel) for u in U))
    return BoxSet(U.grid, rel.forward_closure(U.mask))


def universal_basin(rel, target):
    """Nodes all of whose paths enter ``target`` (dead ends count as entering nowhere but have no infinite escape)."""
    x = ~np.asarray(target, dtype=bool)
    while True:
        new = x & rel.preimage(x)
        if np.array_equal(new, x):
            break
        x = new
    return ~x


def repulsion_basin(rel, repeller):
    """Nodes all of whose backward paths enter ``repeller``."""
    x = ~np.asarray(repeller, dtype=bool)
    while True:
        new = x & rel.image(x)
        if np.array_equal(new, x):
            break
        x = new
    return ~x


def _downsets(ncomp, order, cap):
    """All reachability-closed sets of components, or None beyond ``cap``."""
    down = [set() for _ in range(ncomp)]
    for i, j in order:
        down[i].add(j)
    seen = {frozenset()}
    frontier = [frozenset()]
    while frontier:
        nxt = []
        for d in frontier:
            for c in range(ncomp):
                if c not in d and down[c] <= d:
                    e = d | {c}
                    if e not in seen:
                        seen.add(e)
                        nxt.append(e)
                        if len(seen) > cap + 1:
                            return None
        frontier = nxt
    seen.discard(frozenset())
    return sorted(seen, key=lambda s: (len(s), sorted(s)))


def default_downsets(decomp, cap=DOWNSET_CAP):
    k = len(decomp.components)
    ds = _downsets(k, decomp.order, cap)
    if ds is not None:
        return ds, False
    rel = decomp.relation
    fams = set()
    for c in range(k):
        fams.add(frozenset([c]) | {j for (i, j) in decomp.order if i == c})
    # components reachable from each transient node
    sig = np.zeros((rel.n_nodes, k), dtype=bool)
    for c in range(k):
        m = np.zeros(rel.n_nodes, dtype=bool)
        m[decomp.components[c]] = True
        sig[:, c] = rel.backward_closure(m)
    trans = ~decomp.recurrent_mask
    for row in np.unique(sig[trans], axis=0):
        if row.any():
            fams.add(frozenset(np.flatnonzero(row).tolist()))
    return sorted(fams, key=lambda s: (len(s), sorted(s))), True


def _record_from(decomp, rel, a_mask, u_mask, seed, comps):
    basin = universal_basin(rel, u_mask)
    g = rel.grid
    fwd = not np.any(rel.image(basin) & ~basin)
    return AttractorRecord(
        attractor=BoxSet(g, a_mask),
        repeller=BoxSet(g, ~basin),
        basin=BoxSet(g, basin),
        pre_attractor=BoxSet(g, u_mask),
        seed=seed,
        forward_invariant=fwd,
        components=tuple(comps),
    )


def enumerate_attractors(decomp: MorseDecomposition, point_seeds=None, eps=None, cap=DOWNSET_CAP,
                         max_pairs=MAX_PAIRS, diagnostics=None):
    """Attractor-repeller pairs from downsets of the Morse order and point seeds.

    ``point_seeds`` is an array of state points; each is blown up to an
    ``eps`` box neighbourhood, closed under the map and kept if its
    omega-limit sits in the grid interior of that hull.  Records are
    deduplicated by attractor and sorted by (size, box indices).
    """
    rel = decomp.relation
    g = rel.grid
    rec = decomp.recurrent_mask
    diag = diagnostics if diagnostics is not None else {}
    downsets, fallback = default_downsets(decomp, cap)
    diag["downset_fallback"] = fallback
    records = {}
    nonisolated = []
    one = tuple(1 for _ in range(g.dim))
    for ds in downsets:
        s = np.zeros(g.n_nodes, dtype=bool)
        for c in ds:
            s[decomp.components[c]] = True
        a = rel.forward_closure(s)
        u = rel.forward_closure(inflate_mask(g, a, one))
        isolated = np.array_equal(rel.forward_closure(u & rec), a)
        if not isolated:
            u = a.copy()
            nonisolated.append(sorted(ds))
        r = _record_from(decomp, rel, a, u, f"downset{sorted(ds)}", sorted(ds))
        r.isolated = isolated
        records.setdefault(r.key(), r)
    diag["nonisolated_downsets"] = nonisolated
    # the empty attractor matters only when some nodes have no infinite path
    empty = np.zeros(g.n_nodes, dtype=bool)
    if universal_basin(rel, empty).any():
        r = _record_from(decomp, rel, empty, empty, "empty", [])
        records.setdefault(r.key(), r)
    rejected = []
    if point_seeds is not None and len(point_seeds):
        radius = g.radius_for(eps if eps is not None else float(g.h.max()))
        boxes = np.atleast_1d(g.locate(point_seeds))
        pts = np.atleast_2d(np.asarray(point_seeds, dtype=float).reshape(len(boxes), -1))
        for x, b in zip(pts, boxes):
            u0 = np.zeros(g.n_nodes, dtype=bool)
            u0[b] = True
            u0 = inflate_mask(g, u0, radius)
            h = rel.forward_closure(u0)
            a = rel.forward_closure(h & rec)
            inner = interior(BoxSet(g, h)).mask
            if not a.any() or np.any(a & ~inner):
                rejected.append([float(v) for v in x])
                continue
            comps = sorted(set(decomp.component_of[a & rec].tolist()))
            r = _record_from(decomp, rel, a, h, "point" + str([round(float(v), 12) for v in x]), comps)
            records.setdefault(r.key(), r)
    diag["rejected_point_seeds"] = rejected
    out = sorted(records.values(), key=lambda r: r.key())
    if len(out) > max_pairs:
        diag["truncated_pairs"] = len(out) - max_pairs
        out = _select_records(decomp, out, max_pairs)
    return out


def _select_records(decomp, records, k):
    """Keep ``k`` records, first a greedy cover of what the duality needs.

    Needed are: every transient node in ``basin - A`` of some record, and
    every pair of components split by some record (one in A, one in R).
    The remaining slots go to records in canonical order.
    """
    rec = decomp.recurrent_mask
    comps = decomp.components
    todo_nodes = ~rec.copy()
    pairs = {(i, j) for i in range(len(comps)) for j in range(i + 1, len(comps))}
    side = []
    for r in records:
        a = [bool(r.attractor.mask[c[0]]) for c in comps]
        side.append(a)
    chosen = []
    while True:
        best, gain = None, 0
        for n, r in enumerate(records):
            if n in chosen:
                continue
            g = int(np.sum(todo_nodes & r.basin.mask & ~r.attractor.mask))
            g += sum(1 for i, j in pairs if side[n][i] != side[n][j])
            if g > gain:
                best, gain = n, g
        if best is None or len(chosen) == k:
            break
        chosen.append(best)
        r = records[best]
        todo_nodes &= ~(r.basin.mask & ~r.attractor.mask)
        pairs = {(i, j) for i, j in pairs if side[best][i] == side[best][j]}
    for n in range(len(records)):
        if len(chosen) >= k:
            break
        if n not in chosen:
            chosen.append(n)
    return [records[n] for n in sorted(chosen)]


# ------------------------------------------------------------------- duality

@dataclass
class DualityReport:
    recurrent_equals_meet: bool
    complement_equals_join: bool
    meet_witnesses: list
    join_witnesses: list
    repulsion_basin_ok: bool
    basins_forward_invariant: bool
    per_sample: list = field(default_factory=list)

    @property
    def ok(self):
        return self.recurrent_equals_meet and self.complement_equals_join

    def to_dict(self):
        return {
            "recurrent_equals_meet": self.recurrent_equals_meet,
            "complement_equals_join": self.complement_equals_join,
            "meet_witnesses": self.meet_witnesses[:50],
            "join_witnesses": self.join_witnesses[:50],
            "repulsion_basin_equals_complement": self.repulsion_basin_ok,
            "basins_forward_invariant": self.basins_forward_invariant,
            "per_sample": self.per_sample,
        }


def check_duality(decomp, records) -> DualityReport:
    """Compare the recurrent set with the meet of A|R and its complement with the join of basin-A."""
    rel = decomp.relation
    n = rel.n_nodes
    meet = np.ones(n, dtype=bool)
    join = np.zeros(n, dtype=bool)
    rep_ok = True
    fwd_ok = True
    for r in records:
        meet &= r.attractor.mask | r.repeller.mask
        join |= r.basin.mask & ~r.attractor.mask
        if not np.array_equal(repulsion_basin(rel, r.repeller.mask), ~r.attractor.mask):
            rep_ok = False
        fwd_ok &= r.forward_invariant
    rec = decomp.recurrent_mask
    return DualityReport(
        recurrent_equals_meet=bool(np.array_equal(meet, rec)),
        complement_equals_join=bool(np.array_equal(join, ~rec)),
        meet_witnesses=np.flatnonzero(meet != rec).tolist(),
        join_witnesses=np.flatnonzero(join != ~rec).tolist(),
        repulsion_basin_ok=rep_ok,
        basins_forward_invariant=bool(fwd_ok),
    )


def per_sample_duality(maps, cap=DOWNSET_CAP):
    """Rerun decomposition, records and duality on each per-sample map."""
    out = []
    for m in maps:
        d = chain_recurrent_set(m)
        recs = enumerate_attractors(d, cap=cap)
        rep = check_duality(d, recs)
        out.append({
            "sample_id": str(m.sample_id),
            "components": len(d.components),
            "records": len(recs),
            "recurrent_equals_meet": rep.recurrent_equals_meet,
            "complement_equals_join": rep.complement_equals_join,
        })
    return out


# ------------------------------------------------------ simulated limit sets

def _box_points(grid, mask, points_per_box):
    boxes = np.flatnonzero(mask[: grid.n_boxes])
    tmpl = point_template(grid.dim, points_per_box)
    # keep template points off the shared faces so they belong to the box
    tmpl = 0.02 + 0.96 * tmpl
    low = grid.lower(boxes).reshape(-1, grid.dim)
    pts = low[:, None, :] + tmpl[None, :, :] * grid.h
    return pts.reshape(-1, grid.dim)


def _located(grid, states):
    multi, outside = grid.locate_multi(states)
    m = np.zeros(grid.n_nodes, dtype=bool)
    inside = ~outside
    if inside.any():
        m[np.ravel_multi_index(multi[inside].T, grid.shape)] = True
    if outside.any() and grid.exterior_enabled:
        m[grid.exterior] = True
    return m


def _limit_times(T_grid, depth, dt):
    times = sorted({float(t) for t in T_grid if 0 <= t <= depth} | {float(depth)})
    for t in times:
        steps_for(t, dt)
    return times


def _limit(D, system, ensemble, grid, depth, T_grid, points_per_box, backward):
    policy = "free" if grid.exterior_enabled else "clamp"
    result = []
    for i, sample in enumerate(ensemble):
        d = D[i] if isinstance(D, RandomBoxSet) else D
        pts = _box_points(grid, d.mask, points_per_box)
        times = _limit_times(T_grid, depth, sample.dt)
        images = {}
        for t in times:
            n = steps_for(t, sample.dt)
            if backward:
                st, _ = integrate(system, sample, pts, -n, start=n, policy=policy)
            else:
                st, _ = integrate(system, sample, pts, n, start=-n, policy=policy)
            images[t] = _located(grid, st)
        acc = np.ones(grid.n_nodes, dtype=bool)
        for T in times:
            tail = np.zeros(grid.n_nodes, dtype=bool)
            for t in times:
                if t >= T:
                    tail |= images[t]
            acc &= tail
        result.append(BoxSet(grid, acc))
    return RandomBoxSet(tuple(result))


def omega_limit(D, system, ensemble, grid, pullback_depth, T_grid=(), points_per_box=4):
    """Box cover of the pullback omega-limit set, per sample.

    For each time ``t`` in ``T_grid`` (plus ``pullback_depth``) the points
    of ``D`` are started at time ``-t`` and run to time 0; the result is
    the intersection over ``T`` of the union of the images with ``t >= T``.
    """
    return _limit(D, system, ensemble, grid, pullback_depth, T_grid, points_per_box, backward=False)


def alpha_limit(D, system, ensemble, grid, pullback_depth, T_grid=(), points_per_box=4):
    """Mirror of :func:`omega_limit`: start at time ``+t`` and run backward to 0."""
    return _limit(D, system, ensemble, grid, pullback_depth, T_grid, points_per_box, backward=True)


def check_absorbing(U, system, ensemble, grid, eps, T, times=None, points_per_box=4):
    """Per sample: is the ``eps`` neighbourhood of the pullback image ``U_T`` inside ``U``?"""
    if not eps > 0:
        raise ValueError("eps must be positive")
    radius = grid.radius_for(eps)
    times = list(times) if times is not None else [T]
    if min(times) < T:
        raise ValueError("absorption times must be at least T")
    policy = "free" if grid.exterior_enabled else "clamp"
    out = []
    for i, sample in enumerate(ensemble):
        u = U[i] if isinstance(U, RandomBoxSet) else U
        pts = _box_points(grid, u.mask, points_per_box)
        img = np.zeros(grid.n_nodes, dtype=bool)
        left = False
        for t in times:
            n = steps_for(t, sample.dt)
            st, ex = integrate(system, sample, pts, n, start=-n, policy=policy)
            left |= bool(np.any(ex))
            img |= _located(grid, st)
        grown = inflate_mask(grid, img, radius)
        spills = not grid.exterior_enabled and _touches_edge(grid, img, radius)
        out.append(bool(not left and not spills and not np.any(grown & ~u.mask)))
    return out


def _touches_edge(grid, mask, radius):
    inner = mask[: grid.n_boxes].reshape(grid.shape)
    for a, k in enumerate(radius):
        if k == 0:
            continue
        n = inner.shape[a]
        if np.take(inner, np.arange(min(k, n)), axis=a).any() or np.take(inner, np.arange(max(0, n - k), n), axis=a).any():
            return True
    return False


def pullback_refinement(records, system, ensemble, grid, depth, T_grid=(), points_per_box=2, max_boxes=4096):
    """Warning-level comparison of simulated omega-limits with combinatorial attractors."""
    out = []
    for n, r in enumerate(records):
        u = r.pre_attractor
        if len(u) > max_boxes or u.is_empty():
            out.append({"pair": n + 1, "skipped": True})
            continue
        om = omega_limit(u, system, ensemble, grid, depth, T_grid, points_per_box)
        inside = [bool(s <= r.attractor) for s in om]
        out.append({"pair": n + 1, "skipped": False, "inside_attractor": inside,
                    "warning": not all(inside)})
    return out


def point_seed_states(grid, k):
    """``k`` deterministic Halton points spread over the window."""
    if k <= 0:
        return np.zeros((0, grid.dim))
    return halton_points(grid.lo, grid.hi, k)


def morse_dot(decomp, path, labels=None):
    with open(path, "w") as fh:
        fh.write("digraph morse {\n")
        for i, c in enumerate(decomp.components):
            lab = f"M{i} ({len(c)} boxes)"
            if labels is not None:
                lab += f"\\n{labels[i]}"
            fh.write(f'  M{i} [label="{lab}"];\n')
        for i, j in decomp.hasse_edges():
            fh.write(f"  M{i} -> M{j};\n")
        fh.write("}\n")

