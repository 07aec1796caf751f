"""Combinatorial multivalued maps on box grids.

A box map sends each node to a set of nodes.  Images of real systems are
index-space rectangles (the bounding rectangle of the mapped sample
points, padded), so a :class:`Multimap` stores rectangles instead of
explicit edge lists.  Images and preimages of whole node sets are then
computed with a difference array and a summed-area table, which keeps
64^3 grids with hundreds of successors per box cheap.

Any explicit digraph can be wrapped with :meth:`Multimap.from_edges`; it
becomes a 1-D grid whose rectangles are single cells.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .cocycle import BlowupError, integrate
from .grid import BoxGrid, BoxSet
from .noise import steps_for


class BoxMapError(ValueError):
    pass


def _corners(dim):
    return np.array(list(itertools.product((0, 1), repeat=dim)), dtype=np.int64)


class Multimap:
    """A relation on grid nodes given by index rectangles per source node.

    ``owner[k]`` maps to every interior box in the inclusive index
    rectangle ``lo[k] .. hi[k]``; ``to_ext[u]`` adds the edge ``u -> exterior``.
    A node may own any number of rectangles.
    """

    def __init__(self, grid: BoxGrid, owner, lo, hi, to_ext=None):
        self.grid = grid
        owner = np.asarray(owner, dtype=np.int64)
        lo = np.asarray(lo, dtype=np.int64).reshape(-1, grid.dim)
        hi = np.asarray(hi, dtype=np.int64).reshape(-1, grid.dim)
        keep = np.all(lo <= hi, axis=1)
        if not keep.all():
            owner, lo, hi = owner[keep], lo[keep], hi[keep]
        shape = np.array(grid.shape)
        if lo.size and (lo.min() < 0 or np.any(hi >= shape)):
            raise BoxMapError("image rectangle outside the grid")
        order = np.argsort(owner, kind="stable")
        self.owner = owner[order]
        self.lo = lo[order]
        self.hi = hi[order]
        if to_ext is None:
            to_ext = np.zeros(grid.n_nodes, dtype=bool)
        to_ext = np.asarray(to_ext, dtype=bool)
        if to_ext.any() and not grid.exterior_enabled:
            raise BoxMapError("edges to the exterior on a grid without exterior")
        self.to_ext = to_ext
        for arr in (self.owner, self.lo, self.hi, self.to_ext):
            arr.flags.writeable = False

    # -------------------------------------------------------- constructors
    @classmethod
    def from_edges(cls, n, src, dst):
        """Explicit digraph on nodes ``0..n-1``."""
        grid = BoxGrid([0.0], [float(n)], [n])
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise BoxMapError("edge endpoint out of range")
        pairs = np.unique(np.stack([src, dst], axis=1), axis=0) if src.size else np.zeros((0, 2), np.int64)
        return cls(grid, pairs[:, 0], pairs[:, 1:], pairs[:, 1:])

    @classmethod
    def identity(cls, grid: BoxGrid):
        boxes = np.arange(grid.n_boxes)
        mi = grid.unravel(boxes).reshape(-1, grid.dim)
        to_ext = np.zeros(grid.n_nodes, dtype=bool)
        if grid.exterior_enabled:
            to_ext[grid.exterior] = True
        return cls(grid, boxes, mi, mi, to_ext)

    # ----------------------------------------------------------- structure
    @property
    def n_nodes(self):
        return self.grid.n_nodes

    def single_rect(self):
        """Dense ``(valid, lo, hi)`` if every node owns at most one rectangle."""
        if self.owner.size and np.any(self.owner[1:] == self.owner[:-1]):
            return None
        n = self.n_nodes
        valid = np.zeros(n, dtype=bool)
        lo = np.zeros((n, self.grid.dim), dtype=np.int64)
        hi = np.full((n, self.grid.dim), -1, dtype=np.int64)
        valid[self.owner] = True
        lo[self.owner] = self.lo
        hi[self.owner] = self.hi
        return valid, lo, hi

    def rect_sizes(self):
        return np.prod(self.hi - self.lo + 1, axis=1)

    def edge_count(self):
        return int(self.rect_sizes().sum()) + int(self.to_ext.sum())

    def out_degree(self):
        deg = np.bincount(self.owner, weights=self.rect_sizes(), minlength=self.n_nodes).astype(np.int64)
        return deg + self.to_ext

    def successors(self, u):
        sel = self.owner == u
        m = np.zeros(self.n_nodes, dtype=bool)
        for lo, hi in zip(self.lo[sel], self.hi[sel]):
            block = np.zeros(self.grid.shape, dtype=bool)
            block[tuple(slice(a, b + 1) for a, b in zip(lo, hi))] = True
            m[: self.grid.n_boxes] |= block.ravel()
        if self.to_ext[u]:
            m[self.grid.exterior] = True
        return np.flatnonzero(m)

    def has_edge(self, a, b):
        g = self.grid
        if g.exterior_enabled and b == g.exterior:
            return bool(self.to_ext[a])
        mi = np.array(np.unravel_index(b, g.shape))
        sel = self.owner == a
        return bool(np.any(np.all((self.lo[sel] <= mi) & (mi <= self.hi[sel]), axis=1)))

    # ---------------------------------------------------------- set images
    def image(self, mask):
        """Mask of all successors of the nodes in ``mask``."""
        g = self.grid
        mask = np.asarray(mask, dtype=bool)
        out = np.zeros(g.n_nodes, dtype=bool)
        sel = mask[self.owner]
        if sel.any():
            out[: g.n_boxes] = _paint(g.shape, self.lo[sel], self.hi[sel]).ravel()
        if g.exterior_enabled and np.any(self.to_ext & mask):
            out[g.exterior] = True
        return out

    def preimage(self, mask):
        """Mask of all nodes with at least one successor in ``mask``."""
        g = self.grid
        mask = np.asarray(mask, dtype=bool)
        out = np.zeros(g.n_nodes, dtype=bool)
        inner = mask[: g.n_boxes]
        if inner.any() and self.owner.size:
            hits = _rect_counts(inner.reshape(g.shape), self.lo, self.hi) > 0
            out[self.owner[hits]] = True
        if g.exterior_enabled and mask[g.exterior]:
            out |= self.to_ext
        return out

    def forward_closure(self, mask):
        """Nodes reachable from ``mask`` by paths of length >= 0."""
        visited = np.array(mask, dtype=bool)
        frontier = visited.copy()
        while frontier.any():
            new = self.image(frontier) & ~visited
            visited |= new
            frontier = new
        return visited

    def backward_closure(self, mask):
        """Nodes that reach ``mask`` by paths of length >= 0."""
        visited = np.array(mask, dtype=bool)
        frontier = visited.copy()
        while frontier.any():
            new = self.preimage(frontier) & ~visited
            visited |= new
            frontier = new
        return visited

    def edges_within(self, mask=None):
        """Explicit ``(src, dst)`` arrays of the edges with both ends in ``mask``."""
        g = self.grid
        if mask is None:
            mask = np.ones(g.n_nodes, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        sel = mask[self.owner]
        own, lo, hi = self.owner[sel], self.lo[sel], self.hi[sel]
        ext = (np.flatnonzero(self.to_ext & mask) if g.exterior_enabled and mask[g.exterior]
               else np.zeros(0, dtype=np.int64))
        if own.size == 0:
            return ext.copy(), np.full(ext.size, g.exterior, dtype=np.int64)
        sizes = hi - lo + 1
        counts = np.prod(sizes, axis=1)
        total = int(counts.sum())
        rid = np.repeat(np.arange(own.size), counts)
        local = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
        coords = np.empty((total, g.dim), dtype=np.int64)
        for a in range(g.dim - 1, -1, -1):
            s = sizes[rid, a]
            coords[:, a] = lo[rid, a] + local % s
            local //= s
        dst = np.ravel_multi_index(coords.T, g.shape)
        src = own[rid]
        keep = mask[dst]
        src = np.concatenate([src[keep], ext])
        dst = np.concatenate([dst[keep], np.full(ext.size, g.exterior, dtype=np.int64)])
        return src, dst

    def restrict(self, mask):
        """Same relation with sources outside ``mask`` dropped."""
        mask = np.asarray(mask, dtype=bool)
        sel = mask[self.owner]
        return Multimap(self.grid, self.owner[sel], self.lo[sel], self.hi[sel], self.to_ext & mask)


def _paint(shape, lo, hi):
    """Boolean grid of cells covered by at least one inclusive rectangle."""
    dim = len(shape)
    ext = tuple(s + 1 for s in shape)
    size = int(np.prod(ext))
    pos = np.zeros(size, dtype=np.int64)
    neg = np.zeros(size, dtype=np.int64)
    for c in _corners(dim):
        idx = np.where(c.astype(bool), hi + 1, lo)
        flat = np.ravel_multi_index(idx.T, ext)
        counts = np.bincount(flat, minlength=size)
        if c.sum() % 2 == 0:
            pos += counts
        else:
            neg += counts
    acc = (pos - neg).reshape(ext)
    for a in range(dim):
        acc = np.cumsum(acc, axis=a)
    return acc[tuple(slice(0, s) for s in shape)] > 0


def _rect_counts(inner, lo, hi):
    """Number of marked cells inside each inclusive rectangle."""
    dim = inner.ndim
    sat = np.zeros(tuple(s + 1 for s in inner.shape), dtype=np.int64)
    acc = inner.astype(np.int64)
    for a in range(dim):
        acc = np.cumsum(acc, axis=a)
    sat[tuple(slice(1, None) for _ in range(dim))] = acc
    total = np.zeros(lo.shape[0], dtype=np.int64)
    for c in _corners(dim):
        idx = np.where(c.astype(bool), hi + 1, lo)
        vals = sat[tuple(idx.T)]
        if (dim - c.sum()) % 2 == 0:
            total += vals
        else:
            total -= vals
    return total


# ------------------------------------------------------------------ templates

def point_template(dim, points_per_box):
    """Unit-cube template: the ``2^dim`` corners, then Halton points.

    Smaller templates are prefixes of larger ones, so adding points never
    removes any sample point.
    """
    if points_per_box < 1:
        raise BoxMapError("points_per_box must be at least 1")
    corners = _corners(dim).astype(float)
    n_int = max(0, points_per_box - corners.shape[0])
    if n_int:
        halton = qmc.Halton(d=dim, scramble=False).random(n_int + 1)[1:]
        pts = np.vstack([corners, halton])
    else:
        pts = corners
    return pts[:points_per_box]


def halton_points(lo, hi, n, skip=1):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = qmc.Halton(d=lo.size, scramble=False).random(n + skip)[skip:]
    return lo + u * (hi - lo)


def _template_points(grid: BoxGrid, points_per_box):
    """All distinct sample points and, per box, the rows that belong to it.

    Corner points are the shared grid vertices.
    """
    dim = grid.dim
    tmpl = point_template(dim, points_per_box)
    n_corner = min(points_per_box, 2 ** dim)
    corner_offsets = _corners(dim)[:n_corner]
    vshape = tuple(s + 1 for s in grid.shape)
    axes = [grid.bounds[a] for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([m.ravel() for m in mesh], axis=1)
    boxes = np.arange(grid.n_boxes)
    bmi = grid.unravel(boxes).reshape(-1, dim)
    rows = np.empty((grid.n_boxes, points_per_box), dtype=np.int64)
    for j, off in enumerate(corner_offsets):
        rows[:, j] = np.ravel_multi_index((bmi + off).T, vshape)
    parts = [vertices]
    n_int = points_per_box - n_corner
    if n_int:
        low = grid.lower(boxes).reshape(-1, dim)
        base = vertices.shape[0]
        inner = low[:, None, :] + tmpl[None, n_corner:, :] * grid.h
        parts.append(inner.reshape(-1, dim))
        rows[:, n_corner:] = base + np.arange(grid.n_boxes * n_int).reshape(grid.n_boxes, n_int)
    return np.vstack(parts), rows


# ------------------------------------------------------------------- box maps

@dataclass
class BoxMap:
    grid: BoxGrid
    sample_id: int
    T: float
    eps: float
    points_per_box: int
    relation: Multimap
    info: dict = field(default_factory=dict)


def image_radius(grid, eps):
    """Index padding for images: ``eps`` plus one box diagonal."""
    diag = float(np.sqrt(np.sum(grid.h ** 2)))
    return grid.radius_for(eps + diag)


def rectangles_from_points(grid, pts_multi, outside, rows, radius):
    """Padded bounding rectangles of located points, one per row set."""
    dim = grid.dim
    big = np.iinfo(np.int64).max
    mi = pts_multi[rows]  # (n, P, dim)
    out = outside[rows]
    lo = np.where(out[..., None], big, mi).min(axis=1)
    hi = np.where(out[..., None], -1, mi).max(axis=1)
    valid = ~out.all(axis=1)
    r = np.asarray(radius, dtype=np.int64)
    shape = np.array(grid.shape)
    raw_lo = lo - r
    raw_hi = hi + r
    spill = valid & (np.any(raw_lo < 0, axis=1) | np.any(raw_hi > shape - 1, axis=1))
    lo = np.clip(raw_lo, 0, shape - 1)
    hi = np.clip(raw_hi, 0, shape - 1)
    lo[~valid] = 0
    hi[~valid] = -1
    any_out = out.any(axis=1)
    return valid, lo.reshape(-1, dim), hi.reshape(-1, dim), spill, any_out


class MapBuilder:
    """Integrates the point template once per sample and snapshots maps.

    Calls to :meth:`advance` must use increasing ``T``; the states are
    continued from the previous snapshot, which is exact by the cocycle
    property.
    """

    def __init__(self, system, sample, grid, points_per_box, policy=None, collar_points=4096, collar_width=None):
        if points_per_box < 1:
            raise BoxMapError("points_per_box must be at least 1")
        self.system = system
        self.sample = sample
        self.grid = grid
        self.ppb = points_per_box
        self.policy = policy or ("free" if grid.exterior_enabled else "clamp")
        self.points, self.rows = _template_points(grid, points_per_box)
        self.states = self.points.copy()
        self.exited = np.zeros(self.points.shape[0], dtype=bool)
        self.steps = 0
        self.collar = None
        if grid.exterior_enabled:
            width = collar_width if collar_width is not None else 4.0 * float(grid.h.max())
            lo = grid.lo - width
            hi = grid.hi + width
            cand = halton_points(lo, hi, collar_points * 4)
            inside = np.all((cand >= grid.lo) & (cand <= grid.hi), axis=1)
            self.collar = cand[~inside][:collar_points]
            self.collar_states = self.collar.copy()
            self.collar_exited = np.zeros(self.collar.shape[0], dtype=bool)

    def _run(self, states, exited, n):
        try:
            return integrate(self.system, self.sample, states, n, start=self.steps,
                             policy=self.policy, exited=exited)
        except BlowupError as err:
            idx = getattr(err, "indices", None)
            if idx is not None and states is self.states:
                owners = np.flatnonzero(np.isin(self.rows, idx).any(axis=1))
                raise BlowupError(err.time, f"box {int(owners[0])}" if owners.size else "") from err
            raise

    def advance(self, T, eps):
        n = steps_for(T, self.sample.dt)
        if n <= 0:
            raise BoxMapError("T must be a positive multiple of dt")
        if n < self.steps:
            raise BoxMapError("chain times must be increasing")
        extra = n - self.steps
        if extra:
            self.states, self.exited = self._run(self.states, self.exited, extra)
            if self.collar is not None:
                self.collar_states, self.collar_exited = self._run(self.collar_states, self.collar_exited, extra)
            self.steps = n
        return self._snapshot(T, eps)

    def _snapshot(self, T, eps):
        g = self.grid
        radius = image_radius(g, eps)
        multi, outside = g.locate_multi(self.states)
        valid, lo, hi, spill, any_out = rectangles_from_points(g, multi, outside, self.rows, radius)
        to_ext = np.zeros(g.n_nodes, dtype=bool)
        info = {"exited_points": int(self.exited.sum()), "policy": self.policy}
        owners = np.arange(g.n_boxes)
        if g.exterior_enabled:
            to_ext[: g.n_boxes] = spill | any_out
            cm, cout = g.locate_multi(self.collar_states)
            cvalid, clo, chi, cspill, _ = rectangles_from_points(
                g, cm, cout, np.arange(cm.shape[0])[None, :], radius)
            reenters = not cout.any()
            to_ext[g.exterior] = (not reenters) or bool(cspill[0])
            info["exterior_reentry"] = reenters
            info["collar_points"] = int(cm.shape[0])
            if cvalid[0]:
                owners = np.append(owners, g.exterior)
                valid = np.append(valid, True)
                lo = np.vstack([lo, clo])
                hi = np.vstack([hi, chi])
        elif self.exited.any():
            info["clamped_boxes"] = int(self.exited[self.rows].any(axis=1).sum())
        rel = Multimap(g, owners[valid], lo[valid], hi[valid], to_ext)
        return BoxMap(g, self.sample.seed, float(T), float(eps), self.ppb, rel, info)


def build_box_map(system, sample, grid, T, eps, points_per_box, policy=None, **kw) -> BoxMap:
    """Box map of one sample: padded images of the point template after time ``T``."""
    if eps < 0:
        raise BoxMapError("eps must be non-negative")
    return MapBuilder(system, sample, grid, points_per_box, policy, **kw).advance(T, eps)


# ---------------------------------------------------------------- aggregation

@dataclass
class AggregatedMap:
    grid: BoxGrid
    maps: list
    mode: str
    q: float
    relation: Multimap
    T: float
    eps: float

    @property
    def per_sample(self):
        return self.maps


def parse_mode(mode):
    """``"all_samples"`` or ``"quantile(q)"`` / ``("quantile", q)``."""
    if isinstance(mode, tuple):
        name, q = mode
    elif mode == "all_samples":
        return "all_samples", 1.0
    elif isinstance(mode, str) and mode.startswith("quantile(") and mode.endswith(")"):
        name, q = "quantile", float(mode[9:-1])
    else:
        raise BoxMapError(f"unknown aggregation mode {mode!r}")
    if name != "quantile" or not 0.0 < q <= 1.0:
        raise BoxMapError(f"bad aggregation mode {mode!r}")
    return "quantile", float(q)


def aggregate(maps, mode="all_samples") -> AggregatedMap:
    """Combine per-sample maps: keep an edge if it holds in enough samples."""
    if not maps:
        raise BoxMapError("no maps to aggregate")
    name, q = parse_mode(mode)
    first = maps[0]
    for m in maps[1:]:
        if m.grid != first.grid or m.T != first.T or m.eps != first.eps:
            raise BoxMapError("maps disagree on grid, T or eps")
    rels = [m.relation for m in maps]
    n = len(rels)
    need = n if name == "all_samples" else int(math.ceil(q * n - 1e-12))
    need = max(1, need)
    if n == 1:
        rel = rels[0]
    elif need == n and all(r.single_rect() is not None for r in rels):
        rel = _intersect_single(first.grid, rels)
    else:
        rel = _count_aggregate(first.grid, rels, need)
    return AggregatedMap(first.grid, list(maps), name, q, rel, first.T, first.eps)


def aggregate_relations(grid, rels, need):
    if need >= len(rels) and all(r.single_rect() is not None for r in rels):
        return _intersect_single(grid, rels)
    return _count_aggregate(grid, rels, need)


def _intersect_single(grid, rels):
    valid, lo, hi = rels[0].single_rect()
    lo = lo.copy()
    hi = hi.copy()
    valid = valid.copy()
    to_ext = rels[0].to_ext.copy()
    for r in rels[1:]:
        v, l, h = r.single_rect()
        valid &= v
        np.maximum(lo, l, out=lo)
        np.minimum(hi, h, out=hi)
        to_ext &= r.to_ext
    valid &= np.all(lo <= hi, axis=1)
    owners = np.flatnonzero(valid)
    return Multimap(grid, owners, lo[owners], hi[owners], to_ext)


def _count_aggregate(grid, rels, need):
    """Generic threshold aggregation by per-node coordinate compression."""
    dim = grid.dim
    n_nodes = grid.n_nodes
    by_node = [np.searchsorted(r.owner, np.arange(n_nodes + 1)) for r in rels]
    out_owner, out_lo, out_hi = [], [], []
    for u in range(n_nodes):
        rects = []
        for s, r in enumerate(rels):
            a, b = by_node[s][u], by_node[s][u + 1]
            if b > a:
                rects.append((s, r.lo[a:b], r.hi[a:b]))
        samples_with = len({s for s, _, _ in rects})
        if samples_with < need:
            continue
        cuts = []
        for ax in range(dim):
            vals = np.concatenate([np.concatenate([lo[:, ax], hi[:, ax] + 1]) for _, lo, hi in rects])
            cuts.append(np.unique(vals))
        cshape = tuple(len(c) - 1 for c in cuts)
        count = np.zeros(cshape, dtype=np.int64)
        for s in sorted({s for s, _, _ in rects}):
            cover = np.zeros(cshape, dtype=bool)
            for ss, lo, hi in rects:
                if ss != s:
                    continue
                for l, h in zip(lo, hi):
                    sl = tuple(slice(int(np.searchsorted(cuts[ax], l[ax])), int(np.searchsorted(cuts[ax], h[ax] + 1)))
                               for ax in range(dim))
                    cover[sl] = True
            count += cover
        for cell in np.argwhere(count >= need):
            out_owner.append(u)
            out_lo.append([cuts[ax][cell[ax]] for ax in range(dim)])
            out_hi.append([cuts[ax][cell[ax] + 1] - 1 for ax in range(dim)])
    ext_count = np.sum([r.to_ext for r in rels], axis=0)
    to_ext = ext_count >= need
    return Multimap(grid, np.array(out_owner, dtype=np.int64),
                    np.array(out_lo, dtype=np.int64).reshape(-1, dim),
                    np.array(out_hi, dtype=np.int64).reshape(-1, dim), to_ext)


# ---------------------------------------------------------------- reachability

def chain_reachable(rel, a, b):
    """True iff a path of length >= 1 leads from node ``a`` to node ``b``."""
    if isinstance(rel, (BoxMap, AggregatedMap)):
        rel = rel.relation
    start = np.zeros(rel.n_nodes, dtype=bool)
    start[a] = True
    reach = rel.forward_closure(rel.image(start))
    return bool(reach[b])


def image_set(rel, s: BoxSet) -> BoxSet:
    return BoxSet(s.grid, rel.image(s.mask))


# ------------------------------------------------------------------ exports

def export_edges_csv(rel, path, chunk=4096):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target"])
        for src, dst in _edge_chunks(rel, chunk):
            w.writerows(zip(src.tolist(), dst.tolist()))


def export_dot(rel, path, name="boxmap", chunk=4096):
    with open(path, "w") as fh:
        fh.write(f"digraph {name} {{\n")
        for src, dst in _edge_chunks(rel, chunk):
            fh.writelines(f"  {s} -> {d};\n" for s, d in zip(src.tolist(), dst.tolist()))
        fh.write("}\n")


def _edge_chunks(rel, chunk):
    n = rel.n_nodes
    for start in range(0, n, chunk):
        mask = np.zeros(n, dtype=bool)
        mask[start:start + chunk] = True
        sub = rel.restrict(mask)
        src, dst = sub.edges_within(np.ones(n, dtype=bool))
        order = np.lexsort((dst, src))
        yield src[order], dst[order]
