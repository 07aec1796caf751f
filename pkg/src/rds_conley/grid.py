"""Uniform box grids and box sets.

Boxes are half-open ``[lo, hi)`` per axis, except that the upper face of
the window belongs to the last box, so every point of the window lies in
exactly one box.  Interior boxes are numbered in C order; when the
exterior is enabled one extra node ``grid.exterior`` (= ``n_boxes``)
stands for everything outside the window.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_EPS_TOL = 1e-9


class GridError(ValueError):
    pass


class OutOfWindow(GridError):
    pass


class BoxGrid:
    def __init__(self, lo, hi, divisions, exterior=False):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        div = np.atleast_1d(np.asarray(divisions, dtype=np.int64))
        if div.size == 1 and lo.size > 1:
            div = np.repeat(div, lo.size)
        if not (lo.shape == hi.shape == div.shape):
            raise GridError("lo, hi and divisions must have one entry per axis")
        if np.any(hi <= lo):
            raise GridError("window sides must have positive length")
        if np.any(div < 1):
            raise GridError("divisions must be positive")
        self.lo = lo
        self.hi = hi
        self.shape = tuple(int(d) for d in div)
        self.dim = lo.size
        self.h = (hi - lo) / div
        self.exterior_enabled = bool(exterior)
        self.n_boxes = int(np.prod(div))
        self.n_nodes = self.n_boxes + (1 if exterior else 0)
        self.exterior = self.n_boxes if exterior else -1
        # bounds[a][i] is the lower face of box i on axis a; bounds[a][n] = hi
        self.bounds = []
        for a in range(self.dim):
            b = lo[a] + np.arange(self.shape[a] + 1) * self.h[a]
            b[-1] = hi[a]
            self.bounds.append(b)
        self.key = (tuple(lo.tolist()), tuple(hi.tolist()), self.shape, self.exterior_enabled)

    def __eq__(self, other):
        return isinstance(other, BoxGrid) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"BoxGrid(lo={self.lo.tolist()}, hi={self.hi.tolist()}, divisions={list(self.shape)}, exterior={self.exterior_enabled})"

    # ------------------------------------------------------------ geometry
    def locate_multi(self, points):
        """Per-axis indices of points ``(m, dim)``; -1 marks outside."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if p.shape[1] != self.dim:
            raise GridError(f"points must have {self.dim} coordinates")
        idx = np.empty(p.shape, dtype=np.int64)
        outside = np.zeros(p.shape[0], dtype=bool)
        for a in range(self.dim):
            x = p[:, a]
            i = np.searchsorted(self.bounds[a], x, side="right") - 1
            n = self.shape[a]
            i[x == self.hi[a]] = n - 1
            bad = (x < self.lo[a]) | (x > self.hi[a]) | ~np.isfinite(x)
            outside |= bad
            idx[:, a] = i
        idx[outside] = -1
        return idx, outside

    def locate(self, points):
        """Box index of each point; EXTERIOR (or an error) outside the window."""
        p = np.asarray(points, dtype=float)
        # a scalar (1-D grids) or a single coordinate vector gives an int
        single = p.ndim == 0 or (p.ndim == 1 and self.dim > 1)
        if self.dim == 1 and p.ndim == 1:
            p = p[:, None]
        p = np.atleast_2d(p)
        multi, outside = self.locate_multi(p)
        if outside.any():
            if not self.exterior_enabled:
                first = np.atleast_2d(p)[np.flatnonzero(outside)[0]]
                raise OutOfWindow(f"point {first.tolist()} lies outside the window and the grid has no exterior")
        flat = np.ravel_multi_index(np.where(outside[:, None], 0, multi).T, self.shape)
        flat = np.where(outside, self.exterior, flat)
        return int(flat[0]) if single else flat

    def unravel(self, boxes):
        return np.stack(np.unravel_index(np.asarray(boxes), self.shape), axis=-1)

    def lower(self, boxes):
        mi = self.unravel(boxes)
        return np.stack([self.bounds[a][mi[..., a]] for a in range(self.dim)], axis=-1)

    def upper(self, boxes):
        mi = self.unravel(boxes)
        return np.stack([self.bounds[a][mi[..., a] + 1] for a in range(self.dim)], axis=-1)

    def center(self, boxes):
        return 0.5 * (self.lower(boxes) + self.upper(boxes))

    def radius_for(self, eps):
        """Per-axis index radius of a strict sup-ball of radius ``eps``."""
        if eps < 0:
            raise GridError("inflation radius must be non-negative")
        return tuple(max(0, int(math.ceil(eps / hh - _EPS_TOL))) for hh in self.h)

    def full(self):
        return BoxSet(self, np.ones(self.n_nodes, dtype=bool))

    def empty(self):
        return BoxSet(self, np.zeros(self.n_nodes, dtype=bool))

    def from_indices(self, idx):
        m = np.zeros(self.n_nodes, dtype=bool)
        m[np.asarray(idx, dtype=np.int64)] = True
        return BoxSet(self, m)

    def from_points(self, points):
        return self.from_indices(np.atleast_1d(self.locate(points)))

    def interior_boxes(self):
        m = np.zeros(self.n_nodes, dtype=bool)
        m[: self.n_boxes] = True
        return BoxSet(self, m)

    def boxes_in(self, lo, hi):
        """Boxes meeting the closed axis-aligned region ``[lo, hi]``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        sl = []
        for a in range(self.dim):
            i0 = max(0, int(np.searchsorted(self.bounds[a], lo[a], side="right")) - 1)
            i1 = min(self.shape[a] - 1, int(np.searchsorted(self.bounds[a], hi[a], side="right")) - 1)
            if hi[a] < self.lo[a] or lo[a] > self.hi[a] or i1 < i0:
                return self.empty()
            sl.append(slice(i0, i1 + 1))
        block = np.zeros(self.shape, dtype=bool)
        block[tuple(sl)] = True
        m = np.zeros(self.n_nodes, dtype=bool)
        m[: self.n_boxes] = block.ravel()
        return BoxSet(self, m)


class BoxSet:
    """An immutable set of grid nodes, stored as a boolean mask."""

    __slots__ = ("grid", "mask")

    def __init__(self, grid: BoxGrid, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (grid.n_nodes,):
            raise GridError(f"mask has shape {mask.shape}, grid has {grid.n_nodes} nodes")
        if mask.flags.writeable:
            mask = mask.copy()
            mask.flags.writeable = False
        self.grid = grid
        self.mask = mask

    def _check(self, other):
        if not isinstance(other, BoxSet):
            raise TypeError("expected a BoxSet")
        if other.grid is not self.grid and other.grid != self.grid:
            raise GridError("box sets belong to different grids")

    def __or__(self, other):
        self._check(other)
        return BoxSet(self.grid, self.mask | other.mask)

    def __and__(self, other):
        self._check(other)
        return BoxSet(self.grid, self.mask & other.mask)

    def __sub__(self, other):
        self._check(other)
        return BoxSet(self.grid, self.mask & ~other.mask)

    def __invert__(self):
        return BoxSet(self.grid, ~self.mask)

    def __le__(self, other):
        self._check(other)
        return not np.any(self.mask & ~other.mask)

    def __eq__(self, other):
        if not isinstance(other, BoxSet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.grid.key, self.mask.tobytes()))

    def __contains__(self, box):
        return bool(self.mask[box])

    def __len__(self):
        return int(self.mask.sum())

    def __repr__(self):
        return f"BoxSet({len(self)} of {self.grid.n_nodes} nodes)"

    @property
    def indices(self):
        return np.flatnonzero(self.mask)

    def is_empty(self):
        return not self.mask.any()

    def interior_mask(self):
        g = self.grid
        return self.mask[: g.n_boxes].reshape(g.shape)

    def has_exterior(self):
        return self.grid.exterior_enabled and bool(self.mask[self.grid.exterior])


def union(a, b):
    return a | b


def intersect(a, b):
    return a & b


def complement(a):
    return ~a


def is_subset(a, b):
    return a <= b


def inflate_mask(grid, mask, radius):
    """Inflate a node mask by per-axis index radii (exterior aware)."""
    r = tuple(radius)
    if not any(r):
        return mask.copy()
    inner = mask[: grid.n_boxes].reshape(grid.shape)
    out = np.zeros(grid.n_nodes, dtype=bool)
    grown = ndimage.maximum_filter(inner, size=tuple(2 * k + 1 for k in r), mode="constant", cval=False)
    if grid.exterior_enabled:
        ext = mask[grid.exterior]
        if ext:
            # boxes closer than eps to the outside of the window
            collar = np.zeros(grid.shape, dtype=bool)
            for a, k in enumerate(r):
                if k == 0:
                    continue
                sl = [slice(None)] * grid.dim
                sl[a] = slice(0, k)
                collar[tuple(sl)] = True
                sl[a] = slice(grid.shape[a] - k, None)
                collar[tuple(sl)] = True
            grown |= collar
        out[grid.exterior] = ext or _spills(inner, r)
    out[: grid.n_boxes] = grown.ravel()
    return out


def _spills(inner, r):
    for a, k in enumerate(r):
        if k == 0:
            continue
        n = inner.shape[a]
        lo = np.take(inner, np.arange(min(k, n)), axis=a)
        hi = np.take(inner, np.arange(max(0, n - k), n), axis=a)
        if lo.any() or hi.any():
            return True
    return False


def inflate(s: BoxSet, eps: float) -> BoxSet:
    """All nodes closer than ``eps`` (sup metric) to ``s``; ``eps=0`` is the identity."""
    g = s.grid
    return BoxSet(g, inflate_mask(g, s.mask, g.radius_for(eps)))


def interior(s: BoxSet) -> BoxSet:
    """Nodes all of whose sup-metric neighbours (including themselves) lie in ``s``.

    Without an exterior, neighbours outside the window do not exist and
    are ignored.
    """
    g = s.grid
    inner = s.interior_mask()
    ext = s.has_exterior()
    cval = True if not g.exterior_enabled else ext
    eroded = ndimage.minimum_filter(inner, size=3, mode="constant", cval=cval)
    out = np.zeros(g.n_nodes, dtype=bool)
    out[: g.n_boxes] = eroded.ravel()
    if g.exterior_enabled and ext:
        out[g.exterior] = bool(np.all(_boundary_layer(inner)))
    return BoxSet(g, out)


def _boundary_layer(inner):
    vals = []
    for a in range(inner.ndim):
        vals.append(np.take(inner, [0], axis=a).ravel())
        vals.append(np.take(inner, [inner.shape[a] - 1], axis=a).ravel())
    return np.concatenate(vals)


@dataclass(frozen=True)
class RandomBoxSet:
    """One box set per noise sample, indexed like the ensemble."""

    per_sample: tuple

    def __post_init__(self):
        if not self.per_sample:
            raise GridError("a random box set needs at least one sample")
        g = self.per_sample[0].grid
        for s in self.per_sample:
            if s.grid != g:
                raise GridError("all samples of a random box set must share one grid")

    @classmethod
    def constant(cls, s: BoxSet, n: int):
        return cls(tuple([s] * n))

    @property
    def grid(self):
        return self.per_sample[0].grid

    def __len__(self):
        return len(self.per_sample)

    def __getitem__(self, i):
        return self.per_sample[i]

    def __iter__(self):
        return iter(self.per_sample)

    def _zip(self, other, op):
        if len(other) != len(self):
            raise GridError("random box sets have different sample counts")
        return RandomBoxSet(tuple(op(a, b) for a, b in zip(self.per_sample, other.per_sample)))

    def __or__(self, other):
        return self._zip(other, union)

    def __and__(self, other):
        return self._zip(other, intersect)

    def __sub__(self, other):
        return self._zip(other, lambda a, b: a - b)

    def __invert__(self):
        return RandomBoxSet(tuple(~a for a in self.per_sample))

    def __eq__(self, other):
        if not isinstance(other, RandomBoxSet):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    def __le__(self, other):
        return all(a <= b for a, b in zip(self, other))

    def intersection_all(self):
        m = np.logical_and.reduce([s.mask for s in self.per_sample])
        return BoxSet(self.grid, m)

    def union_all(self):
        m = np.logical_or.reduce([s.mask for s in self.per_sample])
        return BoxSet(self.grid, m)


def export_boxset_csv(s: BoxSet, path, only_members=False):
    """Write ``box, lo_0.., side_0.., member`` rows; the exterior row has blank geometry."""
    g = s.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["box"] + [f"lo_{a}" for a in range(g.dim)] + [f"side_{a}" for a in range(g.dim)] + ["member"])
        boxes = np.arange(g.n_boxes)
        if only_members:
            boxes = boxes[s.mask[: g.n_boxes]]
        lows = g.lower(boxes) if boxes.size else np.zeros((0, g.dim))
        sides = ["%.17g" % v for v in g.h]
        for b, low in zip(boxes.tolist(), lows.tolist()):
            w.writerow([b] + ["%.17g" % v for v in low] + sides + [int(s.mask[b])])
        if g.exterior_enabled and (not only_members or s.mask[g.exterior]):
            w.writerow([g.exterior] + [""] * (2 * g.dim) + [int(s.mask[g.exterior])])
