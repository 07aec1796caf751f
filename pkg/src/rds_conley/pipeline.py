"""End-to-end runs: ensemble, sweep of box maps, decomposition, Lyapunov field."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxmap import MapBuilder, aggregate, export_dot
from .config import RunConfig
from .conley import (
    check_duality,
    chain_recurrent_set,
    enumerate_attractors,
    morse_dot,
    per_sample_duality,
    point_seed_states,
    pullback_refinement,
)
from .lyapunov import label_components, lyapunov_field
from .noise import generate_ensemble
from .serialize import fmt_float, write_float_table, write_json

log = logging.getLogger(__name__)

THREADS_ENV = "RDS_CONLEY_THREADS"


def worker_count(cfg: RunConfig | None = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be positive")
        return n
    if cfg is not None and cfg.threads > 0:
        return cfg.threads
    return os.cpu_count() or 1


def make_executor(cfg):
    n = worker_count(cfg)
    return ThreadPoolExecutor(max_workers=n) if n > 1 else None


def _map(executor, fn, items):
    return list(executor.map(fn, items)) if executor is not None else [fn(x) for x in items]


def runs(mask):
    """Index set as sorted ``[first, last]`` runs."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) != 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return [[int(a), int(b)] for a, b in zip(starts, ends)]


@dataclass
class SweepPoint:
    eps: float
    T: float
    decomp: object
    agg: object


@dataclass
class DecomposeResult:
    cfg: RunConfig
    system: object
    grid: object
    ensemble: object
    sweep: list
    records: list
    duality: object
    diagnostics: dict = field(default_factory=dict)

    @property
    def finest(self) -> SweepPoint:
        return self.sweep[-1]

    @property
    def decomp(self):
        return self.finest.decomp


def build_ensemble(cfg: RunConfig):
    return generate_ensemble(cfg.noise_kind, cfg.samples, cfg.dt, cfg.horizon, cfg.master_seed,
                             channels=cfg.channels, ou_rate=cfg.ou_rate, ou_scale=cfg.ou_scale)


def run_decompose(cfg: RunConfig, executor=None) -> DecomposeResult:
    system = cfg.system()
    grid = cfg.grid()
    ens = build_ensemble(cfg)
    if cfg.channels < system.noise_channels:
        raise ValueError(f"the system needs {system.noise_channels} noise channels, config has {cfg.channels}")
    builders = _map(executor, lambda s: MapBuilder(system, s, grid, cfg.points_per_box), list(ens))
    sweep = []
    for eps, T in cfg.sweep():
        maps = _map(executor, lambda b: b.advance(T, eps), builders)
        agg = aggregate(maps, cfg.aggregation)
        d = chain_recurrent_set(agg)
        log.info("eps=%s T=%s: %d components, %d recurrent boxes", fmt_float(eps), fmt_float(T),
                 len(d.components), int(d.recurrent_mask.sum()))
        sweep.append(SweepPoint(eps, T, d, agg))
    fin = sweep[-1]
    diag = {}
    seeds = point_seed_states(grid, cfg.point_seeds)
    records = enumerate_attractors(fin.decomp, point_seeds=seeds, eps=fin.eps, diagnostics=diag)
    duality = check_duality(fin.decomp, records)
    if cfg.per_sample_duality:
        duality.per_sample = per_sample_duality(fin.agg.maps)
    if cfg.pullback_depth > 0:
        diag["pullback"] = pullback_refinement(records, system, ens, grid, cfg.pullback_depth,
                                               [t for _, t in cfg.sweep()])
    diag["map_info"] = [m.info for m in fin.agg.maps]
    return DecomposeResult(cfg, system, grid, ens, sweep, records, duality, diag)


@dataclass
class LyapunovResult:
    dec: DecomposeResult
    field: object
    labeling: object


def run_lyapunov(cfg: RunConfig, executor=None, dec=None) -> LyapunovResult:
    dec = dec or run_decompose(cfg, executor)
    fld = lyapunov_field(dec.system, dec.ensemble, dec.grid, dec.decomp, dec.records,
                         cfg.t_max, cfg.dt_scan, lookback=cfg.T[-1], executor=executor)
    lab = label_components(dec.decomp, dec.records, fld)
    if lab.merged:
        log.warning("components with equal signatures: %s", lab.merged)
    return LyapunovResult(dec, fld, lab)


# ---------------------------------------------------------------- artifacts

def record_dict(n, r):
    return {
        "pair": n + 1,
        "seed": r.seed,
        "components": list(r.components),
        "isolated": bool(r.isolated),
        "forward_invariant": bool(r.forward_invariant),
        "attractor_size": len(r.attractor),
        "repeller_size": len(r.repeller),
        "basin_size": len(r.basin),
        "pre_attractor_size": len(r.pre_attractor),
        "attractor": runs(r.attractor.mask),
        "repeller": runs(r.repeller.mask),
    }


def component_dict(grid, i, comp):
    inner = comp[comp < grid.n_boxes]
    d = {"id": i, "size": int(comp.size), "boxes": runs(np.isin(np.arange(grid.n_nodes), comp)),
         "exterior": bool(grid.exterior_enabled and grid.exterior in comp)}
    if inner.size:
        d["lower"] = grid.lower(inner).reshape(-1, grid.dim).min(axis=0).tolist()
        d["upper"] = grid.upper(inner).reshape(-1, grid.dim).max(axis=0).tolist()
    return d


def decomposition_dict(res: DecomposeResult):
    g = res.grid
    d = res.decomp
    return {
        "config": res.cfg.echo(),
        "grid": {"n_boxes": g.n_boxes, "n_nodes": g.n_nodes, "h": g.h.tolist(),
                 "exterior_node": g.exterior if g.exterior_enabled else None},
        "noise_seeds": [str(s) for s in res.ensemble.seeds],
        "sweep": [{"eps": p.eps, "T": p.T, "components": len(p.decomp.components),
                   "recurrent_boxes": int(p.decomp.recurrent_mask.sum()),
                   "edges": int(p.decomp.relation.edge_count()),
                   **p.decomp.diagnostics} for p in res.sweep],
        "certification": "certified up to sweep resolution",
        "components": [component_dict(g, i, c) for i, c in enumerate(d.components)],
        "order": [list(e) for e in sorted(d.order)],
        "hasse": [list(e) for e in d.hasse_edges()],
        "records": [record_dict(n, r) for n, r in enumerate(res.records)],
        "record_diagnostics": {k: v for k, v in res.diagnostics.items() if k != "map_info"},
        "duality": res.duality.to_dict(),
    }


def write_boxes_csv(path, grid, decomp):
    n = grid.n_boxes
    idx = np.arange(n)
    centers = grid.center(idx).reshape(n, grid.dim)
    header = ["box"] + [f"x{a}" for a in range(grid.dim)] + ["recurrent", "component"]
    comp = decomp.component_of[:n]
    rec = decomp.recurrent_mask[:n].astype(np.int64)
    # integers written through the float formatter are exact below 2^53
    write_float_table(path, header, [idx], np.vstack([centers.T, rec, comp]).astype(float))


def write_decomposition(res: DecomposeResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(decomposition_dict(res), out / "decomposition.json")
    for k, p in enumerate(res.sweep):
        sub = out / f"sweep{k}"
        sub.mkdir(exist_ok=True)
        write_boxes_csv(sub / "boxes.csv", res.grid, p.decomp)
        morse_dot(p.decomp, sub / "morse.dot")
    morse_dot(res.decomp, out / "morse.dot")
    write_boxes_csv(out / "boxes.csv", res.grid, res.decomp)


def components_dict(lr: LyapunovResult):
    lab = lr.labeling
    d = lr.dec.decomp
    order = sorted(range(len(d.components)), key=lambda i: (-lab.critical[i], i))
    return {
        "pairs": len(lr.dec.records),
        "delta_const": lr.field.delta_const,
        "certification": "certified up to sweep resolution",
        "components": [{"id": i, "critical_value": float(lab.critical[i]),
                        "critical_exact": lab.critical[i], "signature": lab.signatures[i],
                        "size": int(d.components[i].size)} for i in order],
        "merged": [list(m) for m in lab.merged],
        "truncation": lr.field.diagnostics,
    }


def write_lyapunov_csv(path, fld):
    g = fld.grid
    n = g.n_boxes
    N = fld.n_pairs
    centers = fld.points[:n]
    header = ["sample", "box"] + [f"x{a}" for a in range(g.dim)] + [f"l{k + 1}" for k in range(N)] + ["L"]
    Path(path).write_text(",".join(header) + "\n", encoding="utf-8")
    for s, sid in enumerate(fld.sample_ids):
        cols = np.vstack([centers.T, fld.l[s, :, :n], fld.L[s, :n][None, :]])
        write_float_table(path, None, [np.arange(n)], cols, prefix=f"{sid},", mode="a")


def write_lyapunov(lr: LyapunovResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_lyapunov_csv(out / "lyapunov.csv", lr.field)
    write_json(components_dict(lr), out / "components.json")
    labels = [fmt_float(c) for c in lr.labeling.critical_float()]
    morse_dot(lr.dec.decomp, out / "morse.dot", labels=[f"c={v}" for v in labels])


def export_boxmap(res: DecomposeResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_dot(res.finest.agg.relation, out / "boxmap.dot")
