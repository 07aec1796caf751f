"""Run configuration: INI files with ``[section]`` and ``key = value`` lines.

Errors carry the file, line, section and key they refer to.  Lengths in
the sweep may be written in box widths, e.g. ``eps = 8h, 4h, 2h``, where
``h`` is the largest box side of the grid.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .boxmap import parse_mode
from .cocycle import LORENZ_DEFAULTS, SYSTEM_KINDS, custom_system, double_well, random_lorenz
from .grid import BoxGrid
from .noise import KINDS, steps_for

PRESETS = ("double-well", "random-lorenz")

_SECTIONS = {
    "system": None,  # kind-dependent keys, checked separately
    "params": None,
    "grid": {"lo", "hi", "divisions", "exterior"},
    "noise": {"kind", "samples", "dt", "horizon", "master_seed", "channels", "ou_rate", "ou_scale"},
    "sweep": {"eps", "t", "points_per_box", "aggregation"},
    "attractors": {"point_seeds", "pullback_depth", "per_sample_duality"},
    "lyapunov": {"t_max", "dt_scan"},
    "verify": {"n_points", "t_checks", "delta_dec", "shift_points", "oracle_graphs",
               "oracle_max_nodes", "duality_graphs"},
    "run": {"threads", "output_dir"},
}
_SYSTEM_KEYS = {
    "double_well": {"kind", "sigma_n"},
    "random_lorenz": {"kind"} | set(LORENZ_DEFAULTS),
    "custom": {"kind", "drift", "diffusion", "variables", "stationary"},
}


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None, section=None, key=None):
        self.path, self.line, self.section, self.key = path, line, section, key
        where = []
        if path is not None:
            where.append(str(path) + (f":{line}" if line else ""))
        if section is not None:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        super().__init__((": ".join(where) + ": " if where else "") + message)


@dataclass
class RunConfig:
    system_kind: str
    system_params: dict
    custom: dict
    lo: tuple
    hi: tuple
    divisions: tuple
    exterior: bool
    noise_kind: str
    samples: int
    dt: float
    horizon: float
    master_seed: int
    channels: int
    ou_rate: float
    ou_scale: float
    eps: tuple
    T: tuple
    points_per_box: int
    aggregation: str
    point_seeds: int = 64
    pullback_depth: float = 0.0
    per_sample_duality: bool = True
    t_max: float = 10.0
    dt_scan: float = 0.0
    n_points: int = 1000
    t_checks: tuple = (1.0,)
    delta_dec: float = 1e-9
    shift_points: int = 1000
    oracle_graphs: int = 100
    oracle_max_nodes: int = 200
    duality_graphs: int = 50
    threads: int = 0
    output_dir: str = "rds-out"
    source: str = ""

    def grid(self) -> BoxGrid:
        return BoxGrid(self.lo, self.hi, self.divisions, exterior=self.exterior)

    def system(self):
        if self.system_kind == "double_well":
            return double_well(self.system_params.get("sigma_n", 0.1), (self.lo[0], self.hi[0]))
        if self.system_kind == "random_lorenz":
            if len(set(self.lo)) != 1 or len(set(self.hi)) != 1:
                raise ConfigError("the Lorenz window must be a cube", section="grid")
            return random_lorenz((self.lo[0], self.hi[0]), **self.system_params)
        c = self.custom
        return custom_system(c["drift"], c.get("diffusion"), self.lo, self.hi, self.system_params,
                             c.get("variables"), c.get("stationary", ()))

    def sweep(self):
        """Sweep points ``(eps, T)`` from coarse to fine."""
        return list(zip(self.eps, self.T))

    def with_overrides(self, seed=None, output_dir=None):
        out = self
        if seed is not None:
            out = replace(out, master_seed=int(seed))
        if output_dir is not None:
            out = replace(out, output_dir=str(output_dir))
        return out

    def echo(self):
        """Plain dict of the settings, for reports."""
        return {
            "system": {"kind": self.system_kind, **self.system_params,
                       **{k: list(v) if isinstance(v, tuple) else v for k, v in self.custom.items()}},
            "grid": {"lo": list(self.lo), "hi": list(self.hi), "divisions": list(self.divisions),
                     "exterior": self.exterior},
            "noise": {"kind": self.noise_kind, "samples": self.samples, "dt": self.dt,
                      "horizon": self.horizon, "master_seed": self.master_seed, "channels": self.channels},
            "sweep": {"eps": list(self.eps), "T": list(self.T), "points_per_box": self.points_per_box,
                      "aggregation": self.aggregation},
            "attractors": {"point_seeds": self.point_seeds, "pullback_depth": self.pullback_depth},
            "lyapunov": {"t_max": self.t_max, "dt_scan": self.dt_scan},
        }


# ------------------------------------------------------------------ parsing

def _key_lines(text):
    """Map ``(section, key)`` to its 1-based line number."""
    out = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = no
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = no
    return out


class _Reader:
    def __init__(self, parser, lines, path):
        self.p, self.lines, self.path = parser, lines, path

    def err(self, msg, section, key=None):
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        return ConfigError(msg, self.path, line, section, key)

    def has(self, section, key):
        return self.p.has_option(section, key)

    def raw(self, section, key, default=None):
        if not self.has(section, key):
            if default is None:
                raise self.err("missing required key", section, key)
            return default
        return self.p.get(section, key).strip()

    def num(self, section, key, default=None, cast=float, check=None, what="value"):
        text = self.raw(section, key, None if default is None else str(default))
        try:
            v = cast(text)
        except ValueError:
            raise self.err(f"expected a number, got {text!r}", section, key) from None
        if cast is float and not math.isfinite(v):
            raise self.err("value must be finite", section, key)
        if check is not None and not check(v):
            raise self.err(f"{what} out of range: {text}", section, key)
        return v

    def flag(self, section, key, default):
        if not self.has(section, key):
            return default
        try:
            return self.p.getboolean(section, key)
        except ValueError:
            raise self.err("expected a boolean", section, key) from None

    def floats(self, section, key, default=None):
        text = self.raw(section, key, default)
        try:
            return tuple(float(t) for t in _split(text))
        except ValueError:
            raise self.err(f"expected a comma separated list of numbers, got {text!r}", section, key) from None


def _split(text, sep=","):
    return [t.strip() for t in text.split(sep) if t.strip()]


def _lengths(r, section, key, h):
    """Numbers with an optional ``h`` suffix meaning box widths."""
    out = []
    for tok in _split(r.raw(section, key)):
        try:
            out.append(float(tok[:-1] or 1) * h if tok.endswith("h") else float(tok))
        except ValueError:
            raise r.err(f"bad length {tok!r}", section, key) from None
    return tuple(out)


def _multiple(x, dt):
    try:
        steps_for(x, dt)
        return True
    except ValueError:
        return False


def parse_config(text, path=None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], path, line) from None
    lines = _key_lines(text)
    r = _Reader(parser, lines, path)

    for sec in parser.sections():
        if sec not in _SECTIONS:
            raise r.err("unknown section", sec)
    kind = r.raw("system", "kind")
    if kind not in SYSTEM_KINDS:
        raise r.err(f"unknown system kind {kind!r}", "system", "kind")
    allowed = _SYSTEM_KEYS[kind]
    for sec, keys in list(_SECTIONS.items()) + [("system", allowed)]:
        if keys is None or not parser.has_section(sec):
            continue
        for k in parser.options(sec):
            if k not in keys:
                raise r.err("unknown key", sec, k)

    # grid
    lo, hi = r.floats("grid", "lo"), r.floats("grid", "hi")
    div_text = r.raw("grid", "divisions")
    try:
        divisions = tuple(int(t) for t in _split(div_text))
    except ValueError:
        raise r.err(f"divisions must be integers, got {div_text!r}", "grid", "divisions") from None
    dim = {"double_well": 1, "random_lorenz": 3}.get(kind)
    if kind == "custom":
        drift = [d for d in _split(r.raw("system", "drift"), ";")]
        dim = len(drift)
    lo, hi, divisions = (_broadcast(r, v, dim, "grid", k) for v, k in
                         ((lo, "lo"), (hi, "hi"), (divisions, "divisions")))
    if any(b <= a for a, b in zip(lo, hi)):
        raise r.err("every side needs hi > lo", "grid", "hi")
    if any(d < 1 for d in divisions):
        raise r.err("divisions must be positive", "grid", "divisions")
    exterior = r.flag("grid", "exterior", False)
    h = max((b - a) / d for a, b, d in zip(lo, hi, divisions))

    # system
    params, custom = {}, {}
    if kind == "double_well":
        params["sigma_n"] = r.num("system", "sigma_n", 0.1, check=lambda v: v >= 0)
    elif kind == "random_lorenz":
        for k in LORENZ_DEFAULTS:
            if r.has("system", k):
                params[k] = r.num("system", k)
    else:
        custom["drift"] = tuple(drift)
        if r.has("system", "diffusion"):
            custom["diffusion"] = tuple(_split(r.raw("system", "diffusion"), ";"))
        if r.has("system", "variables"):
            custom["variables"] = tuple(_split(r.raw("system", "variables")))
        if r.has("system", "stationary"):
            try:
                custom["stationary"] = tuple(tuple(float(c) for c in _split(p))
                                             for p in _split(r.raw("system", "stationary"), ";"))
            except ValueError:
                raise r.err("stationary points must be numbers", "system", "stationary") from None
        if parser.has_section("params"):
            for k in parser.options("params"):
                params[k] = r.num("params", k)

    # noise
    nkind = r.raw("noise", "kind")
    if nkind not in KINDS:
        raise r.err(f"unknown noise kind {nkind!r}", "noise", "kind")
    samples = r.num("noise", "samples", cast=int, check=lambda v: v >= 1, what="sample count")
    dt = r.num("noise", "dt", check=lambda v: v > 0, what="dt")
    horizon = r.num("noise", "horizon", check=lambda v: v > 0, what="horizon")
    seed = r.num("noise", "master_seed", cast=int, check=lambda v: v >= 0, what="seed")
    default_ch = 3 if kind == "random_lorenz" else 1
    channels = r.num("noise", "channels", default_ch, cast=int, check=lambda v: v >= 1)
    ou_rate = r.num("noise", "ou_rate", 1.0, check=lambda v: v > 0)
    ou_scale = r.num("noise", "ou_scale", 1.0, check=lambda v: v >= 0)

    # sweep
    if not r.has("sweep", "eps") or not _split(r.raw("sweep", "eps", "")):
        raise r.err("the eps list must not be empty", "sweep", "eps")
    if not r.has("sweep", "t") or not _split(r.raw("sweep", "t", "")):
        raise r.err("the T list must not be empty", "sweep", "t")
    eps = _lengths(r, "sweep", "eps", h)
    T = r.floats("sweep", "t")
    if len(eps) != len(T):
        if len(eps) == 1:
            eps = eps * len(T)
        elif len(T) == 1:
            T = T * len(eps)
        else:
            raise r.err("eps and T lists must have equal length (or one entry)", "sweep", "t")
    if any(e < 0 for e in eps):
        raise r.err("eps must be non-negative", "sweep", "eps")
    if len(set(eps)) > 1 and any(b >= a for a, b in zip(eps, eps[1:])):
        raise r.err("eps must be strictly descending", "sweep", "eps")
    if len(set(T)) > 1 and any(b <= a for a, b in zip(T, T[1:])):
        raise r.err("T must be strictly ascending", "sweep", "t")
    if len(set(zip(eps, T))) != len(eps):
        raise r.err("repeated sweep point", "sweep", "eps")
    for t in T:
        if t <= 0 or not _multiple(t, dt):
            raise r.err(f"T={t} is not a positive multiple of dt", "sweep", "t")
    ppb = r.num("sweep", "points_per_box", 8, cast=int, check=lambda v: v >= 1)
    agg = r.raw("sweep", "aggregation", "all_samples")
    try:
        parse_mode(agg)
    except ValueError as exc:
        raise r.err(str(exc), "sweep", "aggregation") from None

    # attractors / lyapunov / verify / run
    K = r.num("attractors", "point_seeds", 64, cast=int, check=lambda v: v >= 0)
    depth = r.num("attractors", "pullback_depth", 0.0, check=lambda v: v >= 0)
    psd = r.flag("attractors", "per_sample_duality", True)
    t_max = r.num("lyapunov", "t_max", 10.0, check=lambda v: v > 0)
    dt_scan = r.num("lyapunov", "dt_scan", dt, check=lambda v: v > 0)
    if not _multiple(dt_scan, dt):
        raise r.err("dt_scan must be a multiple of dt", "lyapunov", "dt_scan")
    if not _multiple(t_max, dt_scan):
        raise r.err("t_max must be a multiple of dt_scan", "lyapunov", "t_max")
    if not _multiple(T[-1], dt_scan):
        raise r.err("the finest T must be a multiple of dt_scan", "lyapunov", "dt_scan")
    n_points = r.num("verify", "n_points", 1000, cast=int, check=lambda v: v >= 1)
    if r.has("verify", "t_checks") and not _split(r.raw("verify", "t_checks")):
        raise r.err("t_checks must not be empty", "verify", "t_checks")
    t_checks = r.floats("verify", "t_checks", str(T[-1]))
    for t in t_checks:
        if t <= 0 or not _multiple(t, dt_scan):
            raise r.err(f"t_check {t} is not a positive multiple of dt_scan", "verify", "t_checks")
    delta_dec = r.num("verify", "delta_dec", 1e-9, check=lambda v: v >= 0)
    shift_points = r.num("verify", "shift_points", 1000, cast=int, check=lambda v: v >= 0)
    og = r.num("verify", "oracle_graphs", 100, cast=int, check=lambda v: v >= 0)
    om = r.num("verify", "oracle_max_nodes", 200, cast=int, check=lambda v: v >= 2)
    dg = r.num("verify", "duality_graphs", 50, cast=int, check=lambda v: v >= 0)
    threads = r.num("run", "threads", 0, cast=int, check=lambda v: v >= 0)
    out_dir = r.raw("run", "output_dir", "rds-out")

    need = max(t_checks) + t_max
    if need > horizon + 1e-9:
        raise r.err(f"horizon {horizon} is shorter than t_max + max(t_checks) = {need}", "noise", "horizon")
    if T[-1] > horizon + 1e-9 or depth > horizon + 1e-9:
        raise r.err("horizon is shorter than the chain time or pullback depth", "noise", "horizon")

    return RunConfig(
        kind, params, custom, lo, hi, divisions, exterior, nkind, samples, dt, horizon, seed,
        channels, ou_rate, ou_scale, eps, T, ppb, agg, K, depth, psd, t_max, dt_scan, n_points,
        t_checks, delta_dec, shift_points, og, om, dg, threads, out_dir, str(path or ""),
    )


def _broadcast(r, values, dim, section, key):
    if len(values) == 1:
        return tuple(values) * dim
    if len(values) != dim:
        raise r.err(f"expected 1 or {dim} entries, got {len(values)}", section, key)
    return tuple(values)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        return load_preset(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_config(text, p)


def preset_text(name) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("rds_conley").joinpath("presets", f"{name}.ini").read_text(encoding="utf-8")


def load_preset(name) -> RunConfig:
    return parse_config(preset_text(name), f"{name}.ini")
