"""Command line front end.

    rds-conley decompose CONFIG [--output-dir DIR] [--seed N]
    rds-conley lyapunov  CONFIG ...
    rds-conley verify    CONFIG ...
    rds-conley export    CONFIG --what {morse,boxes,boxmap,lyapunov,noise,report} ...

``CONFIG`` is an INI file or the name of a built-in preset
(``double-well``, ``random-lorenz``).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import PRESETS, ConfigError, load_config
from .noise import dump_ensemble
from .pipeline import (
    export_boxmap,
    make_executor,
    run_decompose,
    run_lyapunov,
    write_decomposition,
    write_lyapunov,
)
from .verify import verify_all

log = logging.getLogger("rds_conley")

EXPORTS = ("morse", "boxes", "boxmap", "lyapunov", "noise", "report")


def _parser():
    p = argparse.ArgumentParser(prog="rds-conley", description="Random Conley decompositions on box grids.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("decompose", "chain recurrent set, Morse order and attractor-repeller pairs"),
                       ("lyapunov", "complete Lyapunov function and critical values"),
                       ("verify", "trajectory checks and brute-force oracles"),
                       ("export", "write a single artifact")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config", help=f"INI file or preset name ({', '.join(PRESETS)})")
        sp.add_argument("--output-dir", help="directory for artifacts (overrides the config)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("-q", "--quiet", action="store_true", help="only print errors")
        if name == "export":
            sp.add_argument("--what", choices=EXPORTS, required=True)
    return p


def _sweep_summary(res):
    counts = " -> ".join(str(len(p.decomp.components)) for p in res.sweep)
    return f"components across the sweep: {counts}"


def cmd_decompose(cfg, executor=None):
    res = run_decompose(cfg, executor)
    write_decomposition(res, cfg.output_dir)
    print(_sweep_summary(res))
    print(f"records: {len(res.records)}  duality: {'ok' if res.duality.ok else 'MISMATCH'}")
    return 0 if res.duality.ok else 1


def cmd_lyapunov(cfg, executor=None):
    lr = run_lyapunov(cfg, executor)
    write_decomposition(lr.dec, cfg.output_dir)
    write_lyapunov(lr, cfg.output_dir)
    print(_sweep_summary(lr.dec))
    for i, c in enumerate(lr.labeling.critical):
        print(f"  component {i}: c = {float(c):.17g}  signature {lr.labeling.signatures[i]}")
    return 0 if lr.dec.duality.ok else 1


def cmd_verify(cfg, executor=None):
    lr = run_lyapunov(cfg, executor)
    rep = verify_all(lr, cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(rep.to_text(), encoding="utf-8")
    print(rep.to_text(), end="")
    return 0 if rep.ok else 1


def cmd_export(cfg, what, executor=None):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if what == "noise":
        from .pipeline import build_ensemble
        dump_ensemble(build_ensemble(cfg), out / "noise.rdsn")
        return 0
    if what == "report":
        return cmd_verify(cfg, executor)
    if what == "lyapunov":
        lr = run_lyapunov(cfg, executor)
        write_lyapunov(lr, out)
        return 0
    res = run_decompose(cfg, executor)
    if what == "boxmap":
        export_boxmap(res, out)
    else:
        write_decomposition(res, out)
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        executor = make_executor(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "decompose":
            code = cmd_decompose(cfg, executor)
        elif args.command == "lyapunov":
            code = cmd_lyapunov(cfg, executor)
        elif args.command == "verify":
            code = cmd_verify(cfg, executor)
        else:
            code = cmd_export(cfg, args.what, executor)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        mod = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"error in {mod}: {exc}", file=sys.stderr)
        return 1
    finally:
        if executor is not None:
            executor.shutdown()
    log.info("done in %.1f s", time.perf_counter() - t0)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
