"""Command-line front end.

Subcommands:
  solve <config>                 run one solve, write report/CSV/field
  validate <config>              closed-off error study over a grid ladder
  bench <config> --workers ...   scaling sweep over worker layouts
  gen-salt-surrogate <path> <dims>   synthetic velocity model

`--set section.key=value` overrides config keys on any subcommand.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, parse_config
from .problems import gen_salt_surrogate
from .reporting import compute_scaling, write_scaling_csv

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="helmfree",
        description="Matrix-free multigrid-preconditioned Krylov solvers "
                    "for the 3D heterogeneous Helmholtz equation")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="path to a config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")

    p = sub.add_parser("solve", help="run one solve")
    add_common(p)

    p = sub.add_parser("validate",
                       help="closed-off error study across a grid ladder")
    add_common(p)
    p.add_argument("--grids", default="17,33,65",
                   help="comma-separated cube sizes (default 17,33,65)")

    p = sub.add_parser("bench", help="scaling sweep over worker layouts")
    add_common(p)
    p.add_argument("--workers", required=True,
                   help="comma-separated layouts, each N or AxBxC "
                        "(e.g. 1,2x1x1,2x2x2)")

    p = sub.add_parser("gen-salt-surrogate",
                       help="write a synthetic salt velocity model")
    p.add_argument("path", help="output file (raw little-endian float32)")
    p.add_argument("dims", help="grid dims as N1xN2xN3 (e.g. 641x641x193)")
    return ap


def _load_config(args):
    try:
        with open(args.config) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    return parse_config(text, overrides=args.overrides)


def _cmd_solve(args) -> int:
    from .runner import run_solve
    cfg = _load_config(args)
    report = run_solve(cfg)
    conv = report.convergence
    status = "converged" if conv.converged else "NOT CONVERGED"
    print(f"{cfg.problem['name']} {cfg.solver['method']}: {status} | "
          f"matvecs={conv.matvec_count} iterations={conv.iterations} "
          f"relres={conv.final_relres:.3e} wall={conv.wall_time:.2f}s")
    if report.error_max is not None:
        print(f"error vs analytical: max={report.error_max:.6e} "
              f"l2={report.error_l2:.6e}")
    print(f"outputs in {cfg.output['dir']}/")
    return 0 if conv.converged else 1


def _cmd_validate(args) -> int:
    from .runner import run_solve
    cfg = _load_config(args)
    if cfg.problem["name"] != "ClosedOff":
        print("validate requires problem.name = ClosedOff "
              "(the only problem with an analytical solution)", file=sys.stderr)
        return 2
    sizes = [int(s) for s in args.grids.split(",")]
    prev = None
    ok = True
    print(f"{'n':>5} {'h':>12} {'max error':>14} {'l2 error':>14} {'ratio':>8}")
    for n in sizes:
        run_cfg = parse_config("", overrides=[])
        d = cfg.to_dict()
        d["problem"]["n"] = n
        d["output"]["dir"] = os.path.join(cfg.output["dir"], f"n{n}")
        run_cfg = run_cfg.from_dict(d)
        report = run_solve(run_cfg)
        if not report.convergence.converged or report.error_max is None:
            print(f"{n:>5}  solver did not converge", file=sys.stderr)
            ok = False
            prev = None
            continue
        ratio = (prev / report.error_max) if prev else float("nan")
        print(f"{n:>5} {1.0 / (n - 1):>12.6g} {report.error_max:>14.6e} "
              f"{report.error_l2:>14.6e} {ratio:>8.3f}")
        prev = report.error_max
    return 0 if ok else 1


def _parse_layout(item: str):
    item = item.strip().lower()
    if "x" in item:
        parts = tuple(int(p) for p in item.split("x"))
        if len(parts) != 3:
            raise ConfigError(f"layout {item!r} must be AxBxC")
        return parts
    n = int(item)
    # near-cubic balanced factorization, preferring splits along x then y
    best = (n, 1, 1)
    for a in range(1, n + 1):
        if n % a:
            continue
        for b in range(1, n // a + 1):
            if (n // a) % b:
                continue
            c = n // (a * b)
            if max(a, b, c) < max(best):
                best = (a, b, c)
    return best


def _cmd_bench(args) -> int:
    from .runner import run_solve
    cfg = _load_config(args)
    layouts = [_parse_layout(s) for s in args.workers.split(",")]
    reports = []
    for (a, b, c) in layouts:
        d = cfg.to_dict()
        d["topology"]["npx0"], d["topology"]["npy0"], d["topology"]["npz0"] = a, b, c
        d["output"]["dir"] = os.path.join(cfg.output["dir"], f"np{a}x{b}x{c}")
        from .config import RunConfig
        report = run_solve(RunConfig.from_dict(d))
        conv = report.convergence
        print(f"{a}x{b}x{c}: matvecs={conv.matvec_count} "
              f"wall={conv.wall_time:.2f}s converged={conv.converged}")
        reports.append(report)
    rows = compute_scaling(reports)
    os.makedirs(cfg.output["dir"], exist_ok=True)
    csv_path = os.path.join(cfg.output["dir"], "scaling.csv")
    write_scaling_csv(csv_path, rows)
    print(f"{'np':>4} {'wall':>10} {'speedup':>9} {'efficiency':>11}")
    for row in rows:
        print(f"{row['np']:>4} {row['wall_time']:>10.2f} "
              f"{row['speedup']:>9.2f} {row['efficiency']:>11.2f}")
    print(f"scaling table written to {csv_path}")
    return 0 if all(r.convergence.converged for r in reports) else 1


def _cmd_gen_salt(args) -> int:
    seps = "x" if "x" in args.dims else ","
    dims = tuple(int(p) for p in args.dims.split(seps))
    if len(dims) != 3 or min(dims) < 3:
        print(f"dims {args.dims!r} must be N1xN2xN3 with each >= 3",
              file=sys.stderr)
        return 2
    gen_salt_surrogate(args.path, dims)
    size = os.path.getsize(args.path)
    print(f"wrote {args.path}: dims {dims[0]}x{dims[1]}x{dims[2]}, "
          f"{size} bytes")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"solve": _cmd_solve, "validate": _cmd_validate,
                "bench": _cmd_bench, "gen-salt-surrogate": _cmd_gen_salt}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
