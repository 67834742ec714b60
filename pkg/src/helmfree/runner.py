"""Run orchestration: build the problem, launch workers, collect results.

The same worker body runs under three fabrics: inline (one worker), thread
(in-process SPMD), and socket (one OS process per worker). Rank 0 gathers
the solution, computes error norms when an analytical solution exists, and
writes the report, residual CSV, field file, and optional VTK.
"""

from __future__ import annotations

import multiprocessing
import os
import tempfile
import threading
import time

import numpy as np

from .config import ConfigError, RunConfig
from .grid import HaloField
from .io import write_field, write_residual_csv, write_vtk
from .krylov import SolverConfig, run_solver
from .multigrid import MGConfig, build_hierarchy, mg_precondition
from .operators import Dirichlet, OperatorSpec, StencilOperator
from .partition import (DistContext, Exchanger, NullFabric, PhaseTimers,
                        SocketFabric, ThreadHub, Topology, partition_grid)
from .problems import (ProblemError, build_problem, closed_off_problem,
                       error_norms, fill_dirichlet_boundary,
                       read_velocity_grid, salt_problem, wedge_problem)
from .reporting import RunReport

__all__ = ["run_solve", "problem_from_config", "RunError"]


class RunError(RuntimeError):
    pass


def problem_from_config(cfg: RunConfig):
    p = cfg.problem
    name = p["name"]
    if name == "ClosedOff":
        return closed_off_problem(p["n"], p["k"])
    if name == "Wedge":
        return wedge_problem(shape=tuple(p["shape"]),
                             domain=_domain_pairs(p["domain"]),
                             frequency=p["frequency"],
                             velocities=tuple(p["velocities"]),
                             interfaces=_pairs(p["interfaces"], "interfaces"),
                             source_at=tuple(p["source"]))
    if name == "Salt":
        if not p["velocity_file"]:
            raise ConfigError(
                "Salt requires problem.velocity_file (generate one with "
                "gen-salt-surrogate)")
        medium = read_velocity_grid(p["velocity_file"], tuple(p["shape"]),
                                    frequency=p["frequency"])
        return salt_problem(medium.velocities, shape=tuple(p["shape"]),
                            domain=_domain_pairs(p["domain"]),
                            frequency=p["frequency"],
                            source_at=tuple(p["source"]))
    raise ConfigError(f"unknown problem name {name!r}")


def _domain_pairs(values):
    if len(values) != 6:
        raise ConfigError(f"problem.domain needs 6 numbers, got {len(values)}")
    return ((values[0], values[1]), (values[2], values[3]),
            (values[4], values[5]))


def _pairs(values, what):
    if len(values) % 2 != 0:
        raise ConfigError(f"problem.{what} needs an even count of numbers")
    return tuple((values[i], values[i + 1]) for i in range(0, len(values), 2))


def _solver_config(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(method=s["method"], tol=s["tol"], maxit=s["maxit"],
                        s=s["s"], rng_seed=s["rng_seed"],
                        restart=s["restart"] or None)


def _mg_config(cfg: RunConfig) -> MGConfig:
    p = cfg.preconditioner
    return MGConfig(nu1=p["nu1"], nu2=p["nu2"], omega=p["omega"],
                    cycle=p["cycle"],
                    coarsest_threshold=p["coarsest_threshold"],
                    threshold_cmp=p["threshold_cmp"],
                    coarsest_tol=p["coarsest_tol"],
                    coarsest_maxit=p["coarsest_maxit"])


def worker_body(cfg: RunConfig, ctx: DistContext):
    """SPMD worker: identical control flow on every rank.

    Returns (report, full_field) on rank 0 and (None, None) elsewhere.
    """
    pspec = problem_from_config(cfg)
    grid = pspec.grid
    extents = partition_grid(grid, ctx.topo)
    extent = extents[ctx.rank]
    ctx.grid, ctx.extent = grid, extent

    op_spec, rhs = build_problem(pspec, extent)
    exch = Exchanger(ctx.topo, ctx.rank, ctx.fabric, timers=ctx.timers)
    A = StencilOperator(op_spec, grid, extent, exchanger=exch,
                        timers=ctx.timers, phase="matvec")
    pre = cfg.preconditioner
    cslp = OperatorSpec(kind="cslp", beta1=pre["beta1"], beta2=pre["beta2"],
                        bc=pspec.bc, k_field=op_spec.k_field)
    hier = build_hierarchy(grid, extent, cslp, _mg_config(cfg), ctx)

    xbuf, rbuf = HaloField(extent), HaloField(extent)

    def apply_a(x):
        xbuf.owned[...] = x
        xbuf.invalidate_halo()
        return A.apply(xbuf).owned.copy()

    def apply_minv(x):
        rbuf.owned[...] = x
        rbuf.invalidate_halo()
        return mg_precondition(hier, rbuf).owned.copy()

    t0 = time.perf_counter()
    x, conv = run_solver(apply_a, apply_minv, rhs.owned.copy(), ctx,
                         _solver_config(cfg))
    conv.wall_time = time.perf_counter() - t0
    conv.phase_times = dict(ctx.timers.totals)

    if isinstance(pspec.bc, Dirichlet):
        fill_dirichlet_boundary(x, grid, extent, pspec.bc.value)
    pieces = ctx.fabric.gather((extent.lo, extent.hi, x))
    if ctx.rank != 0:
        return None, None
    full = np.empty(grid.shape, dtype=np.complex128)
    for lo, hi, block in pieces:
        full[lo[0] - 1:hi[0], lo[1] - 1:hi[1], lo[2] - 1:hi[2]] = block

    report = RunReport(convergence=conv, config=cfg.to_dict(),
                       workers=ctx.topo.np,
                       coarsest_flags=list(hier.coarsest_flags))
    if pspec.has_analytical() and conv.converged:
        report.error_max, report.error_l2, _ = error_norms(full, pspec)
    return report, full


def _write_outputs(cfg: RunConfig, report: RunReport, full: np.ndarray):
    out = cfg.output
    outdir = out["dir"]
    if not outdir:
        return
    os.makedirs(outdir, exist_ok=True)
    report.save(os.path.join(outdir, "report.json"))
    write_residual_csv(os.path.join(outdir, "residual.csv"),
                       report.convergence.residual_history)
    pspec = problem_from_config(cfg)
    if out["write_field"]:
        write_field(os.path.join(outdir, "field.hff"), full)
    if out["vtk"]:
        log_err = None
        if pspec.has_analytical():
            _, _, log_err = error_norms(full, pspec)
        write_vtk(os.path.join(outdir, "field.vtk"), full, pspec.grid.h,
                  origin=pspec.grid.origin, log_error=log_err)


def run_solve(cfg: RunConfig, write_outputs: bool = True) -> RunReport:
    """Build and solve per config; returns the rank-0 report."""
    topo = Topology(cfg.topology["npx0"], cfg.topology["npy0"],
                    cfg.topology["npz0"])
    nworkers = topo.np
    if nworkers == 1:
        ctx = DistContext(topo, 0, NullFabric(), timers=PhaseTimers())
        report, full = worker_body(cfg, ctx)
        report.fabric = "inline"
    elif cfg.topology["fabric"] == "thread":
        report, full = _run_threads(cfg, topo)
        report.fabric = "thread"
    else:
        report, full = _run_sockets(cfg, topo)
        report.fabric = "socket"
    if write_outputs:
        _write_outputs(cfg, report, full)
    return report


def _run_threads(cfg: RunConfig, topo: Topology):
    hub = ThreadHub(topo.np)
    results = [None] * topo.np
    errors = [None] * topo.np

    def target(rank):
        try:
            ctx = DistContext(topo, rank, hub.fabric(rank),
                              timers=PhaseTimers())
            results[rank] = worker_body(cfg, ctx)
        except BaseException as exc:   # surfaced below with its rank
            errors[rank] = exc
            hub.barrier.abort()

    threads = [threading.Thread(target=target, args=(r,), name=f"worker-{r}")
               for r in range(topo.np)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for rank, exc in enumerate(errors):
        if exc is not None:
            raise RunError(f"worker {rank} failed: {exc}") from exc
    return results[0]


def _socket_entry(cfg_dict, rank, dims, rendezvous, port_base, result_path):
    cfg = RunConfig.from_dict(cfg_dict)
    topo = Topology(*dims)
    fabric = SocketFabric(rank, topo.np, rendezvous,
                          port_base=port_base or None)
    try:
        ctx = DistContext(topo, rank, fabric, timers=PhaseTimers())
        report, full = worker_body(cfg, ctx)
        if rank == 0:
            report.fabric = "socket"
            report.save(result_path)
            write_field(result_path + ".field", full)
    finally:
        fabric.close()


def _run_sockets(cfg: RunConfig, topo: Topology):
    mp = multiprocessing.get_context("spawn")
    with tempfile.TemporaryDirectory(prefix="helmfree-") as rendezvous:
        result_path = os.path.join(rendezvous, "rank0-report.json")
        procs = [mp.Process(target=_socket_entry,
                            args=(cfg.to_dict(), rank, topo.dims, rendezvous,
                                  cfg.topology["port_base"], result_path))
                 for rank in range(topo.np)]
        for p in procs:
            p.start()
        for p in procs:
            p.join()
        bad = [p.exitcode for p in procs if p.exitcode != 0]
        if bad:
            raise RunError(f"socket workers exited with codes {bad}")
        report = RunReport.load(result_path)
        from .io import read_field
        full = read_field(result_path + ".field")
    return report, full
