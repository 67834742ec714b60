"""Geometric multigrid approximation of the CSLP inverse.

One V- or F-cycle with damped-Jacobi smoothing, matrix-free full-weighting
restriction (27-point, weights 8/4/2/1 over 64) and trilinear prolongation
(eight parity branches), a rediscretized coarse operator on every level
(DCG), and an unpreconditioned full-GMRES coarsest solve. The hierarchy
follows global-grid coarsening: every rank keeps the coarse sub-block whose
vertices map to its fine block via the 2i-1 index rule, so transfer
stencils reach at most one halo plane.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import BlockExtent, Grid3, HaloField, coarsen
from .krylov import SolverConfig, gmres
from .operators import Dirichlet, OperatorSpec, StencilOperator, reduce_to_spec
from .partition import DistContext, Exchanger, PartitionError, derive_coarse_extent

__all__ = [
    "MGConfig",
    "MGLevel",
    "MGHierarchy",
    "MultigridError",
    "build_hierarchy",
    "jacobi_smooth",
    "restrict_fw",
    "prolong_tl",
    "mg_precondition",
    "coarsest_solve",
]


class MultigridError(RuntimeError):
    pass


@dataclass
class MGConfig:
    nu1: int = 1
    nu2: int = 1
    omega: float = 0.8
    cycle: str = "V"                 # V | F
    coarsest_threshold: int = 17     # coarsen while all dims compare true
    threshold_cmp: str = "gt"        # "gt": stop at 17^3; "ge": continue to 9^3
    coarsest_tol: float = 1e-11
    coarsest_maxit: int = 2000


@dataclass
class MGLevel:
    grid: Grid3
    extent: BlockExtent
    spec: OperatorSpec
    op: StencilOperator
    exchanger: Exchanger
    # scratch fields, reused across cycles
    u: HaloField = None
    b: HaloField = None
    r: HaloField = None
    tmp: HaloField = None

    def __post_init__(self):
        self.u = HaloField(self.extent)
        self.b = HaloField(self.extent)
        self.r = HaloField(self.extent)
        self.tmp = HaloField(self.extent)


@dataclass
class MGHierarchy:
    levels: list
    config: MGConfig
    ctx: DistContext
    coarsest_flags: list = dc_field(default_factory=list)

    @property
    def finest(self) -> MGLevel:
        return self.levels[0]

    @property
    def coarsest(self) -> MGLevel:
        return self.levels[-1]


def _keep_coarsening(grid: Grid3, cfg: MGConfig) -> bool:
    th = cfg.coarsest_threshold
    if cfg.threshold_cmp == "ge":
        ok = all(n >= th for n in grid.shape)
    elif cfg.threshold_cmp == "gt":
        ok = all(n > th for n in grid.shape)
    else:
        raise MultigridError(f"threshold_cmp must be 'ge' or 'gt', got {cfg.threshold_cmp!r}")
    return ok and grid.is_coarsenable()


def build_hierarchy(finest_grid: Grid3, finest_extent: BlockExtent,
                    finest_spec: OperatorSpec, config: MGConfig,
                    ctx: DistContext) -> MGHierarchy:
    """Hierarchy from finest to coarsest under the global-coarsening stop rule.

    Coarsening continues while every dimension satisfies the threshold and
    the grid is coarsenable; the first grid violating either is the
    coarsest. A degenerate single-level hierarchy is allowed (the
    preconditioner then reduces to the coarsest solve).
    """
    levels = []
    grid, extent, spec = finest_grid, finest_extent, finest_spec
    while True:
        exch = Exchanger(ctx.topo, ctx.rank, ctx.fabric, timers=ctx.timers)
        _check_level_extents(grid, extent, ctx, len(levels))
        phase = "smoother"
        op = StencilOperator(spec, grid, extent, exchanger=exch,
                             timers=ctx.timers, phase=phase)
        levels.append(MGLevel(grid, extent, spec, op, exch))
        if not _keep_coarsening(grid, config):
            break
        cgrid = coarsen(grid)
        cextent = derive_coarse_extent(extent)
        spec = reduce_to_spec(spec, extent, cextent)
        grid, extent = cgrid, cextent
    # mark the coarsest operator's timing phase
    levels[-1].op.phase = "coarsest"
    return MGHierarchy(levels=levels, config=config, ctx=ctx)


def _check_level_extents(grid, extent, ctx, level_idx):
    if extent.is_empty():
        raise PartitionError(
            f"level-incompatible: rank {ctx.rank} owns no vertices on level "
            f"{level_idx} (grid {grid.shape}, topology {ctx.topo.dims})")


def jacobi_smooth(op: StencilOperator, u: HaloField, b: HaloField,
                  omega: float, sweeps: int, scratch: HaloField | None = None,
                  assume_zero: bool = False) -> HaloField:
    """Damped Jacobi: u <- u + omega * D^-1 (b - M u), one halo exchange per
    sweep. With assume_zero the first sweep skips the operator application
    (M 0 = 0 exactly, so the result is bit-identical to the generic path)."""
    if scratch is None:
        scratch = HaloField(u.extent)
    first = assume_zero
    for _ in range(sweeps):
        if first:
            u.owned[...] = omega * (b.owned / op.diag)
            u.invalidate_halo()
            first = False
            continue
        op.apply(u, out=scratch)
        resid = b.owned - scratch.owned
        u.owned[...] += omega * (resid / op.diag)
        u.invalidate_halo()
    return u


# 1D full-weighting weights indexed by offset -1, 0, +1
_W1 = {-1: 1.0, 0: 2.0, 1: 1.0}


def _restrict_slices(flo: int, clo: int, chi: int):
    """Fine D-array start/stop (step 2) of the coarse centers' fine images."""
    s = 2 * clo - flo          # local D-index of fine image of coarse lo
    e = 2 * chi - flo
    return s, e


def restrict_fw(r_fine: HaloField, fine_level: MGLevel, coarse_level: MGLevel) -> HaloField:
    """Full-weighting restriction onto the coarse block.

    Out-of-domain taps at the physical boundary are dropped and the
    remaining weights renormalized (factor 4/3 per boundary direction),
    preserving constants. For Dirichlet problems the coarse physical
    boundary planes are zeroed instead: boundary vertices are eliminated
    unknowns and carry no residual.
    """
    t0 = time.perf_counter()
    fine_level.op.ensure_halo(r_fine)
    fine_level.exchanger.zero_physical_ghosts(r_fine)
    fe, ce = fine_level.extent, coarse_level.extent
    out = HaloField(ce)
    acc = out.owned
    F = r_fine.data
    s1, e1 = _restrict_slices(fe.lo1, ce.lo1, ce.hi1)
    s2, e2 = _restrict_slices(fe.lo2, ce.lo2, ce.hi2)
    s3, e3 = _restrict_slices(fe.lo3, ce.lo3, ce.hi3)
    for o1 in (-1, 0, 1):
        for o2 in (-1, 0, 1):
            for o3 in (-1, 0, 1):
                w = _W1[o1] * _W1[o2] * _W1[o3]
                acc += w * F[s1 + o1:e1 + o1 + 1:2,
                             s2 + o2:e2 + o2 + 1:2,
                             s3 + o3:e3 + o3 + 1:2]
    acc /= 64.0
    _fix_restriction_boundary(out, coarse_level)
    out.invalidate_halo()
    if fine_level.op.timers is not None:
        fine_level.op.timers.add("transfer", time.perf_counter() - t0)
    return out


def _fix_restriction_boundary(coarse_field: HaloField, coarse_level: MGLevel) -> None:
    ce, cg = coarse_level.extent, coarse_level.grid
    dirichlet = isinstance(coarse_level.spec.bc, Dirichlet)
    owned = coarse_field.owned
    renorm = 64.0 / 48.0
    for dim in range(3):
        lo_on = ce.lo[dim] == 1
        hi_on = ce.hi[dim] == (cg.n1, cg.n2, cg.n3)[dim]
        for on, idx in ((lo_on, 0), (hi_on, owned.shape[dim] - 1)):
            if not on:
                continue
            sl = [slice(None)] * 3
            sl[dim] = idx
            if dirichlet:
                owned[tuple(sl)] = 0.0
            else:
                owned[tuple(sl)] *= renorm


def _parity_slices(flo: int, nf: int, clo: int, want_odd: bool):
    """Slice of fine owned D-indices with the requested global parity, and
    the D-index of the first matching coarse neighbor."""
    lo_odd = flo % 2 == 1
    f0 = 1 if (lo_odd == want_odd) else 2
    if f0 > nf:
        return None, None, 0
    count = (nf - f0) // 2 + 1
    g0 = flo + f0 - 1
    ic0 = (g0 + 1) // 2 if want_odd else g0 // 2
    c0 = ic0 - clo + 1
    return slice(f0, f0 + 2 * count - 1 + 1, 2), c0, count


def prolong_tl(e_coarse: HaloField, coarse_level: MGLevel, fine_level: MGLevel,
               out: HaloField | None = None) -> HaloField:
    """Trilinear prolongation onto the fine block.

    Coincident fine vertices copy the coarse value; face-, edge- and
    cell-centered fine vertices average 2, 4 and 8 coarse neighbors.
    Requires a valid coarse halo (the averages read one plane into the
    neighbor block).
    """
    t0 = time.perf_counter()
    coarse_level.op.ensure_halo(e_coarse)
    fe, ce = fine_level.extent, coarse_level.extent
    if out is None:
        out = HaloField(fe)
    E = e_coarse.data
    v = out.owned
    dims = []
    for d in range(3):
        flo, nf, clo = (fe.lo1, fe.nx, ce.lo1) if d == 0 else \
                       (fe.lo2, fe.ny, ce.lo2) if d == 1 else \
                       (fe.lo3, fe.nz, ce.lo3)
        per = {}
        for want_odd in (True, False):
            fsl, c0, count = _parity_slices(flo, nf, clo, want_odd)
            per[want_odd] = (fsl, c0, count)
        dims.append(per)
    for p1 in (True, False):
        f1, c1, n1 = dims[0][p1]
        if f1 is None:
            continue
        for p2 in (True, False):
            f2, c2, n2 = dims[1][p2]
            if f2 is None:
                continue
            for p3 in (True, False):
                f3, c3, n3 = dims[2][p3]
                if f3 is None:
                    continue
                offs1 = (0,) if p1 else (0, 1)
                offs2 = (0,) if p2 else (0, 1)
                offs3 = (0,) if p3 else (0, 1)
                acc = None
                for d1 in offs1:
                    for d2 in offs2:
                        for d3 in offs3:
                            blk = E[c1 + d1:c1 + d1 + n1,
                                    c2 + d2:c2 + d2 + n2,
                                    c3 + d3:c3 + d3 + n3]
                            acc = blk.copy() if acc is None else acc + blk
                nsum = len(offs1) * len(offs2) * len(offs3)
                sl = (slice(f1.start - 1, f1.stop - 1, 2),
                      slice(f2.start - 1, f2.stop - 1, 2),
                      slice(f3.start - 1, f3.stop - 1, 2))
                if nsum > 1:
                    acc = acc / nsum
                v[sl] = acc
    out.invalidate_halo()
    if coarse_level.op.timers is not None:
        coarse_level.op.timers.add("transfer", time.perf_counter() - t0)
    return out


def coarsest_solve(hier: MGHierarchy, b: HaloField) -> HaloField:
    """Unpreconditioned full GMRES on the coarsest level to coarsest_tol.

    Max-iterations is a soft failure: the best iterate is still used and the
    event recorded in hier.coarsest_flags.
    """
    level = hier.coarsest
    cfg = SolverConfig(method="gmres", tol=hier.config.coarsest_tol,
                       maxit=hier.config.coarsest_maxit)

    scratch = level.tmp

    def apply_m(x: np.ndarray) -> np.ndarray:
        scratch.owned[...] = x
        scratch.invalidate_halo()
        return level.op.apply(scratch).owned.copy()

    x, rep = gmres(apply_m, None, b.owned.copy(), hier.ctx, cfg)
    if not rep.converged:
        hier.coarsest_flags.append(
            {"iterations": rep.iterations, "relres": rep.final_relres})
    out = HaloField(level.extent)
    out.owned[...] = x
    return out


def _v_cycle(hier: MGHierarchy, li: int) -> None:
    """One V-cycle on level li: solves M u = b with zero initial guess,
    in-place on the level scratch fields."""
    cfg = hier.config
    level = hier.levels[li]
    if li == len(hier.levels) - 1:
        sol = coarsest_solve(hier, level.b)
        level.u.owned[...] = sol.owned
        level.u.invalidate_halo()
        return
    nxt = hier.levels[li + 1]
    _presmooth_from_zero(level, cfg)
    _residual(level)
    nxt.b = restrict_fw(level.r, level, nxt)
    _v_cycle(hier, li + 1)
    _correct(level, nxt)
    jacobi_smooth(level.op, level.u, level.b, cfg.omega, cfg.nu2,
                  scratch=level.tmp)


def _f_cycle(hier: MGHierarchy, li: int) -> None:
    """F-cycle: cascade the right-hand side straight to the coarsest grid
    (no smoothing on the descent), solve there, then on each level of the
    way up interpolate the coarse solution as the initial guess and run one
    V-cycle to the coarsest before continuing upward."""
    level = hier.levels[li]
    if li == len(hier.levels) - 1:
        sol = coarsest_solve(hier, level.b)
        level.u.owned[...] = sol.owned
        level.u.invalidate_halo()
        return
    nxt = hier.levels[li + 1]
    nxt.b = restrict_fw(level.b, level, nxt)
    _f_cycle(hier, li + 1)
    # interpolated coarse solution is this level's initial guess
    prolong_tl(nxt.u, nxt, level, out=level.u)
    # one V-cycle from that guess: u += V(b - C u), with V the zero-guess
    # V-cycle operator (the composition stays linear in b)
    _residual(level)
    guess = level.u.owned.copy()
    level.b.owned[...] = level.r.owned
    level.b.invalidate_halo()
    _v_cycle(hier, li)
    level.u.owned[...] += guess
    level.u.invalidate_halo()


def _presmooth_from_zero(level: MGLevel, cfg: MGConfig) -> None:
    """Pre-smooth starting from the exact zero guess (fresh on every visit)."""
    if cfg.nu1 == 0:
        level.u.owned[...] = 0.0
        level.u.invalidate_halo()
        return
    jacobi_smooth(level.op, level.u, level.b, cfg.omega, cfg.nu1,
                  scratch=level.tmp, assume_zero=True)


def _residual(level: MGLevel) -> None:
    level.op.apply(level.u, out=level.tmp)
    level.r.owned[...] = level.b.owned - level.tmp.owned
    level.r.invalidate_halo()


def _correct(level: MGLevel, nxt: MGLevel) -> None:
    corr = prolong_tl(nxt.u, nxt, level, out=level.tmp)
    level.u.owned[...] += corr.owned
    level.u.invalidate_halo()


def mg_precondition(hier: MGHierarchy, r: HaloField) -> HaloField:
    """z ~= M^-1 r: exactly one V- or F-cycle with zero initial guess.

    Zero initial guess makes the cycle a fixed linear operator, as required
    for it to serve as a (non-flexible) preconditioner.
    """
    t0 = time.perf_counter()
    timers = hier.ctx.timers
    leaf_phases = ("smoother", "transfer", "halo", "dot", "coarsest")
    before = sum(timers.totals.get(p, 0.0) for p in leaf_phases)
    top = hier.finest
    top.b.owned[...] = r.owned
    top.b.invalidate_halo()
    if hier.config.cycle.upper() == "V":
        _v_cycle(hier, 0)
    elif hier.config.cycle.upper() == "F":
        _f_cycle(hier, 0)
    else:
        raise MultigridError(f"unknown cycle type {hier.config.cycle!r}")
    out = HaloField(top.extent)
    out.owned[...] = top.u.owned
    elapsed = time.perf_counter() - t0
    after = sum(timers.totals.get(p, 0.0) for p in leaf_phases)
    timers.add("precond", max(elapsed - (after - before), 0.0))
    return out
