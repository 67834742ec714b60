"""Model problems: closed-off cube, layered wedge, salt-style velocity grids.

Each problem bundles a grid, a medium (wavenumber field), a boundary
condition, and a source. Construction is deterministic and performed
redundantly on every worker from the same description; velocity files are
memory-mapped so each worker touches only its own block.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import BlockExtent, Grid3, HaloField, full_extent, make_grid
from .operators import BoundaryCondition, Dirichlet, OperatorSpec, Sommerfeld

__all__ = [
    "ProblemError",
    "ConstantK",
    "LayeredMedium",
    "VelocityGridMedium",
    "ProblemSpec",
    "closed_off_analytical",
    "closed_off_problem",
    "wedge_problem",
    "salt_problem",
    "build_problem",
    "build_rhs",
    "zero_dirichlet_boundary",
    "fill_dirichlet_boundary",
    "error_norms",
    "read_velocity_grid",
    "write_velocity_grid",
    "gen_salt_surrogate",
    "KH_LIMIT",
]

# kh <= 0.625 keeps ten or more grid points per wavelength
KH_LIMIT = 0.625

SALT_VMIN = 1500.0
SALT_VMAX = 4482.0


class ProblemError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Media


@dataclass(frozen=True)
class ConstantK:
    """Fixed wavenumber, no velocity model behind it."""

    k: float

    def k_field(self, grid: Grid3, extent: BlockExtent) -> np.ndarray:
        if self.k <= 0:
            raise ProblemError(f"wavenumber must be positive, got {self.k}")
        return np.full(extent.shape, float(self.k))


@dataclass(frozen=True)
class LayeredMedium:
    """Velocity layers separated by planar interfaces dipping along x1.

    interfaces[i] = (z_left, z_right) is the depth of the i-th interface at
    x1 = x1min and x1 = x1max; in between it varies linearly. velocities has
    one more entry than interfaces, ordered top (largest z) to bottom.
    """

    frequency: float
    velocities: tuple = (2000.0, 1500.0, 3000.0)
    interfaces: tuple = ((-200.0, -400.0), (-500.0, -700.0))
    x1_span: tuple = (0.0, 600.0)

    def velocity(self, x1: np.ndarray, x3: np.ndarray) -> np.ndarray:
        if len(self.velocities) != len(self.interfaces) + 1:
            raise ProblemError("need one velocity per layer "
                               "(len(velocities) == len(interfaces) + 1)")
        a, b = self.x1_span
        t = (x1 - a) / (b - a) if b != a else np.zeros_like(x1)
        c = np.full(np.broadcast(x1, x3).shape, self.velocities[0])
        for depth_pair, v_below in zip(self.interfaces, self.velocities[1:]):
            z_if = depth_pair[0] + t * (depth_pair[1] - depth_pair[0])
            c = np.where(x3 < z_if, v_below, c)
        return c

    def k_field(self, grid: Grid3, extent: BlockExtent) -> np.ndarray:
        x1 = grid.axis_coords(0, extent.lo1, extent.hi1)[:, None, None]
        x3 = grid.axis_coords(2, extent.lo3, extent.hi3)[None, None, :]
        c = self.velocity(x1, x3)
        c = np.broadcast_to(c, extent.shape)
        _check_velocity(c)
        return 2.0 * np.pi * self.frequency / c


@dataclass(frozen=True)
class VelocityGridMedium:
    """Velocity sampled on the full grid (raw file or in-memory array)."""

    frequency: float
    velocities: object = None          # np.ndarray or np.memmap, (n1,n2,n3)

    def k_field(self, grid: Grid3, extent: BlockExtent) -> np.ndarray:
        v = self.velocities
        if v.shape != grid.shape:
            raise ProblemError(
                f"velocity dims {v.shape} do not match grid {grid.shape}")
        e = extent
        block = np.asarray(v[e.lo1 - 1:e.hi1, e.lo2 - 1:e.hi2, e.lo3 - 1:e.hi3],
                           dtype=np.float64)
        _check_velocity(block)
        return 2.0 * np.pi * self.frequency / block


def _check_velocity(c: np.ndarray) -> None:
    cmin = float(np.min(c))
    if cmin <= 0.0:
        raise ProblemError(f"non-positive velocity {cmin} in medium")


# ---------------------------------------------------------------------------
# Problem descriptions


@dataclass
class ProblemSpec:
    """Grid + medium + boundary condition + source for one model problem."""

    name: str                              # ClosedOff | Wedge | Salt
    grid: Grid3
    medium: object
    bc: BoundaryCondition
    source: dict                          # {"type": "dirac"|"closed_off", ...}
    domain: tuple = None                  # ((x1a,x1b),(x2a,x2b),(x3a,x3b))
    analytical = None                     # callback, ClosedOff only

    def has_analytical(self) -> bool:
        return self.analytical is not None


def closed_off_analytical(x1, x2, x3):
    """sin(pi x1) sin(2pi x2) sin(4pi x3) + 1 on the unit cube."""
    return (np.sin(np.pi * x1) * np.sin(2.0 * np.pi * x2)
            * np.sin(4.0 * np.pi * x3) + 1.0)


def _closed_off_source(x1, x2, x3, k):
    return ((21.0 * np.pi**2 - k**2) * np.sin(np.pi * x1)
            * np.sin(2.0 * np.pi * x2) * np.sin(4.0 * np.pi * x3) - k**2)


def closed_off_problem(n: int, k: float) -> ProblemSpec:
    """Unit cube with Dirichlet u = 1 and a known analytical solution."""
    grid = make_grid(n, n, n, 1.0 / (n - 1))
    spec = ProblemSpec(name="ClosedOff", grid=grid, medium=ConstantK(k),
                       bc=Dirichlet(1.0), source={"type": "closed_off"},
                       domain=((0.0, 1.0),) * 3)
    spec.analytical = closed_off_analytical
    return spec


def wedge_problem(shape=(61, 61, 101), domain=((0.0, 600.0), (0.0, 600.0), (-1000.0, 0.0)),
                  frequency: float = 20.0, velocities=(2000.0, 1500.0, 3000.0),
                  interfaces=((-200.0, -400.0), (-500.0, -700.0)),
                  source_at=(300.0, 300.0, 0.0)) -> ProblemSpec:
    """Layered medium with dipping interfaces, Sommerfeld faces, point source.

    Interface depths were chosen to resemble the usual wedge benchmark and
    are fully configurable; they are not part of any hard validation number.
    """
    grid = _grid_for_domain(shape, domain)
    medium = LayeredMedium(frequency=frequency, velocities=tuple(velocities),
                           interfaces=tuple(tuple(p) for p in interfaces),
                           x1_span=domain[0])
    return ProblemSpec(name="Wedge", grid=grid, medium=medium, bc=Sommerfeld(),
                       source={"type": "dirac", "at": tuple(source_at)},
                       domain=domain)


def salt_problem(velocities, shape=(641, 641, 193),
                 domain=((0.0, 12800.0), (0.0, 12800.0), (0.0, 3840.0)),
                 frequency: float = 2.0,
                 source_at=(3200.0, 3200.0, 0.0)) -> ProblemSpec:
    """Velocity-grid medium over a seismic-scale box, Sommerfeld faces."""
    grid = _grid_for_domain(shape, domain)
    vmin, vmax = float(np.min(velocities)), float(np.max(velocities))
    if vmin < SALT_VMIN or vmax > SALT_VMAX:
        warnings.warn(
            f"velocity range [{vmin:g}, {vmax:g}] outside the expected "
            f"[{SALT_VMIN:g}, {SALT_VMAX:g}] m/s band", stacklevel=2)
    medium = VelocityGridMedium(frequency=frequency, velocities=velocities)
    return ProblemSpec(name="Salt", grid=grid, medium=medium, bc=Sommerfeld(),
                       source={"type": "dirac", "at": tuple(source_at)},
                       domain=domain)


def _grid_for_domain(shape, domain) -> Grid3:
    hs = [(b - a) / (n - 1) for (a, b), n in zip(domain, shape)]
    href = hs[0]
    for h in hs[1:]:
        if abs(h - href) > 1e-12 * max(abs(href), abs(h)):
            raise ProblemError(
                f"domain/grid pairs imply non-uniform spacing {hs}; "
                "choose extents and vertex counts giving one h")
    origin = tuple(a for a, _ in domain)
    return make_grid(*shape, h=href, origin=origin)


# ---------------------------------------------------------------------------
# Assembly


def build_problem(pspec: ProblemSpec, extent: BlockExtent) -> tuple:
    """(OperatorSpec, rhs) for this worker's block.

    The operator spec is the plain Helmholtz operator; the CSLP spec is
    derived from it by the caller (same k_field, shifted diagonal). Warns
    when max(k)h exceeds the ten-points-per-wavelength bound.
    """
    grid = pspec.grid
    k_field = pspec.medium.k_field(grid, extent)
    kh = float(np.max(k_field)) * grid.h
    if kh > KH_LIMIT * (1.0 + 1e-12):
        warnings.warn(f"kh = {kh:.4g} exceeds {KH_LIMIT} "
                      "(fewer than ten points per wavelength)", stacklevel=2)
    op_spec = OperatorSpec(kind="helmholtz", beta1=1.0, beta2=0.0,
                           bc=pspec.bc, k_field=k_field)
    rhs = build_rhs(pspec, extent, k_field)
    return op_spec, rhs


def build_rhs(pspec: ProblemSpec, extent: BlockExtent,
              k_field: np.ndarray | None = None) -> HaloField:
    grid = pspec.grid
    kind = pspec.source["type"]
    rhs = HaloField(extent)
    if kind == "dirac":
        gidx = _nearest_vertex(grid, pspec.source["at"])
        _place_dirac(rhs, extent, gidx, grid.h)
    elif kind == "closed_off":
        if k_field is None:
            k_field = pspec.medium.k_field(grid, extent)
        _closed_off_rhs(rhs, grid, extent, pspec.bc, k_field)
    else:
        raise ProblemError(f"unknown source type {kind!r}")
    return rhs


def _nearest_vertex(grid: Grid3, at) -> tuple:
    idx = []
    for dim, x in enumerate(at):
        i = int(round((x - grid.origin[dim]) / grid.h)) + 1
        i = min(max(i, 1), grid.shape[dim])
        idx.append(i)
    return tuple(idx)


def _place_dirac(rhs: HaloField, extent: BlockExtent, gidx, h: float) -> None:
    if extent.contains(gidx):
        l1 = gidx[0] - extent.lo1
        l2 = gidx[1] - extent.lo2
        l3 = gidx[2] - extent.lo3
        rhs.owned[l1, l2, l3] = 1.0 / h**3
    rhs.invalidate_halo()


def _closed_off_rhs(rhs: HaloField, grid: Grid3, extent: BlockExtent,
                    bc: Dirichlet, k_field: np.ndarray) -> None:
    if not isinstance(bc, Dirichlet):
        raise ProblemError("closed-off source assumes Dirichlet boundaries")
    x1 = grid.axis_coords(0, extent.lo1, extent.hi1)[:, None, None]
    x2 = grid.axis_coords(1, extent.lo2, extent.hi2)[None, :, None]
    x3 = grid.axis_coords(2, extent.lo3, extent.hi3)[None, None, :]
    b = rhs.owned
    b[...] = _closed_off_source(x1, x2, x3, k_field)
    g = bc.value
    inv_h2 = 1.0 / grid.h**2
    # boundary elimination: interior vertices next to a boundary vertex pick
    # up g/h^2 per eliminated neighbor; working vectors carry zero at the
    # boundary planes themselves (values are reattached at output time)
    for dim in range(3):
        n = grid.shape[dim]
        lo, hi = extent.lo[dim], extent.hi[dim]
        if lo <= 2 <= hi:
            sl = [slice(None)] * 3
            sl[dim] = 2 - lo
            b[tuple(sl)] += g * inv_h2
        if lo <= n - 1 <= hi:
            sl = [slice(None)] * 3
            sl[dim] = (n - 1) - lo
            b[tuple(sl)] += g * inv_h2
    zero_dirichlet_boundary(b, grid, extent)
    rhs.invalidate_halo()


def zero_dirichlet_boundary(owned: np.ndarray, grid: Grid3,
                            extent: BlockExtent) -> None:
    """Zero the physical-boundary planes of a working vector's owned block."""
    for dim in range(3):
        if extent.lo[dim] == 1:
            sl = [slice(None)] * 3
            sl[dim] = 0
            owned[tuple(sl)] = 0.0
        if extent.hi[dim] == grid.shape[dim]:
            sl = [slice(None)] * 3
            sl[dim] = extent.shape[dim] - 1
            owned[tuple(sl)] = 0.0


def fill_dirichlet_boundary(owned: np.ndarray, grid: Grid3,
                            extent: BlockExtent, value) -> None:
    """Reattach the eliminated boundary value to a solution block."""
    for dim in range(3):
        if extent.lo[dim] == 1:
            sl = [slice(None)] * 3
            sl[dim] = 0
            owned[tuple(sl)] = value
        if extent.hi[dim] == grid.shape[dim]:
            sl = [slice(None)] * 3
            sl[dim] = extent.shape[dim] - 1
            owned[tuple(sl)] = value


# ---------------------------------------------------------------------------
# Error norms (sequential, rank-0 gathered fields)


def error_norms(u_num: np.ndarray, pspec: ProblemSpec):
    """(max_abs, l2, log10 |error| field) against the analytical solution.

    Expects the full gathered field of shape grid.shape. The discrete L2
    norm carries the volume weight h^3.
    """
    if not pspec.has_analytical():
        raise ProblemError(f"{pspec.name} has no analytical solution")
    grid = pspec.grid
    if u_num.shape != grid.shape:
        raise ProblemError(f"field shape {u_num.shape} != grid {grid.shape}")
    e = full_extent(grid)
    x1 = grid.axis_coords(0, 1, grid.n1)[:, None, None]
    x2 = grid.axis_coords(1, 1, grid.n2)[None, :, None]
    x3 = grid.axis_coords(2, 1, grid.n3)[None, None, :]
    exact = pspec.analytical(x1, x2, x3)
    err = np.abs(u_num - exact)
    max_abs = float(err.max())
    l2 = float(np.sqrt(np.sum(err**2) * grid.h**3))
    with np.errstate(divide="ignore"):
        log_err = np.log10(err, out=np.full(err.shape, -16.0),
                           where=err > 1e-16)
    return max_abs, l2, log_err


# ---------------------------------------------------------------------------
# Raw velocity files (little-endian float32, i1 fastest)


def read_velocity_grid(path, dims, frequency: float = 2.0) -> VelocityGridMedium:
    """Memory-mapped reader; workers slicing their block read only those pages."""
    n1, n2, n3 = dims
    expected = n1 * n2 * n3 * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise ProblemError(
            f"velocity file {path}: {actual} bytes, expected {expected} "
            f"for dims {dims}")
    v = np.memmap(path, dtype="<f4", mode="r", shape=(n1, n2, n3), order="F")
    return VelocityGridMedium(frequency=frequency, velocities=v)


def write_velocity_grid(path, velocities: np.ndarray) -> None:
    arr = np.asarray(velocities, dtype="<f4")
    with open(path, "wb") as f:
        f.write(arr.tobytes(order="F"))


def gen_salt_surrogate(path, dims) -> np.ndarray:
    """Synthetic stand-in for a salt velocity model.

    Depth-graded sediment background plus an ellipsoidal high-velocity body,
    clamped to the [1500, 4482] m/s band. Deterministic: same dims, same
    bytes.
    """
    n1, n2, n3 = dims
    z = np.linspace(0.0, 1.0, n3)[None, None, :]       # 0 = surface
    x = np.linspace(0.0, 1.0, n1)[:, None, None]
    y = np.linspace(0.0, 1.0, n2)[None, :, None]
    c = 1500.0 + 2200.0 * z                            # gradient background
    body = (((x - 0.5) / 0.28) ** 2 + ((y - 0.5) / 0.22) ** 2
            + ((z - 0.45) / 0.30) ** 2) <= 1.0
    c = np.where(body, SALT_VMAX, c)
    c = np.clip(np.broadcast_to(c, (n1, n2, n3)), SALT_VMIN, SALT_VMAX)
    c = np.ascontiguousarray(c, dtype=np.float32)
    write_velocity_grid(path, c)
    return c
