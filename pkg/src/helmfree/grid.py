"""Structured vertex-centered 3D grids, block extents and halo fields.

Grids are uniform in all three directions. A grid of n vertices per
direction includes the physical boundary vertices; vertex (1,1,1) sits at
``origin`` and vertex (i1,i2,i3) at ``origin + h*(i1-1, i2-1, i3-1)``.
Indices are 1-based throughout, matching the stencil formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid3",
    "BlockExtent",
    "HaloField",
    "GridError",
    "DimensionTooSmall",
    "NotCoarsenable",
    "make_grid",
    "coarsen",
    "global_to_local",
    "local_to_global",
]


class GridError(ValueError):
    pass


class DimensionTooSmall(GridError):
    pass


class NotCoarsenable(GridError):
    pass


@dataclass(frozen=True)
class Grid3:
    """Global vertex-centered grid descriptor.

    n1, n2, n3 are total vertex counts per direction including the physical
    boundary vertices; h is the (uniform) spacing; level counts coarsenings
    applied (0 = finest).
    """

    n1: int
    n2: int
    n3: int
    h: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    level: int = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def num_vertices(self) -> int:
        return self.n1 * self.n2 * self.n3

    def coord(self, i1: int, i2: int, i3: int) -> tuple[float, float, float]:
        o1, o2, o3 = self.origin
        return (o1 + self.h * (i1 - 1), o2 + self.h * (i2 - 1), o3 + self.h * (i3 - 1))

    def axis_coords(self, dim: int, lo: int, hi: int) -> np.ndarray:
        """Physical coordinates of vertices lo..hi (inclusive) along dim."""
        return self.origin[dim] + self.h * (np.arange(lo, hi + 1) - 1)

    def is_coarsenable(self) -> bool:
        return all(n % 2 == 1 for n in self.shape)


def make_grid(n1: int, n2: int, n3: int, h: float,
              origin: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> Grid3:
    if min(n1, n2, n3) < 3:
        raise DimensionTooSmall(f"grid dims {(n1, n2, n3)} must all be >= 3")
    if not h > 0:
        raise GridError(f"grid spacing must be positive, got {h}")
    return Grid3(n1, n2, n3, float(h), tuple(origin), level=0)


def coarsen(g: Grid3) -> Grid3:
    """Standard vertex-centered coarsening: n -> (n+1)/2, h -> 2h.

    Coarse vertex (i1,i2,i3) coincides with fine vertex (2i-1, 2j-1, 2k-1),
    so the origin is unchanged.
    """
    if not g.is_coarsenable():
        raise NotCoarsenable(f"grid dims {g.shape} must all be odd to coarsen")
    return Grid3((g.n1 + 1) // 2, (g.n2 + 1) // 2, (g.n3 + 1) // 2,
                 2.0 * g.h, g.origin, g.level + 1)


@dataclass(frozen=True)
class BlockExtent:
    """Inclusive global index range owned by one worker, plus halo width."""

    lo1: int
    lo2: int
    lo3: int
    hi1: int
    hi2: int
    hi3: int
    lap: int = 1

    @property
    def nx(self) -> int:
        return self.hi1 - self.lo1 + 1

    @property
    def ny(self) -> int:
        return self.hi2 - self.lo2 + 1

    @property
    def nz(self) -> int:
        return self.hi3 - self.lo3 + 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def lo(self) -> tuple[int, int, int]:
        return (self.lo1, self.lo2, self.lo3)

    @property
    def hi(self) -> tuple[int, int, int]:
        return (self.hi1, self.hi2, self.hi3)

    @property
    def num_owned(self) -> int:
        return self.nx * self.ny * self.nz

    def is_empty(self) -> bool:
        return self.nx <= 0 or self.ny <= 0 or self.nz <= 0

    def contains(self, gidx: tuple[int, int, int]) -> bool:
        g1, g2, g3 = gidx
        return (self.lo1 <= g1 <= self.hi1 and self.lo2 <= g2 <= self.hi2
                and self.lo3 <= g3 <= self.hi3)


def global_to_local(extent: BlockExtent, gidx: tuple[int, int, int]):
    """Map a global vertex index to a 1-based local index, or None if not owned."""
    if not extent.contains(gidx):
        return None
    g1, g2, g3 = gidx
    return (g1 - extent.lo1 + 1, g2 - extent.lo2 + 1, g3 - extent.lo3 + 1)


def local_to_global(extent: BlockExtent, lidx: tuple[int, int, int]) -> tuple[int, int, int]:
    l1, l2, l3 = lidx
    return (extent.lo1 + l1 - 1, extent.lo2 + l2 - 1, extent.lo3 + l3 - 1)


# Face ids: (dim, side) with side -1 = low, +1 = high.
FACES = [(0, -1), (0, +1), (1, -1), (1, +1), (2, -1), (2, +1)]


class HaloField:
    """Complex field on a local block with a one-point ghost layer.

    The data array has shape (nx+2*lap, ny+2*lap, nz+2*lap); the owned
    region is data[lap:-lap, lap:-lap, lap:-lap] and local index (i1,i2,i3)
    in 1..n maps to data[i1, i2, i3] for lap = 1. Solver updates write only
    the owned region; ghost planes are written by halo exchange and the
    physical-boundary ghosts are kept at zero.
    """

    __slots__ = ("extent", "data", "halo_valid")

    def __init__(self, extent: BlockExtent, data: np.ndarray | None = None):
        if extent.lap != 1:
            raise GridError("only lap = 1 is supported by the 7-point kernels")
        self.extent = extent
        shape = (extent.nx + 2, extent.ny + 2, extent.nz + 2)
        if data is None:
            data = np.zeros(shape, dtype=np.complex128)
        elif data.shape != shape:
            raise GridError(f"halo data shape {data.shape} != expected {shape}")
        self.data = data
        self.halo_valid = [False] * 6

    @property
    def owned(self) -> np.ndarray:
        return self.data[1:-1, 1:-1, 1:-1]

    def set_owned(self, values: np.ndarray) -> None:
        if values.shape != self.extent.shape:
            raise GridError(f"owned shape {values.shape} != {self.extent.shape}")
        self.data[1:-1, 1:-1, 1:-1] = values
        self.invalidate_halo()

    def invalidate_halo(self) -> None:
        self.halo_valid = [False] * 6

    def mark_halo_valid(self) -> None:
        self.halo_valid = [True] * 6

    def copy(self) -> "HaloField":
        out = HaloField(self.extent, self.data.copy())
        out.halo_valid = list(self.halo_valid)
        return out

    @staticmethod
    def zeros(extent: BlockExtent) -> "HaloField":
        return HaloField(extent)


def full_extent(grid: Grid3) -> BlockExtent:
    """Extent covering the whole grid (identity partition)."""
    return BlockExtent(1, 1, 1, grid.n1, grid.n2, grid.n3)
