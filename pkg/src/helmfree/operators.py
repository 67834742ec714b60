"""Matrix-free application of the discrete Helmholtz and CSLP operators.

Both operators share the 7-point stencil: interior center coefficient
(6 - s*k^2*h^2)/h^2 with s = beta1 - i*beta2 (Helmholtz: s = 1), all six
neighbor coefficients -1/h^2.

Boundary handling
-----------------
Sommerfeld: the ghost point outside a boundary vertex is eliminated via
u_ghost = u_inward + 2*h*i*k*u_boundary, which folds into the boundary row
as ap -= 2*i*k/h plus a doubled inward-neighbor coefficient. At edges and
corners the 1D elimination is applied once per adjacent physical face.

Dirichlet: boundary vertices are eliminated unknowns. Rows at boundary
vertices are identities (v = u there) and the right-hand side carries the
lifting g/h^2 per adjacent boundary vertex; solves keep boundary entries of
the working vectors at zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .grid import BlockExtent, Grid3, HaloField, full_extent
from .partition import Exchanger

__all__ = [
    "Dirichlet",
    "Sommerfeld",
    "OperatorSpec",
    "StencilCoeffs",
    "StencilOperator",
    "OperatorError",
    "StaleHaloError",
    "ZeroDiagonalError",
    "interior_coeffs",
    "apply_operator",
    "reduce_to_spec",
]


class OperatorError(ValueError):
    pass


class StaleHaloError(OperatorError):
    """Interior halo face read before exchange."""


class ZeroDiagonalError(OperatorError):
    """k^2 h^2 = 6 degeneracy: the stencil diagonal vanishes."""


@dataclass(frozen=True)
class Dirichlet:
    value: complex = 1.0


class Sommerfeld:
    def __eq__(self, other):
        return isinstance(other, Sommerfeld)

    def __hash__(self):
        return hash("sommerfeld")

    def __repr__(self):
        return "Sommerfeld()"


BoundaryCondition = Union[Dirichlet, Sommerfeld]


@dataclass(frozen=True)
class OperatorSpec:
    """Which operator to apply on a given level.

    kind "helmholtz" behaves as CSLP with (beta1, beta2) = (1, 0); k_field
    is the per-vertex wavenumber on this level's local block (owned shape).
    """

    kind: str                      # "helmholtz" | "cslp"
    beta1: float
    beta2: float
    bc: BoundaryCondition
    k_field: np.ndarray

    def __post_init__(self):
        if self.kind not in ("helmholtz", "cslp"):
            raise OperatorError(f"unknown operator kind {self.kind!r}")

    @property
    def shift(self) -> complex:
        if self.kind == "helmholtz":
            return 1.0 + 0.0j
        return self.beta1 - 1j * self.beta2


@dataclass(frozen=True)
class StencilCoeffs:
    """Interior 7-point multipliers (units 1/length^2)."""

    ap: complex
    aw: complex
    ae: complex
    as_: complex
    an: complex
    ad: complex
    au: complex


def interior_coeffs(spec: OperatorSpec, h: float, k: float) -> StencilCoeffs:
    """Interior coefficients at a vertex with wavenumber k."""
    off = -1.0 / h**2
    ap = (6.0 - spec.shift * k**2 * h**2) / h**2
    return StencilCoeffs(ap, off, off, off, off, off, off)


class StencilOperator:
    """Precomputed matrix-free operator for one (spec, grid, extent) triple.

    apply() reads the six halo faces of the input field; callers must have
    exchanged halos (interior faces) beforehand. Physical-boundary ghost
    planes are zeroed here so the vectorized expression never picks up
    stale out-of-domain values.
    """

    def __init__(self, spec: OperatorSpec, grid: Grid3, extent: BlockExtent,
                 exchanger: Exchanger | None = None, timers=None,
                 phase: str = "matvec"):
        if spec.k_field.shape != extent.shape:
            raise OperatorError(
                f"k_field shape {spec.k_field.shape} != block shape {extent.shape}")
        self.spec = spec
        self.grid = grid
        self.extent = extent
        self.exchanger = exchanger
        self.timers = timers
        self.phase = phase
        self.h = grid.h
        self.inv_h2 = 1.0 / grid.h**2
        self._physical = self._physical_faces()
        self.ap, self.diag = self._build_diagonal()
        self.apply_count = 0

    def _physical_faces(self):
        e, g = self.extent, self.grid
        return {
            (0, -1): e.lo1 == 1, (0, +1): e.hi1 == g.n1,
            (1, -1): e.lo2 == 1, (1, +1): e.hi2 == g.n2,
            (2, -1): e.lo3 == 1, (2, +1): e.hi3 == g.n3,
        }

    def _boundary_slice(self, face):
        dim, side = face
        sl = [slice(None)] * 3
        sl[dim] = 0 if side < 0 else self.extent.shape[dim] - 1
        return tuple(sl)

    def _build_diagonal(self):
        spec, h = self.spec, self.h
        k2 = self.spec.k_field.astype(np.float64) ** 2
        ap = (6.0 - spec.shift * k2 * h**2) / h**2
        ap = ap.astype(np.complex128)
        if isinstance(spec.bc, Sommerfeld):
            for face, on_boundary in self._physical.items():
                if on_boundary:
                    sl = self._boundary_slice(face)
                    ap[sl] -= 2j * spec.k_field[sl] / h
            diag = ap
        else:
            diag = ap.copy()
            for face, on_boundary in self._physical.items():
                if on_boundary:
                    diag[self._boundary_slice(face)] = 1.0
        # relative to the 6/h^2 stencil scale so near-cancellation is caught
        if np.any(np.abs(diag) * h**2 < 6.0e-12):
            raise ZeroDiagonalError(
                "stencil diagonal vanishes (k^2 h^2 = 6); choose a different grid")
        return ap, diag

    def ensure_halo(self, u: HaloField) -> None:
        """Exchange halos if an exchanger is attached, else demand validity."""
        interior = [i for i, face in enumerate(
            [(0, -1), (0, +1), (1, -1), (1, +1), (2, -1), (2, +1)])
            if not self._physical[face]]
        if all(u.halo_valid[i] for i in interior):
            return
        if self.exchanger is None:
            if interior:
                raise StaleHaloError(
                    "halo faces are stale and no exchanger is attached")
            u.mark_halo_valid()
            return
        self.exchanger.exchange(u)

    def apply(self, u: HaloField, out: HaloField | None = None) -> HaloField:
        """v = A u (or M u) on the owned region."""
        if u.extent.shape != self.extent.shape:
            raise OperatorError(
                f"field shape {u.extent.shape} != operator block {self.extent.shape}")
        self.ensure_halo(u)
        t0 = time.perf_counter()
        if out is None:
            out = HaloField(self.extent)
        self._zero_physical_ghosts(u)
        D = u.data
        C = D[1:-1, 1:-1, 1:-1]
        v = out.owned
        np.multiply(self.ap, C, out=v)
        nb = (D[:-2, 1:-1, 1:-1] + D[2:, 1:-1, 1:-1]) \
            + (D[1:-1, :-2, 1:-1] + D[1:-1, 2:, 1:-1]) \
            + (D[1:-1, 1:-1, :-2] + D[1:-1, 1:-1, 2:])
        v -= self.inv_h2 * nb
        self._apply_boundary_rows(D, v)
        out.invalidate_halo()
        self.apply_count += 1
        if self.timers is not None:
            self.timers.add(self.phase, time.perf_counter() - t0)
        return out

    def _zero_physical_ghosts(self, u: HaloField) -> None:
        D = u.data
        for (dim, side), on_boundary in self._physical.items():
            if on_boundary:
                sl = [slice(None)] * 3
                sl[dim] = 0 if side < 0 else D.shape[dim] - 1
                D[tuple(sl)] = 0.0

    def _apply_boundary_rows(self, D: np.ndarray, v: np.ndarray) -> None:
        dirichlet = isinstance(self.spec.bc, Dirichlet)
        for (dim, side), on_boundary in self._physical.items():
            if not on_boundary:
                continue
            sl = [slice(1, -1)] * 3
            vsl = [slice(None)] * 3
            if side < 0:
                vsl[dim] = 0
                sl[dim] = 1
                inward = list(sl)
                inward[dim] = 2
            else:
                vsl[dim] = v.shape[dim] - 1
                sl[dim] = D.shape[dim] - 2
                inward = list(sl)
                inward[dim] = D.shape[dim] - 3
            if dirichlet:
                v[tuple(vsl)] = D[tuple(sl)]
            else:
                # doubled inward neighbor from the ghost elimination
                v[tuple(vsl)] -= self.inv_h2 * D[tuple(inward)]


def apply_operator(spec: OperatorSpec, u: HaloField, grid: Grid3,
                   exchanger: Exchanger | None = None) -> HaloField:
    """One-shot v = A_h u (or M_h u); see StencilOperator for the fast path."""
    extent = u.extent
    op = StencilOperator(spec, grid, extent, exchanger=exchanger)
    return op.apply(u)


def reduce_to_spec(spec: OperatorSpec, fine_extent: BlockExtent,
                   coarse_extent: BlockExtent) -> OperatorSpec:
    """Rediscretized coarse operator spec (DCG): same beta and bc, k
    subsampled at coarse vertices via the 2i-1 index map."""
    s1 = 2 * coarse_extent.lo1 - 1 - fine_extent.lo1  # 0-based fine offset
    s2 = 2 * coarse_extent.lo2 - 1 - fine_extent.lo2
    s3 = 2 * coarse_extent.lo3 - 1 - fine_extent.lo3
    k_coarse = spec.k_field[s1::2, s2::2, s3::2][
        :coarse_extent.nx, :coarse_extent.ny, :coarse_extent.nz]
    return replace(spec, k_field=np.ascontiguousarray(k_coarse))


def sequential_operator(spec: OperatorSpec, grid: Grid3) -> StencilOperator:
    """Whole-grid operator (identity partition), handy for tests and oracles."""
    return StencilOperator(spec, grid, full_extent(grid))
