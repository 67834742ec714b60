"""On-disk formats: HFF1 complex field files, residual CSV, legacy VTK.

HFF1 layout: 16-byte header — magic b"HFF1", then n1, n2, n3 as little-
endian uint32 — followed by the field as complex doubles (re, im
interleaved), i1 fastest. Only owned vertices are stored, never halos.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "FileFormatError",
    "write_field",
    "read_field",
    "write_residual_csv",
    "read_residual_csv",
    "write_vtk",
]

MAGIC = b"HFF1"
_HDR = struct.Struct("<4sIII")


class FileFormatError(ValueError):
    pass


def write_field(path, field: np.ndarray) -> None:
    if field.ndim != 3:
        raise FileFormatError(f"expected a 3-D field, got shape {field.shape}")
    arr = np.asarray(field, dtype=np.complex128)
    n1, n2, n3 = arr.shape
    with open(path, "wb") as f:
        f.write(_HDR.pack(MAGIC, n1, n2, n3))
        f.write(arr.tobytes(order="F"))


def read_field(path) -> np.ndarray:
    with open(path, "rb") as f:
        hdr = f.read(_HDR.size)
        if len(hdr) != _HDR.size:
            raise FileFormatError(f"{path}: truncated header")
        magic, n1, n2, n3 = _HDR.unpack(hdr)
        if magic != MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}")
        count = n1 * n2 * n3
        data = np.fromfile(f, dtype=np.complex128, count=count)
    if data.size != count:
        raise FileFormatError(
            f"{path}: payload has {data.size} values, header says {count}")
    return data.reshape((n1, n2, n3), order="F")


def write_residual_csv(path, history) -> None:
    """Per-iteration relative residuals, one row per iteration."""
    with open(path, "w") as f:
        f.write("iteration,relres\n")
        for i, r in enumerate(history):
            f.write(f"{i},{r!r}\n")


def read_residual_csv(path):
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "iteration,relres":
            raise FileFormatError(f"{path}: unexpected header {header!r}")
        for line in f:
            _, r = line.strip().split(",")
            out.append(float(r))
    return out


def write_vtk(path, field: np.ndarray, h: float, origin=(0.0, 0.0, 0.0),
              log_error: np.ndarray | None = None) -> None:
    """Legacy structured-points VTK with the field's real and imaginary
    parts as scalars, plus an optional log10-error array."""
    if field.ndim != 3:
        raise FileFormatError(f"expected a 3-D field, got shape {field.shape}")
    n1, n2, n3 = field.shape
    npts = n1 * n2 * n3
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("helmholtz field\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {n1} {n2} {n3}\n")
        f.write(f"ORIGIN {origin[0]:.17g} {origin[1]:.17g} {origin[2]:.17g}\n")
        f.write(f"SPACING {h:.17g} {h:.17g} {h:.17g}\n")
        f.write(f"POINT_DATA {npts}\n")
        _write_scalars(f, "re_u", np.real(field))
        _write_scalars(f, "im_u", np.imag(field))
        if log_error is not None:
            if log_error.shape != field.shape:
                raise FileFormatError("log-error shape does not match field")
            _write_scalars(f, "log10_error", log_error)


def _write_scalars(f, name, values: np.ndarray) -> None:
    f.write(f"SCALARS {name} double 1\n")
    f.write("LOOKUP_TABLE default\n")
    flat = np.asarray(values, dtype=np.float64).ravel(order="F")
    for v in flat:
        f.write(f"{v:.17g}\n")
