"""Voxel-grid containers plus the transform, interpolation and differential helpers
shared by every other module.

Array layout is fixed: volumes are stored as ``(nz, ny, nx)`` C-ordered arrays so
that x is the fastest-varying index, images as ``(nv, nu)``.  Points handed to the
interpolators are given as ``(x, y, z)`` in voxel units.

DFT convention: forward transform with ``exp(-2j*pi*k.r)``, unnormalised; the
inverse carries ``1/N``.  This is numpy's convention, so ``np.fft`` is used
directly.  Frequencies are in cycles per voxel in wrap-around order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid3:
    nx: int
    ny: int
    nz: int
    pitch: float = 1.0  # nm per voxel

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {n!r}")
        if not (self.pitch > 0 and np.isfinite(self.pitch)):
            raise ValueError(f"pitch must be positive, got {self.pitch!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)``."""
        return (self.nz, self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def center(self) -> np.ndarray:
        """Voxel index of the rotation / phantom centre, ``(x, y, z)``."""
        return np.array([self.nx // 2, self.ny // 2, self.nz // 2], dtype=float)

    @classmethod
    def cube(cls, n: int, pitch: float = 1.0) -> "Grid3":
        return cls(n, n, n, pitch)

    def frequencies(self, angular: bool = False):
        """Broadcastable ``(kz, ky, kx)`` frequency arrays in cycles (or radians) per voxel."""
        scale = 2 * np.pi if angular else 1.0
        kz = np.fft.fftfreq(self.nz)[:, None, None] * scale
        ky = np.fft.fftfreq(self.ny)[None, :, None] * scale
        kx = np.fft.fftfreq(self.nx)[None, None, :] * scale
        return kz, ky, kx

    def coordinates(self):
        """Broadcastable ``(z, y, x)`` voxel offsets from :attr:`center`."""
        cx, cy, cz = self.center
        z = (np.arange(self.nz) - cz)[:, None, None]
        y = (np.arange(self.ny) - cy)[None, :, None]
        x = (np.arange(self.nx) - cx)[None, None, :]
        return z, y, x


def _finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")
    return values


@dataclass(frozen=True, eq=False)
class ScalarField3:
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", _finite(v, "ScalarField3"))

    @classmethod
    def zeros(cls, grid: Grid3) -> "ScalarField3":
        return cls(grid, np.zeros(grid.shape))


@dataclass(frozen=True, eq=False)
class VectorField3:
    """Three-component field; ``data`` has shape ``(3, nz, ny, nx)`` ordered (x, y, z)."""

    grid: Grid3
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.shape != (3,) + self.grid.shape:
            raise ValueError(f"data shape {d.shape} does not match (3,)+{self.grid.shape}")
        object.__setattr__(self, "data", _finite(d, "VectorField3"))

    @classmethod
    def zeros(cls, grid: Grid3) -> "VectorField3":
        return cls(grid, np.zeros((3,) + grid.shape))

    @classmethod
    def from_components(cls, ax: ScalarField3, ay: ScalarField3, az: ScalarField3) -> "VectorField3":
        if not (ax.grid == ay.grid == az.grid):
            raise ValueError("components must share one Grid3")
        return cls(ax.grid, np.stack([ax.values, ay.values, az.values]))

    @property
    def ax(self) -> ScalarField3:
        return ScalarField3(self.grid, self.data[0])

    @property
    def ay(self) -> ScalarField3:
        return ScalarField3(self.grid, self.data[1])

    @property
    def az(self) -> ScalarField3:
        return ScalarField3(self.grid, self.data[2])

    def component(self, i: int) -> ScalarField3:
        return ScalarField3(self.grid, self.data[i])

    def magnitude_max(self) -> float:
        return float(np.sqrt((self.data ** 2).sum(axis=0)).max())


@dataclass(frozen=True, eq=False)
class Image2:
    """2D image; ``values`` has shape ``(nv, nu)`` (u fastest)."""

    values: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or min(v.shape) < 1:
            raise ValueError(f"Image2 needs a non-empty 2D array, got shape {v.shape}")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        object.__setattr__(self, "values", _finite(v, "Image2"))

    @property
    def nu(self) -> int:
        return self.values.shape[1]

    @property
    def nv(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------- interpolation

HALF_VOXEL = 0.5


def trilinear(values: np.ndarray, x, y, z, fill: float | None = None) -> np.ndarray:
    """Vectorised trilinear interpolation of a ``(nz, ny, nx)`` array at voxel coordinates.

    Points within half a voxel outside the lattice are clamped onto the boundary.
    Anything further out raises, unless ``fill`` is given, in which case those
    points evaluate to ``fill`` and the lattice is treated as zero-padded.
    """
    nz, ny, nx = values.shape
    x, y, z = (np.asarray(c, dtype=float) for c in (x, y, z))
    if fill is None:
        out = ((x < -HALF_VOXEL) | (x > nx - 1 + HALF_VOXEL)
               | (y < -HALF_VOXEL) | (y > ny - 1 + HALF_VOXEL)
               | (z < -HALF_VOXEL) | (z > nz - 1 + HALF_VOXEL))
        if np.any(out):
            raise ValueError("interpolation point outside the grid")
        x = np.clip(x, 0, nx - 1)
        y = np.clip(y, 0, ny - 1)
        z = np.clip(z, 0, nz - 1)
        padded, off = values, 0
    else:
        padded = np.pad(values, 1, constant_values=fill)
        off = 1
        x = np.clip(x + off, 0, nx + 1)
        y = np.clip(y + off, 0, ny + 1)
        z = np.clip(z + off, 0, nz + 1)
    pz, py, px = padded.shape
    x0 = np.minimum(np.floor(x).astype(np.intp), px - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), py - 2)
    z0 = np.minimum(np.floor(z).astype(np.intp), pz - 2)
    fx, fy, fz = x - x0, y - y0, z - z0
    out = np.zeros(np.broadcast(x, y, z).shape)
    for dz in (0, 1):
        wz = fz if dz else 1 - fz
        for dy in (0, 1):
            wy = fy if dy else 1 - fy
            for dx in (0, 1):
                wx = fx if dx else 1 - fx
                out += wz * wy * wx * padded[z0 + dz, y0 + dy, x0 + dx]
    return out


def sample_trilinear(field: ScalarField3, point) -> float:
    """Interpolate ``field`` at ``point = (x, y, z)`` given in voxel units."""
    x, y, z = point
    return float(trilinear(field.values, x, y, z))


def sample_trilinear_padded(field: ScalarField3, point) -> float:
    """Like :func:`sample_trilinear` but outside the grid the field is zero."""
    x, y, z = point
    return float(trilinear(field.values, x, y, z, fill=0.0))


# ---------------------------------------------------------------- transforms

def zero_nyquist(spectrum: np.ndarray, axes) -> np.ndarray:
    """Zero the Nyquist planes of even-length axes (in place) and return the array."""
    for ax in axes:
        n = spectrum.shape[ax]
        if n % 2 == 0:
            idx = [slice(None)] * spectrum.ndim
            idx[ax] = n // 2
            spectrum[tuple(idx)] = 0
    return spectrum


def divergence_spectral(a: VectorField3) -> ScalarField3:
    """Divergence computed in reciprocal space, in field units per voxel.

    DC and Nyquist bins are zeroed so the result is real.
    """
    kz, ky, kx = a.grid.frequencies(angular=True)
    spec = (1j * kx * np.fft.fftn(a.data[0]) + 1j * ky * np.fft.fftn(a.data[1])
            + 1j * kz * np.fft.fftn(a.data[2]))
    spec.flat[0] = 0
    zero_nyquist(spec, (0, 1, 2))
    return ScalarField3(a.grid, np.fft.ifftn(spec).real)


def _central_gradient(f: np.ndarray, axis: int) -> np.ndarray:
    # second-order interior, first-order one-sided at the two ends
    return np.gradient(f, axis=axis, edge_order=1)


def curl_fd(a: VectorField3) -> VectorField3:
    """Central-difference curl (one-sided at the boundary) in units of field per voxel."""
    if min(a.grid.shape) < 3:
        raise ValueError("curl_fd needs at least 3 voxels along every axis")
    ax, ay, az = a.data
    # array axes: 0 -> z, 1 -> y, 2 -> x
    bx = _central_gradient(az, 1) - _central_gradient(ay, 0)
    by = _central_gradient(ax, 0) - _central_gradient(az, 2)
    bz = _central_gradient(ay, 2) - _central_gradient(ax, 1)
    return VectorField3(a.grid, np.stack([bx, by, bz]))


def divergence_fd(a: VectorField3) -> ScalarField3:
    return ScalarField3(a.grid, _central_gradient(a.data[0], 2) + _central_gradient(a.data[1], 1)
                        + _central_gradient(a.data[2], 0))
