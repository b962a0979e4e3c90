"""Forward projectors and their adjoints.

Everything goes through :class:`SliceProjector`, which computes parallel-beam line
integrals of a stack of 2D planes with the Fourier slice theorem: zero-pad each
plane, take its 2D DFT, sample the spectrum bilinearly along the central line at
the tilt angle, and inverse transform that line.  The bilinear stencil is stored as
a sparse matrix so the adjoint is exact (transpose of every step, in reverse).

The vector projections of the two tilt series reduce to this operator:

* x tilt: in every x-plane, project ``-sin(t)*Ay + cos(t)*Az`` over the (y, z) plane
  along the direction whose spectrum is sampled at ``(ky, kz) = k*(cos t, sin t)``.
* y tilt: in every y-plane, project ``-sin(t)*Ax + cos(t)*Az`` over the (x, z) plane
  with ``(kx, kz) = k*(cos t, sin t)``.

Both series put the projection of ``Az`` along z on the (x, y) image at zero tilt.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .fields import Grid3, Image2, VectorField3, trilinear

AXES = ("x", "y")
# padding factor of the plane DFT; with linear slice interpolation, 2 leaves a
# ~5% roll-off at oblique angles on fields that fill the view, 3 brings it to ~2%
OVERSAMPLE = 3.0


_forced_workers: int | None = None


def fft_workers() -> int:
    if _forced_workers is not None:
        return _forced_workers
    env = os.environ.get("VECTOMO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@contextmanager
def fft_threads(n: int | None):
    """Pin the FFT worker count inside the block (``None`` leaves it unchanged)."""
    global _forced_workers
    old = _forced_workers
    if n is not None:
        _forced_workers = int(n)
    try:
        yield
    finally:
        _forced_workers = old


def _even_ceil(x: float) -> int:
    n = int(np.ceil(x))
    return n + (n % 2)


class SliceProjector:
    """Line integrals of ``(batch, nb, na)`` planes at a fixed list of angles.

    At angle ``t`` the profile coordinate runs along ``(cos t, sin t)`` in (a, b)
    and the beam along ``(-sin t, cos t)``; so ``t = 0`` sums over b.  The rotation
    centre is index ``(na//2, nb//2)``.  Output profiles have ``na`` samples.
    """

    # complex entries per chunk of FFT work, bounds peak memory
    chunk_elems = 1 << 22

    def __init__(self, na: int, nb: int, angles_deg: Sequence[float], oversample: float = OVERSAMPLE):
        self.na, self.nb = int(na), int(nb)
        self.angles = np.asarray(angles_deg, dtype=float)
        if self.angles.ndim != 1 or self.angles.size == 0:
            raise ValueError("need at least one angle")
        self.oversample = float(oversample)
        self.ma = _even_ceil(oversample * self.na)
        self.mb = _even_ceil(oversample * self.nb)
        self.mt = max(self.ma, self.mb)
        self.ia = (np.arange(self.na) - self.na // 2) % self.ma
        self.ib = (np.arange(self.nb) - self.nb // 2) % self.mb
        self.it = (np.arange(self.na) - self.na // 2) % self.mt
        self._s = self._build_stencil()
        self._st = self._s.T.tocsr()

    @property
    def n_angles(self) -> int:
        return self.angles.size

    def _build_stencil(self) -> sp.csr_matrix:
        # only j >= 0 is needed: the profile is real, so the line is Hermitian, and
        # those samples lie in the a >= 0 half plane kept by rfft2
        ma, mb, mt = self.ma, self.mb, self.mt
        ha = ma // 2 + 1
        j = np.arange(mt // 2 + 1, dtype=float)
        th = np.deg2rad(self.angles)
        a = np.cos(th)[:, None] * j[None, :] * (ma / mt)
        b = np.sin(th)[:, None] * j[None, :] * (mb / mt)
        a0, b0 = np.floor(a), np.floor(b)
        fa, fb = a - a0, b - b0
        a0 = a0.astype(np.int64)
        b0 = b0.astype(np.int64)
        rows = np.arange(self.n_angles * j.size).reshape(self.n_angles, j.size)
        r, c, w = [], [], []
        for db in (0, 1):
            wb = fb if db else 1 - fb
            for da in (0, 1):
                wa = fa if da else 1 - fa
                ww = (wb * wa).ravel()
                aa = (a0 + da).ravel()
                keep = ww != 0
                if np.any(aa[keep] >= ha):
                    raise AssertionError("slice sample outside the half spectrum")
                r.append(rows.ravel()[keep])
                c.append((((b0 + db) % mb).ravel() * ha + aa)[keep])
                w.append(ww[keep])
        s = sp.coo_matrix((np.concatenate(w), (np.concatenate(r), np.concatenate(c))),
                          shape=(self.n_angles * j.size, mb * ha))
        return s.tocsr()

    def _chunks(self, n: int):
        step = max(1, self.chunk_elems // (self.ma * self.mb))
        for start in range(0, n, step):
            yield slice(start, min(n, start + step))

    # The batch axis is kept last so that a complex spectrum of shape (..., n) can be
    # handed to the real sparse stencil as (..., 2n) without copying.

    def forward_last(self, planes: np.ndarray) -> np.ndarray:
        """``(nb, na, batch)`` -> ``(n_angles, na, batch)``."""
        planes = np.asarray(planes, dtype=float)
        if planes.shape[:2] != (self.nb, self.na):
            raise ValueError(f"plane shape {planes.shape[:2]} != {(self.nb, self.na)}")
        nbatch = planes.shape[2]
        out = np.empty((self.n_angles, self.na, nbatch))
        workers = fft_workers()
        hl = self.mt // 2 + 1
        for sl in self._chunks(nbatch):
            x = planes[:, :, sl]
            n = x.shape[2]
            buf = np.zeros((self.mb, self.ma, n))
            buf[self.ib[:, None], self.ia[None, :]] = x
            spec = sfft.rfft2(buf, axes=(0, 1), workers=workers)
            line = (self._s @ spec.reshape(-1, n).view(np.float64)).view(np.complex128)
            prof = sfft.irfft(line.reshape(self.n_angles, hl, n), n=self.mt, axis=1, workers=workers,
                              overwrite_x=True)
            out[:, :, sl] = prof[:, self.it]
        return out

    def adjoint_last(self, profiles: np.ndarray) -> np.ndarray:
        """``(n_angles, na, batch)`` -> ``(nb, na, batch)``; exact transpose of :meth:`forward_last`."""
        profiles = np.asarray(profiles, dtype=float)
        if profiles.shape[:2] != (self.n_angles, self.na):
            raise ValueError(f"profile shape {profiles.shape[:2]} != {(self.n_angles, self.na)}")
        nbatch = profiles.shape[2]
        out = np.empty((self.nb, self.na, nbatch))
        workers = fft_workers()
        # adjoints of irfft (length mt) and rfft2 under the real inner product
        wl = np.full(self.mt // 2 + 1, 2.0 / self.mt)
        wl[0] = wl[-1] = 1.0 / self.mt
        ha = self.ma // 2 + 1
        wa = np.full(ha, 0.5 * self.ma * self.mb)
        wa[0] = wa[-1] = self.ma * self.mb
        for sl in self._chunks(nbatch):
            y = profiles[:, :, sl]
            n = y.shape[2]
            line = np.zeros((self.n_angles, self.mt, n))
            line[:, self.it] = y
            line = sfft.rfft(line, axis=1, workers=workers) * wl[None, :, None]
            spec = (self._st @ line.reshape(-1, n).view(np.float64)).view(np.complex128)
            spec = spec.reshape(self.mb, ha, n) * wa[None, :, None]
            vol = sfft.irfft2(spec, s=(self.mb, self.ma), axes=(0, 1), workers=workers, overwrite_x=True)
            out[:, :, sl] = vol[self.ib[:, None], self.ia[None, :]]
        return out

    def forward(self, planes: np.ndarray) -> np.ndarray:
        """``(batch, nb, na)`` (or one ``(nb, na)`` plane) -> ``(batch, n_angles, na)``."""
        planes = np.asarray(planes, dtype=float)
        if planes.ndim == 2:
            return self.forward_last(planes[:, :, None])[:, :, 0]
        if planes.ndim != 3:
            raise ValueError("expected (batch, nb, na) planes")
        return self.forward_last(planes.transpose(1, 2, 0)).transpose(2, 0, 1)

    def adjoint(self, profiles: np.ndarray) -> np.ndarray:
        """``(batch, n_angles, na)`` -> ``(batch, nb, na)``; exact transpose of :meth:`forward`."""
        profiles = np.asarray(profiles, dtype=float)
        if profiles.ndim == 2:
            return self.adjoint_last(profiles[:, :, None])[:, :, 0]
        if profiles.ndim != 3:
            raise ValueError("expected (batch, n_angles, na) profiles")
        return self.adjoint_last(profiles.transpose(1, 2, 0)).transpose(2, 0, 1)


@lru_cache(maxsize=32)
def _cached(na: int, nb: int, angles: tuple, oversample: float) -> SliceProjector:
    return SliceProjector(na, nb, angles, oversample)


def slice_projector(na: int, nb: int, angles_deg, oversample: float = OVERSAMPLE) -> SliceProjector:
    return _cached(int(na), int(nb), tuple(float(a) for a in np.atleast_1d(angles_deg)), float(oversample))


# ---------------------------------------------------------------- vector series

@dataclass(frozen=True, eq=False)
class TiltSeries:
    """Projections about one axis; ``stack`` has shape ``(n_angles, nv, nu)``."""

    axis: str
    angles: np.ndarray
    stack: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        ang = np.asarray(self.angles, dtype=float).ravel()
        st = np.asarray(self.stack, dtype=float)
        if st.ndim != 3 or st.shape[0] != ang.size or ang.size < 1:
            raise ValueError(f"{ang.size} angles but stack shape {st.shape}")
        if np.any(np.diff(ang) <= 0):
            raise ValueError("angles must be strictly increasing")
        if not np.all(np.isfinite(st)):
            raise ValueError("tilt series contains non-finite values")
        object.__setattr__(self, "angles", ang)
        object.__setattr__(self, "stack", st)

    def __len__(self) -> int:
        return self.angles.size

    @property
    def images(self) -> list[Image2]:
        return [Image2(im, self.pitch) for im in self.stack]

    @property
    def shape(self) -> tuple[int, int]:
        return self.stack.shape[1:]

    @classmethod
    def from_images(cls, axis: str, angles, images: Sequence[Image2]) -> "TiltSeries":
        if len(images) == 0:
            raise ValueError("empty tilt series")
        shapes = {im.values.shape for im in images}
        if len(shapes) != 1:
            raise ValueError(f"images differ in shape: {sorted(shapes)}")
        return cls(axis, angles, np.stack([im.values for im in images]), images[0].pitch)

    def with_stack(self, stack: np.ndarray) -> "TiltSeries":
        return TiltSeries(self.axis, self.angles, stack, self.pitch)


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    sx: TiltSeries
    sy: TiltSeries

    def __post_init__(self):
        if self.sx.axis != "x" or self.sy.axis != "y":
            raise ValueError("ProjectionSet needs an x series and a y series")
        if self.sx.shape != self.sy.shape:
            raise ValueError(f"image shapes differ: {self.sx.shape} vs {self.sy.shape}")
        if not np.isclose(self.sx.pitch, self.sy.pitch):
            raise ValueError("series pitch differs")

    def series(self):
        return (self.sx, self.sy)


def tilt_angles(limit: float = 90.0, step: float = 2.0) -> np.ndarray:
    """Symmetric angle list ``-limit..limit`` inclusive."""
    n = int(round(2 * limit / step))
    return np.linspace(-limit, limit, n + 1)


def _plane_layout(axis: str):
    """Transpose taking a ``(nz, ny, nx)`` volume to ``(batch, b, a)`` planes."""
    return (2, 0, 1) if axis == "x" else (1, 0, 2)


def _beam_components(axis: str):
    # (component rotated about the axis, z component)
    return (1, 2) if axis == "x" else (0, 2)


def _projector_for(grid: Grid3, axis: str, angles, oversample: float) -> SliceProjector:
    nz, ny, nx = grid.shape
    na = ny if axis == "x" else nx
    return slice_projector(na, nz, angles, oversample)


def project_planes(volume: np.ndarray, axis: str, angles, oversample: float = OVERSAMPLE) -> np.ndarray:
    """Scalar line integrals of a ``(nz, ny, nx)`` volume -> ``(n_angles, ny, nx)`` images."""
    nz, ny, nx = volume.shape
    na = ny if axis == "x" else nx
    proj = slice_projector(na, nz, angles, oversample)
    if axis == "x":
        return proj.forward_last(volume)  # batch = x
    return proj.forward_last(volume.transpose(0, 2, 1)).transpose(0, 2, 1)


def backproject_planes(stack: np.ndarray, shape, axis: str, angles, oversample: float = OVERSAMPLE) -> np.ndarray:
    """Adjoint of :func:`project_planes`: ``(n_angles, ny, nx)`` -> ``(nz, ny, nx)``."""
    nz, ny, nx = shape
    na = ny if axis == "x" else nx
    proj = slice_projector(na, nz, angles, oversample)
    stack = np.asarray(stack, dtype=float)
    if axis == "x":
        return proj.adjoint_last(stack)
    return np.ascontiguousarray(proj.adjoint_last(stack.transpose(0, 2, 1)).transpose(0, 2, 1))


def _check_angles(angles) -> np.ndarray:
    ang = np.atleast_1d(np.asarray(angles, dtype=float))
    if ang.size == 0:
        raise ValueError("empty angle list")
    if np.any(np.abs(ang) > 90 + 1e-9):
        raise ValueError("tilt angles must lie in [-90, 90] degrees")
    return ang


def project_stack(a: VectorField3, axis: str, angles, oversample: float = OVERSAMPLE) -> np.ndarray:
    """Vector projections ``(n_angles, ny, nx)`` of ``a`` about ``axis``."""
    if axis not in AXES:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    ang = _check_angles(angles)
    th = np.deg2rad(ang)
    ci, cz = _beam_components(axis)
    p_in = project_planes(a.data[ci], axis, ang, oversample)
    p_z = project_planes(a.data[cz], axis, ang, oversample)
    return -np.sin(th)[:, None, None] * p_in + np.cos(th)[:, None, None] * p_z


def backproject_stack(stack: np.ndarray, grid: Grid3, axis: str, angles, oversample: float = OVERSAMPLE) -> np.ndarray:
    """Exact adjoint of :func:`project_stack`; returns a ``(3, nz, ny, nx)`` array."""
    ang = _check_angles(angles)
    th = np.deg2rad(ang)
    stack = np.asarray(stack, dtype=float)
    ci, cz = _beam_components(axis)
    out = np.zeros((3,) + grid.shape)
    out[ci] = backproject_planes(-np.sin(th)[:, None, None] * stack, grid.shape, axis, ang, oversample)
    out[cz] = backproject_planes(np.cos(th)[:, None, None] * stack, grid.shape, axis, ang, oversample)
    return out


def project_vector(a: VectorField3, axis: str, theta_deg: float, scale: float = 1.0) -> Image2:
    """Phase image of ``a`` for one tilt; ``scale`` stands in for the -e/hbar prefactor."""
    img = project_stack(a, axis, [theta_deg])[0] * scale
    return Image2(img, a.grid.pitch)


def backproject_vector(img: Image2, grid: Grid3, axis: str, theta_deg: float, scale: float = 1.0) -> VectorField3:
    """Adjoint of :func:`project_vector` for one image."""
    if img.values.shape != (grid.ny, grid.nx):
        raise ValueError(f"image shape {img.values.shape} incompatible with grid {(grid.ny, grid.nx)}")
    return VectorField3(grid, backproject_stack(img.values[None] * scale, grid, axis, [theta_deg]))


def project_series(a: VectorField3, angles, axis: str, scale: float = 1.0) -> TiltSeries:
    ang = _check_angles(angles)
    return TiltSeries(axis, ang, project_stack(a, axis, ang) * scale, a.grid.pitch)


def backproject_series(series: TiltSeries, grid: Grid3, normalize: bool = True, scale: float = 1.0) -> VectorField3:
    """Stacked adjoint; with ``normalize`` the sum over angles is divided by their count."""
    out = backproject_stack(series.stack * scale, grid, series.axis, series.angles)
    if normalize:
        out /= len(series)
    return VectorField3(grid, out)


def project_set(a: VectorField3, angles_x, angles_y=None, scale: float = 1.0) -> ProjectionSet:
    angles_y = angles_x if angles_y is None else angles_y
    return ProjectionSet(project_series(a, angles_x, "x", scale), project_series(a, angles_y, "y", scale))


# ---------------------------------------------------------------- scalar 2D

@dataclass(frozen=True, eq=False)
class Sinogram:
    """Scalar 2D projections: ``data`` is ``(n_angles, n)``, angles in degrees."""

    angles: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        ang = np.asarray(self.angles, dtype=float).ravel()
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 2 or d.shape[0] != ang.size or ang.size < 1:
            raise ValueError(f"{ang.size} angles but sinogram shape {d.shape}")
        if np.any(np.diff(ang) <= 0):
            raise ValueError("angles must be strictly increasing")
        if not np.all(np.isfinite(d)):
            raise ValueError("sinogram contains non-finite values")
        object.__setattr__(self, "angles", ang)
        object.__setattr__(self, "data", d)

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.angles.size

    def with_data(self, data: np.ndarray) -> "Sinogram":
        return Sinogram(self.angles, data)


def sinogram(img: Image2 | np.ndarray, angles_deg) -> Sinogram:
    ang = _check_angles(angles_deg)
    return Sinogram(ang, project_scalar_2d(img, ang))


def project_scalar_2d(img: Image2 | np.ndarray, theta_deg, oversample: float = OVERSAMPLE) -> np.ndarray:
    """Line integrals of a square image; ``theta = 0`` gives column sums.

    A scalar angle returns one profile, a sequence returns a ``(n_angles, n)`` sinogram.
    """
    values = img.values if isinstance(img, Image2) else np.asarray(img, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("project_scalar_2d needs a square image")
    ang = np.atleast_1d(np.asarray(theta_deg, dtype=float))
    proj = slice_projector(values.shape[1], values.shape[0], ang, oversample)
    sino = proj.forward(values)
    return sino[0] if np.ndim(theta_deg) == 0 else sino


def backproject_scalar_2d(sino: np.ndarray, theta_deg, n: int | None = None, oversample: float = OVERSAMPLE) -> np.ndarray:
    """Adjoint of :func:`project_scalar_2d` (unweighted smear)."""
    sino = np.asarray(sino, dtype=float)
    ang = np.atleast_1d(np.asarray(theta_deg, dtype=float))
    if sino.ndim == 1:
        sino = sino[None]
    n = sino.shape[-1] if n is None else n
    proj = slice_projector(n, n, ang, oversample)
    return proj.adjoint(sino)


# ---------------------------------------------------------------- real-space oracle

def radon_plane_oracle(plane: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate-and-sum line integrals of one ``(nb, na)`` plane (bilinear, zero padded)."""
    nb, na = plane.shape
    th = np.deg2rad(theta_deg)
    c, s = np.cos(th), np.sin(th)
    half = int(np.ceil(np.hypot(na, nb) / 2)) + 1
    t = np.arange(na) - na // 2
    w = np.arange(-half, half + 1)
    tt, ww = np.meshgrid(t, w, indexing="ij")
    a = tt * c - ww * s + na // 2
    b = tt * s + ww * c + nb // 2
    vol = plane[None]
    vals = trilinear(vol, a, b, np.zeros_like(a), fill=0.0)
    return vals.sum(axis=1)


def radon_oracle_vector(a: VectorField3, axis: str, theta_deg: float) -> Image2:
    """Real-space reference for :func:`project_vector`; slow, for tests only."""
    th = np.deg2rad(theta_deg)
    ci, cz = _beam_components(axis)
    comb = -np.sin(th) * a.data[ci] + np.cos(th) * a.data[cz]
    planes = comb.transpose(_plane_layout(axis))
    prof = np.stack([radon_plane_oracle(p, theta_deg) for p in planes])  # (batch, na)
    img = prof.T if axis == "x" else prof
    return Image2(img, a.grid.pitch)
