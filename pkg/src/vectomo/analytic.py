"""Analytic reconstructions: 2D back projection, filtered back projection and SIRT,
and the gauge-constrained vector FBP (VFET) for two tilt series.

VFET filter.  With the Coulomb gauge, the x series alone fixes ``B~x = i k_v phi~_x``
and the y series ``B~y = -i k_u phi~_y``; ``B~z`` follows from ``k.B~ = 0`` and
``A~ = i k x B~ / k^2``.  Splitting this by series and writing ``k`` on the tilted
slice gives, per image, the three kernels (x series)

    |k_v| / (s k^2) * [ k_u k_v c,  -(k_u^2 + k_v^2 s^2),  k_v^2 c s ]

with ``c, s = cos t, sin t`` and ``k^2 = k_u^2 + k_v^2``; the y series swaps the
roles of ``u`` and ``v`` in the first two entries.  ``|k_v|`` is the polar-to-
Cartesian Jacobian of the slice stack, i.e. the ramp filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .fields import Grid3, Image2, VectorField3
from .projector import (ProjectionSet, Sinogram, TiltSeries, backproject_planes, backproject_scalar_2d,
                        fft_workers, project_scalar_2d)

KERNEL_VARIANTS = ("symmetric", "printed")


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "ram_lak"
    cutoff: float = 1.0  # fraction of Nyquist

    def __post_init__(self):
        if self.kind not in ("none", "ram_lak"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not (0 < self.cutoff <= 1):
            raise ValueError("cutoff must lie in (0, 1]")


SIRT_BACKPROJECTORS = ("filtered", "normalized")


@dataclass(frozen=True)
class SirtParams:
    lam: float = 0.25
    iterations: int = 10
    # "filtered": H^T is the pi/K weighted, ramp-filtered adjoint (the FBP operator);
    # "normalized": classic row/column-sum preconditioned SIRT
    backprojector: str = "filtered"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        if self.backprojector not in SIRT_BACKPROJECTORS:
            raise ValueError(f"backprojector must be one of {SIRT_BACKPROJECTORS}")

def _padded_len(n: int) -> int:
    return int(sfft.next_fast_len(2 * n))


def ram_lak_response(n: int, cutoff: float = 1.0) -> np.ndarray:
    """Frequency response of the band-limited Ram-Lak filter on a padded length.

    Built from the band-limited spatial kernel ``h(0) = 1/4``, ``h(m) = -1/(pi m)^2``
    for odd ``m`` (zero for even ``m``), so that the DC term is not lost to
    discretisation.  ``cutoff`` applies a hard window at that fraction of Nyquist.
    """
    m = _padded_len(n)
    idx = np.fft.fftfreq(m) * m
    h = np.zeros(m)
    h[0] = 0.25
    odd = (idx.astype(int) % 2) != 0
    h[odd] = -1.0 / (np.pi * idx[odd]) ** 2
    resp = np.real(np.fft.fft(h))
    if cutoff < 1:
        resp[np.abs(np.fft.fftfreq(m)) > 0.5 * cutoff] = 0
    return resp


def ramp_filter(profiles: np.ndarray, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Filter ``(..., n)`` profiles along the last axis (zero padded, linear convolution)."""
    profiles = np.asarray(profiles, dtype=float)
    if spec.kind == "none":
        return profiles.copy()
    n = profiles.shape[-1]
    resp = ram_lak_response(n, spec.cutoff)
    f = sfft.rfft(profiles, n=resp.size, axis=-1, workers=fft_workers())
    f *= resp[: f.shape[-1]]
    return sfft.irfft(f, n=resp.size, axis=-1, workers=fft_workers())[..., :n]


def _as_sinogram(sino, angles=None) -> Sinogram:
    if isinstance(sino, Sinogram):
        return sino
    if angles is None:
        raise ValueError("angles are required with a bare sinogram array")
    return Sinogram(angles, sino)


def fbp2d(sino, filt: FilterSpec = FilterSpec(), angles=None) -> Image2:
    """Filter each profile (unless ``filt.kind == 'none'``) and smear, weighted pi/K."""
    s = _as_sinogram(sino, angles)
    if len(s) < 2:
        raise ValueError("filtered back projection needs at least two angles")
    q = ramp_filter(s.data, filt)
    img = backproject_scalar_2d(q, s.angles, s.n) * (np.pi / len(s))
    return Image2(img, 1.0)


def bp2d(sino, angles=None) -> Image2:
    return fbp2d(sino, FilterSpec("none"), angles)


def sirt_weights(angles, n: int):
    """Inverse row and column sums of the projector (the SIRT preconditioners)."""
    ones_img = np.ones((n, n))
    row = project_scalar_2d(ones_img, angles)
    col = backproject_scalar_2d(np.ones((len(angles), n)), angles, n)
    tiny = 1e-6 * max(row.max(), 1.0)
    r = np.where(row > tiny, 1.0 / np.maximum(row, tiny), 0.0)
    c = np.where(col > 1e-6 * col.max(), 1.0 / np.maximum(col, 1e-12), 0.0)
    return r, c


def sirt2d(sino, params: SirtParams = SirtParams(), angles=None, x0=None, callback=None) -> Image2:
    """``x <- x + lam * B (y - H x)`` from a zero start, exactly ``params.iterations`` times.

    ``B`` is the filtered back projection by default, or ``C H^T R`` with ``R`` and
    ``C`` the inverse row and column sums of ``H``.
    """
    s = _as_sinogram(sino, angles)
    n = s.n
    if params.backprojector == "normalized":
        r, c = sirt_weights(s.angles, n)

        def back(e):
            return c * backproject_scalar_2d(r * e, s.angles, n)
    else:
        def back(e):
            return fbp2d(Sinogram(s.angles, e)).values
    x = np.zeros((n, n)) if x0 is None else np.array(x0, dtype=float)
    for it in range(int(params.iterations)):
        resid = s.data - project_scalar_2d(x, s.angles)
        x = x + params.lam * back(resid)
        if callback is not None:
            callback(it, x, resid)
    return Image2(x, 1.0)


def normalize_range(img, lo: float = 0.0, hi: float = 1.0) -> Image2:
    """Affine map of ``img`` onto ``[lo, hi]`` (how an unfiltered BP is displayed)."""
    v = img.values if isinstance(img, Image2) else np.asarray(img, dtype=float)
    span = v.max() - v.min()
    if span == 0:
        raise ValueError("cannot rescale a constant image")
    return Image2(lo + (hi - lo) * (v - v.min()) / span, img.pitch if isinstance(img, Image2) else 1.0)


# ---------------------------------------------------------------- VFET

def trapezoid_weights(angles_deg) -> np.ndarray:
    """Angular quadrature weights in radians; each endpoint gets half an interval."""
    th = np.deg2rad(np.asarray(angles_deg, dtype=float))
    if th.size == 1:
        return np.array([np.pi])
    w = np.empty_like(th)
    d = np.diff(th)
    w[0], w[-1] = d[0] / 2, d[-1] / 2
    w[1:-1] = (d[:-1] + d[1:]) / 2
    return w


def clamp_floor(angles_deg) -> float:
    """``sin(dtheta / 2)`` from the smallest angular step of the series."""
    ang = np.asarray(angles_deg, dtype=float)
    if ang.size < 2:
        return np.sin(np.deg2rad(1.0))
    return float(np.sin(np.deg2rad(np.min(np.diff(ang))) / 2))


def _inv_sin(theta_deg: float, floor: float | None) -> float:
    s = np.sin(np.deg2rad(theta_deg))
    if floor is None:
        if abs(s) < 1e-12:
            raise ZeroDivisionError(f"sin(theta) vanishes at theta={theta_deg} and clamping is disabled")
        return 1.0 / s
    if s == 0:
        # the +-floor limits cancel; the slice keeps only its cos terms
        return 0.0
    return np.sign(s) / max(abs(s), floor)


def gauge_kernels(axis: str, theta_deg: float, shape, floor: float | None,
                  variant: str = "symmetric", ramp: bool = True) -> np.ndarray:
    """``(3, mv, mu)`` multipliers for the DFT of one (padded) phase image."""
    if variant not in KERNEL_VARIANTS:
        raise ValueError(f"kernel_variant must be one of {KERNEL_VARIANTS}")
    mv, mu = shape
    kv = np.fft.fftfreq(mv)[:, None]
    ku = np.fft.fftfreq(mu)[None, :]
    th = np.deg2rad(theta_deg)
    c, s = np.cos(th), np.sin(th)
    inv_s = _inv_sin(theta_deg, floor)
    k2 = ku ** 2 + kv ** 2
    k2 = np.where(k2 == 0, 1.0, k2)
    # along-profile frequency: v for the x series, u for the y series
    kp, ko = (kv, ku) if axis == "x" else (ku, kv)
    # the printed form has sin where the derivation gives sin^2
    tail = kp ** 2 * (s if variant == "symmetric" else 1.0)
    cross = ku * kv * c * inv_s
    inplane = -(ko ** 2 * inv_s + tail)
    zpart = kp ** 2 * c
    out = np.empty((3, mv, mu))
    if axis == "x":
        out[0], out[1] = cross, inplane
    else:
        out[0], out[1] = inplane, cross
    out[2] = zpart
    out /= k2
    if ramp:
        out *= np.abs(kp)
    out[:, 0, 0] = 0
    return out


def vfet_gauge_filter(series: TiltSeries, theta_index: int, floor: float | None = -1.0,
                      variant: str = "symmetric", ramp: bool = True) -> tuple[Image2, Image2, Image2]:
    """Per-component filtered images for one tilt of ``series``.

    ``floor=-1`` (the default) clamps ``|sin t|`` at ``sin(dtheta/2)`` of the series;
    ``None`` disables clamping.
    """
    if floor is not None and floor < 0:
        floor = clamp_floor(series.angles)
    img = series.stack[theta_index]
    comps = filter_stack(img[None], series.axis, series.angles[theta_index:theta_index + 1],
                         floor, variant, ramp)[:, 0]
    return tuple(Image2(c, series.pitch) for c in comps)


def filter_stack(stack: np.ndarray, axis: str, angles, floor: float | None,
                 variant: str = "symmetric", ramp: bool = True) -> np.ndarray:
    """Gauge-filter a ``(K, nv, nu)`` stack into ``(3, K, nv, nu)`` component images."""
    stack = np.asarray(stack, dtype=float)
    k, nv, nu = stack.shape
    mv, mu = _padded_len(nv), _padded_len(nu)
    spec = sfft.rfft2(stack, s=(mv, mu), workers=fft_workers())
    out = np.empty((3, k, nv, nu))
    for i, th in enumerate(angles):
        ker = gauge_kernels(axis, th, (mv, mu), floor, variant, ramp)[:, :, : spec.shape[-1]]
        filt = sfft.irfft2(ker * spec[i][None], s=(mv, mu), workers=fft_workers())
        out[:, i] = filt[:, :nv, :nu]
    return out


def vfet_series(series: TiltSeries, grid: Grid3, floor: float | None = -1.0,
                variant: str = "symmetric", ramp: bool = True, weighted: bool = True) -> np.ndarray:
    """Contribution of one series to the three components, ``(3, nz, ny, nx)``."""
    if (grid.ny, grid.nx) != series.shape:
        raise ValueError(f"series images {series.shape} do not match grid {(grid.ny, grid.nx)}")
    if floor is not None and floor < 0:
        floor = clamp_floor(series.angles)
    comps = filter_stack(series.stack, series.axis, series.angles, floor, variant, ramp)
    if weighted:
        comps *= trapezoid_weights(series.angles)[None, :, None, None]
    return np.stack([backproject_planes(comps[c], grid.shape, series.axis, series.angles)
                     for c in range(3)])


def vfet_reconstruct(ps: ProjectionSet, grid: Grid3 | None = None, floor: float | None = -1.0,
                     variant: str = "symmetric", scale: float = 1.0) -> VectorField3:
    """Gauge-constrained FBP of both tilt series.

    ``scale`` is the phase per (T*px) used when the data were generated.
    """
    if len(ps.sx) == 0 or len(ps.sy) == 0:
        raise ValueError("both tilt series must be non-empty")
    if grid is None:
        nv, nu = ps.sx.shape
        grid = Grid3(nu, nv, max(nu, nv), ps.sx.pitch)
    total = vfet_series(ps.sx, grid, floor, variant) + vfet_series(ps.sy, grid, floor, variant)
    return VectorField3(grid, total / scale)
