"""Ground-truth magnetisation states, shape amplitudes and vector potentials, plus the
2D Shepp-Logan head phantom.

Reciprocal-space quantities are evaluated on the DFT grid of the target
:class:`~vectomo.fields.Grid3`.  The vector potential is returned in tesla-pixel
units: every formula is evaluated with lengths in voxels and angular wavenumbers in
radians per voxel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import j1

from .fields import Grid3, Image2, VectorField3, zero_nyquist

MARGIN_VOXELS = 2
# particle spans about this fraction of the grid's linear extent
DEFAULT_FILL = 0.55


@dataclass(frozen=True)
class ShapeSpec:
    """``prism``: half extents ``(hx, hy, hz)`` nm; ``cylinder``: ``(radius, half_height)`` nm.

    ``center`` is the offset of the shape from the grid centre, in nm.
    """

    kind: str
    half_extents: tuple
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("prism", "cylinder"):
            raise ValueError(f"unsupported shape kind {self.kind!r}")
        ext = tuple(float(e) for e in self.half_extents)
        want = 3 if self.kind == "prism" else 2
        if len(ext) != want:
            raise ValueError(f"{self.kind} needs {want} half extents, got {len(ext)}")
        if min(ext) <= 0:
            raise ValueError("extents must be positive")
        object.__setattr__(self, "half_extents", ext)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def prism(cls, lx: float, ly: float, lz: float, center=(0.0, 0.0, 0.0)) -> "ShapeSpec":
        return cls("prism", (lx / 2, ly / 2, lz / 2), center)

    @classmethod
    def cylinder(cls, diameter: float, height: float, center=(0.0, 0.0, 0.0)) -> "ShapeSpec":
        return cls("cylinder", (diameter / 2, height / 2), center)

    @property
    def box_half(self) -> np.ndarray:
        """Half extents of the bounding box ``(x, y, z)`` in nm."""
        e = self.half_extents
        return np.array(e) if self.kind == "prism" else np.array([e[0], e[0], e[1]])

    @property
    def volume(self) -> float:
        e = self.half_extents
        if self.kind == "prism":
            return 8 * e[0] * e[1] * e[2]
        return np.pi * e[0] ** 2 * 2 * e[1]

    def check_fits(self, grid: Grid3) -> None:
        half = self.box_half / grid.pitch + np.abs(np.array(self.center)) / grid.pitch
        c = grid.center
        n = np.array([grid.nx, grid.ny, grid.nz])
        room = np.minimum(c, n - 1 - c)
        if np.any(half + MARGIN_VOXELS > room):
            raise ValueError(f"grid {grid.shape} too small for {self.kind} (needs a "
                             f"{MARGIN_VOXELS}-voxel margin)")

    def indicator(self, grid: Grid3) -> np.ndarray:
        """Rasterised indicator, sampled at voxel centres."""
        z, y, x = grid.coordinates()
        cx, cy, cz = (np.array(self.center) / grid.pitch)
        x, y, z = (x - cx) * grid.pitch, (y - cy) * grid.pitch, (z - cz) * grid.pitch
        e = self.half_extents
        if self.kind == "prism":
            m = (np.abs(x) <= e[0]) & (np.abs(y) <= e[1]) & (np.abs(z) <= e[2])
        else:
            m = (x ** 2 + y ** 2 <= e[0] ** 2) & (np.abs(z) <= e[1])
        return m.astype(float)


@dataclass(frozen=True)
class MagnetizationSpec:
    kind: str = "uniform"
    direction: tuple = (np.cos(np.pi / 6), np.sin(np.pi / 6), 0.0)
    chirality: str = "ccw"
    b0: float = 1.0  # tesla

    def __post_init__(self):
        if self.kind not in ("uniform", "vortex"):
            raise ValueError(f"unsupported magnetisation kind {self.kind!r}")
        if self.chirality not in ("ccw", "cw"):
            raise ValueError("chirality must be 'ccw' or 'cw'")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1) > 1e-12:
            raise ValueError("direction must be a unit 3-vector")
        if not self.b0 > 0:
            raise ValueError("b0 must be positive")
        object.__setattr__(self, "direction", tuple(d))

    @property
    def sign(self) -> float:
        return 1.0 if self.chirality == "ccw" else -1.0


@dataclass(frozen=True)
class PhantomConfig:
    grid: Grid3
    shape: ShapeSpec
    magnetization: MagnetizationSpec = field(default_factory=MagnetizationSpec)

    def __post_init__(self):
        self.shape.check_fits(self.grid)

    @classmethod
    def prism(cls, n: int = 64, b0: float = 1.0, fill: float = DEFAULT_FILL) -> "PhantomConfig":
        """50 x 50 x 30 nm block magnetised along (cos 30, sin 30, 0)."""
        shape = ShapeSpec.prism(50, 50, 30)
        return cls(Grid3.cube(n, framing_pitch(50.0, n, fill)), shape, MagnetizationSpec("uniform", b0=b0))

    @classmethod
    def cylinder(cls, n: int = 64, b0: float = 1.0, chirality: str = "ccw",
                 fill: float = DEFAULT_FILL) -> "PhantomConfig":
        """60 nm diameter, 30 nm high disk in a vortex state."""
        shape = ShapeSpec.cylinder(60, 30)
        grid = Grid3.cube(n, framing_pitch(60.0, n, fill))
        return cls(grid, shape, MagnetizationSpec("vortex", chirality=chirality, b0=b0))


def framing_pitch(extent_nm: float, n: int, fill: float = DEFAULT_FILL) -> float:
    """Pitch making ``extent_nm`` span the largest odd voxel count not above ``fill * n``.

    An odd count puts the faces of a centred shape on half-voxel boundaries, so
    point sampling at voxel centres rasterises it without partial voxels.
    """
    count = 2 * int(np.floor(fill * n / 2)) + 1
    return extent_nm / count


def _phase(grid: Grid3, shape: ShapeSpec) -> np.ndarray:
    kz, ky, kx = grid.frequencies()
    cx, cy, cz = grid.center + np.array(shape.center) / grid.pitch
    return np.exp(-2j * np.pi * (kx * cx + ky * cy + kz * cz))


def shape_amplitude(shape: ShapeSpec, grid: Grid3) -> np.ndarray:
    """Analytic Fourier transform ``D(k)`` of the shape indicator, in nm^3.

    Evaluated on the DFT grid (cycles per nm = cycles per voxel / pitch) with the
    phase that places the shape at the grid centre plus ``shape.center``.
    """
    if not isinstance(shape, ShapeSpec):
        raise TypeError("shape must be a ShapeSpec")
    shape.check_fits(grid)
    kz, ky, kx = (k / grid.pitch for k in grid.frequencies())
    e = shape.half_extents
    if shape.kind == "prism":
        d = (2 * e[0] * np.sinc(2 * e[0] * kx)) * (2 * e[1] * np.sinc(2 * e[1] * ky)) \
            * (2 * e[2] * np.sinc(2 * e[2] * kz))
    else:
        r, h = e
        kr = np.sqrt(kx ** 2 + ky ** 2)
        arg = 2 * np.pi * r * kr
        safe = np.where(arg == 0, 1.0, arg)
        radial = np.where(arg == 0, 1.0, 2 * j1(safe) / safe) * np.pi * r ** 2
        d = radial * (2 * h * np.sinc(2 * h * kz))
    return d * _phase(grid, shape)


def magnetization_real(config: PhantomConfig) -> np.ndarray:
    """Rasterised unit magnetisation, ``(3, nz, ny, nx)``."""
    grid, shape, mag = config.grid, config.shape, config.magnetization
    ind = shape.indicator(grid)
    if mag.kind == "uniform":
        return np.asarray(mag.direction)[:, None, None, None] * ind[None]
    z, y, x = grid.coordinates()
    cx, cy, _ = np.array(shape.center) / grid.pitch
    x = np.broadcast_to(x - cx, grid.shape)
    y = np.broadcast_to(y - cy, grid.shape)
    r = np.hypot(x, y)
    on_axis = r < 1e-9
    safe = np.where(on_axis, 1.0, r)
    m = np.zeros((3,) + grid.shape)
    m[0] = np.where(on_axis, 0.0, -y / safe) * mag.sign * ind
    m[1] = np.where(on_axis, 0.0, x / safe) * mag.sign * ind
    return m


def magnetization_spectrum(config: PhantomConfig) -> np.ndarray:
    """``m~(k)`` in nm^3, shape ``(3, nz, ny, nx)``.

    Uniform states are ``D(k) * m_hat`` exactly; vortex states are the DFT of the
    rasterised azimuthal field scaled by the voxel volume.
    """
    mag = config.magnetization
    if mag.kind == "uniform":
        d = shape_amplitude(config.shape, config.grid)
        return np.asarray(mag.direction)[:, None, None, None] * d[None]
    m = magnetization_real(config)
    return np.fft.fftn(m, axes=(1, 2, 3)) * config.grid.pitch ** 3


def potential_from_spectrum(mspec_nm3: np.ndarray, grid: Grid3, b0: float) -> VectorField3:
    """``A~ = -i b0 (m~ x k) / k^2`` in voxel units, inverse transformed to T*px."""
    m = mspec_nm3 / grid.pitch ** 3
    kz, ky, kx = grid.frequencies(angular=True)
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    k2 = np.where(k2 == 0, 1.0, k2)
    cross = np.stack([m[1] * kz - m[2] * ky, m[2] * kx - m[0] * kz, m[0] * ky - m[1] * kx])
    spec = -1j * b0 * cross / k2
    spec[:, 0, 0, 0] = 0
    zero_nyquist(spec, (1, 2, 3))
    a = np.fft.ifftn(spec, axes=(1, 2, 3))
    scale = max(np.abs(a.real).max(), np.finfo(float).tiny)
    resid = np.abs(a.imag).max() / scale
    if resid > 1e-10:
        raise RuntimeError(f"vector potential not real (imaginary residue {resid:.2e})")
    return VectorField3(grid, a.real)


def vector_potential(config: PhantomConfig) -> VectorField3:
    """Coulomb-gauge vector potential of the configured particle, in T*px."""
    return potential_from_spectrum(magnetization_spectrum(config), config.grid, config.magnetization.b0)


# ---------------------------------------------------------------- Shepp-Logan

# (intensity, a, b, x0, y0, phi [deg]); the modified table with visible contrast
SHEPP_LOGAN = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
])


def pixel_centres(n: int) -> np.ndarray:
    return -1 + (2 * np.arange(n) + 1) / n


def shepp_logan(n: int = 256) -> Image2:
    """Ten-ellipse head phantom on ``[-1, 1]^2``; row 0 is the top (``y = +1``)."""
    if int(n) != n or n < 16:
        raise ValueError("shepp_logan needs n >= 16")
    n = int(n)
    xs = pixel_centres(n)
    x = xs[None, :]
    y = xs[::-1][:, None]
    img = np.zeros((n, n))
    for inten, a, b, x0, y0, phi in SHEPP_LOGAN:
        c, s = np.cos(np.deg2rad(phi)), np.sin(np.deg2rad(phi))
        dx, dy = x - x0, y - y0
        inside = ((dx * c + dy * s) / a) ** 2 + ((-dx * s + dy * c) / b) ** 2 <= 1
        img += inten * inside
    # overlap sums leave ~1e-17 round-off below the zero background
    return Image2(np.clip(img, 0.0, 1.0), 2.0 / n)


def shepp_logan_sinogram(n: int, angles_deg) -> np.ndarray:
    """Exact line integrals of the continuous phantom in the projector's geometry.

    Sample ``j`` of the profile at angle ``t`` matches sample ``j`` of
    ``project_scalar_2d(shepp_logan(n), t)``: offset ``j - n//2`` pixels from the
    rotation centre (pixel ``(n//2, n//2)``), integrated in pixel units.
    """
    n = int(n)
    ang = np.deg2rad(np.atleast_1d(np.asarray(angles_deg, dtype=float)))
    h = 2.0 / n
    xc = pixel_centres(n)[n // 2]
    yc = -xc
    # array rows run downwards, so index angle t is physical angle -t
    th = -ang[:, None]
    c, s = np.cos(th), np.sin(th)
    t = (np.arange(n)[None, :] - n // 2) * h + xc * c + yc * s
    sino = np.zeros((ang.size, n))
    for inten, a, b, x0, y0, phi in SHEPP_LOGAN:
        rel = th - np.deg2rad(phi)
        s2 = (a * np.cos(rel)) ** 2 + (b * np.sin(rel)) ** 2
        tp = t - (x0 * c + y0 * s)
        chord = np.where(tp ** 2 < s2, 2 * a * b * np.sqrt(np.maximum(s2 - tp ** 2, 0)) / s2, 0.0)
        sino += inten * chord
    return sino / h
