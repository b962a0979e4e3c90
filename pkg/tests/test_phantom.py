import numpy as np
import pytest

from vectomo.fields import Grid3, divergence_spectral
from vectomo.phantom import (MagnetizationSpec, PhantomConfig, ShapeSpec, framing_pitch, magnetization_real,
                             magnetization_spectrum, pixel_centres, potential_from_spectrum, shape_amplitude,
                             shepp_logan, shepp_logan_sinogram, vector_potential)
from vectomo.projector import project_scalar_2d


@pytest.fixture(scope="module")
def prism():
    return PhantomConfig.prism(64)


@pytest.fixture(scope="module")
def cylinder():
    return PhantomConfig.cylinder(64)


def test_shape_amplitude_dc_is_volume(prism, cylinder):
    assert shape_amplitude(prism.shape, prism.grid)[0, 0, 0].real == pytest.approx(75000.0)
    assert shape_amplitude(cylinder.shape, cylinder.grid)[0, 0, 0].real == pytest.approx(np.pi * 30 ** 2 * 30)


def test_prism_amplitude_matches_rasterised_indicator(prism):
    g = prism.grid
    d = shape_amplitude(prism.shape, g)
    raster = np.fft.fftn(prism.shape.indicator(g)) * g.pitch ** 3
    kz, ky, kx = g.frequencies()
    band = np.sqrt(kx ** 2 + ky ** 2 + kz ** 2) <= 0.25
    err = np.sqrt(np.mean(np.abs(d[band] - raster[band]) ** 2) / np.mean(np.abs(raster[band]) ** 2))
    assert err <= 0.02


def test_framing_pitch_gives_odd_counts():
    p = framing_pitch(50.0, 64)
    assert 50.0 / p == pytest.approx(35)
    assert (50.0 / framing_pitch(50.0, 32)) % 2 == 1


def test_shapes_validate():
    with pytest.raises(ValueError):
        ShapeSpec("sphere", (1, 1, 1))
    with pytest.raises(ValueError):
        ShapeSpec("prism", (1, 1))
    with pytest.raises(ValueError):
        PhantomConfig(Grid3.cube(16, 1.0), ShapeSpec.prism(50, 50, 30))
    with pytest.raises(ValueError):
        MagnetizationSpec(direction=(1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        MagnetizationSpec(b0=0.0)


def test_uniform_spectrum_is_d_times_direction(prism):
    m = magnetization_spectrum(prism)
    d = shape_amplitude(prism.shape, prism.grid)
    mhat = np.array([np.cos(np.pi / 6), np.sin(np.pi / 6), 0.0])
    for c in range(3):
        assert np.allclose(m[c], d * mhat[c], rtol=0, atol=1e-12 * np.abs(d).max())


def test_vortex_real_space_field(cylinder):
    m = magnetization_real(cylinder)
    ind = cylinder.shape.indicator(cylinder.grid)
    mag = np.sqrt((m ** 2).sum(0))
    z, y, x = cylinder.grid.coordinates()
    off_axis = (ind > 0) & (np.broadcast_to(np.hypot(x, y), ind.shape) > 0)
    assert np.allclose(mag[off_axis], 1.0)
    assert np.all(m[2] == 0)
    # ccw: at (+R/2, 0, 0) the field points along +y
    g = cylinder.grid
    r_half = 0.5 * cylinder.shape.half_extents[0] / g.pitch
    cx, cy, cz = g.center.astype(int)
    i = int(round(cx + r_half))
    assert m[1, cz, cy, i] == pytest.approx(1.0)
    assert m[0, cz, cy, i] == pytest.approx(0.0)
    cw = PhantomConfig.cylinder(64, chirality="cw")
    assert magnetization_real(cw)[1, cz, cy, i] == pytest.approx(-1.0)


@pytest.mark.parametrize("kind", ["prism", "cylinder"])
def test_potential_is_divergence_free(kind, prism, cylinder):
    cfg = prism if kind == "prism" else cylinder
    a = vector_potential(cfg)
    div = divergence_spectral(a).values
    assert np.abs(div).max() <= 1e-10 * np.abs(a.data).max()


def test_z_magnetisation_has_no_az():
    g = PhantomConfig.prism(32).grid
    cfg = PhantomConfig(g, ShapeSpec.prism(50, 50, 30), MagnetizationSpec(direction=(0.0, 0.0, 1.0)))
    a = vector_potential(cfg)
    assert np.abs(a.data[2]).max() <= 1e-12 * np.abs(a.data).max()


def test_b0_scaling_is_linear(prism):
    a1 = vector_potential(prism)
    a2 = vector_potential(PhantomConfig.prism(64, b0=2.0))
    assert np.allclose(a2.data, 2 * a1.data, rtol=1e-12, atol=1e-12 * np.abs(a1.data).max())


def test_uniform_general_path_equals_direct_formula(prism):
    # direct evaluation: A~ = -i B0 D(k) (m x k) / k^2 with D in voxel units
    g = prism.grid
    d = shape_amplitude(prism.shape, g) / g.pitch ** 3
    kz, ky, kx = g.frequencies(angular=True)
    m = np.array([np.cos(np.pi / 6), np.sin(np.pi / 6), 0.0])
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    k2[0, 0, 0] = 1.0
    cross = [m[1] * kz - m[2] * ky, m[2] * kx - m[0] * kz, m[0] * ky - m[1] * kx]
    ref = []
    for c in range(3):
        spec = -1j * d * cross[c] / k2
        spec[0, 0, 0] = 0
        for ax in range(3):
            idx = [slice(None)] * 3
            idx[ax] = g.shape[ax] // 2
            spec[tuple(idx)] = 0
        ref.append(np.fft.ifftn(spec).real)
    a = vector_potential(prism).data
    assert np.allclose(a, np.stack(ref), rtol=0, atol=1e-12 * np.abs(a).max())


def test_prism_potential_regression(prism):
    # circulation of A around the particle: A is largest at the faces parallel to m
    a = vector_potential(prism)
    g = prism.grid
    cz = g.nz // 2
    assert a.magnitude_max() == pytest.approx(np.sqrt((a.data ** 2).sum(0)).max())
    # A_z changes sign across the particle and vanishes on the centre line by symmetry
    az = a.data[2, cz + 10, g.ny // 2]
    assert np.sign(az[g.nx // 2 - 10]) == -np.sign(az[g.nx // 2 + 10])
    assert abs(a.data[2, g.nz // 2, g.ny // 2, g.nx // 2]) <= 1e-9 * np.abs(a.data).max()


def test_potential_rejects_complex_residue():
    g = Grid3.cube(8)
    bad = np.zeros((3,) + g.shape, dtype=complex)
    bad[0, 1, 0, 0] = 1.0  # kz bin without its Hermitian partner
    with pytest.raises(RuntimeError):
        potential_from_spectrum(bad, g, 1.0)


def _shepp_logan_oracle(n):
    # independent per-pixel evaluation of the modified Shepp-Logan table
    table = [(1.0, 0.69, 0.92, 0.0, 0.0, 0.0), (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
             (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0), (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
             (0.1, 0.21, 0.25, 0.0, 0.35, 0.0), (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
             (0.1, 0.046, 0.046, 0.0, -0.1, 0.0), (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
             (0.1, 0.023, 0.023, 0.0, -0.606, 0.0), (0.1, 0.023, 0.046, 0.06, -0.605, 0.0)]
    out = np.zeros((n, n))
    for row in range(n):
        yv = 1 - (2 * row + 1) / n
        for col in range(n):
            xv = -1 + (2 * col + 1) / n
            v = 0.0
            for inten, a, b, x0, y0, phi in table:
                t = np.deg2rad(phi)
                u = (xv - x0) * np.cos(t) + (yv - y0) * np.sin(t)
                w = -(xv - x0) * np.sin(t) + (yv - y0) * np.cos(t)
                if (u / a) ** 2 + (w / b) ** 2 <= 1:
                    v += inten
            out[row, col] = min(max(v, 0.0), 1.0)
    return out


def test_shepp_logan_matches_independent_oracle():
    n = 64
    assert np.allclose(shepp_logan(n).values, _shepp_logan_oracle(n), rtol=0, atol=1e-12)


def test_shepp_logan_layout():
    img = shepp_logan(256).values
    assert img.min() >= 0 and img.max() <= 1
    xs = pixel_centres(256)
    x, y = xs[None, :], xs[::-1][:, None]
    assert np.all(img[(x / 0.69) ** 2 + (y / 0.92) ** 2 > 1] == 0)
    # bright skull ring at the top, darker brain inside, two dark lateral ellipses
    assert img[8, 128] == pytest.approx(1.0) or img[10, 128] == pytest.approx(1.0)
    centre_row = 128
    assert img[centre_row, 128 + 28] < img[centre_row, 128]
    assert img[centre_row, 128 - 28] < img[centre_row, 128]
    with pytest.raises(ValueError):
        shepp_logan(8)


def test_analytic_sinogram_matches_projection():
    n = 128
    ang = [-60.0, 0.0, 35.0, 90.0]
    num = project_scalar_2d(shepp_logan(n), ang)
    exact = shepp_logan_sinogram(n, ang)
    err = np.sqrt(np.mean((num - exact) ** 2)) / np.sqrt(np.mean(exact ** 2))
    assert err <= 0.05
