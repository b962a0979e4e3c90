import numpy as np
import pytest
from hypothesis import given, strategies as st

from vectomo.fields import (Grid3, Image2, ScalarField3, VectorField3, curl_fd, divergence_fd,
                            divergence_spectral, sample_trilinear, sample_trilinear_padded, trilinear,
                            zero_nyquist)


def test_grid_shape_and_centre():
    g = Grid3(8, 6, 4, 2.0)
    assert g.shape == (4, 6, 8)
    assert g.size == 192
    assert list(g.center) == [4, 3, 2]
    z, y, x = g.coordinates()
    assert x.ravel()[4] == 0 and y.ravel()[3] == 0 and z.ravel()[2] == 0


@pytest.mark.parametrize("kw", [dict(nx=1, ny=4, nz=4), dict(nx=4, ny=4, nz=4, pitch=0.0),
                                dict(nx=4.5, ny=4, nz=4), dict(nx=4, ny=4, nz=4, pitch=float("nan"))])
def test_grid_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        Grid3(**kw)


def test_containers_validate_shape_and_finiteness():
    g = Grid3.cube(4)
    with pytest.raises(ValueError):
        ScalarField3(g, np.zeros((4, 4, 5)))
    with pytest.raises(ValueError):
        VectorField3(g, np.zeros((2,) + g.shape))
    bad = np.zeros((3,) + g.shape)
    bad[0, 1, 1, 1] = np.inf
    with pytest.raises(ValueError):
        VectorField3(g, bad)
    with pytest.raises(ValueError):
        Image2(np.zeros(5))


def test_vector_components_roundtrip(rng):
    g = Grid3(5, 4, 3)
    d = rng.standard_normal((3,) + g.shape)
    v = VectorField3(g, d)
    w = VectorField3.from_components(v.ax, v.ay, v.az)
    assert np.array_equal(w.data, d)
    assert v.magnitude_max() == pytest.approx(np.sqrt((d ** 2).sum(0)).max())


def test_trilinear_reproduces_lattice_and_midpoints(rng):
    vals = rng.standard_normal((4, 5, 6))
    f = ScalarField3(Grid3(6, 5, 4), vals)
    assert sample_trilinear(f, (2, 3, 1)) == pytest.approx(vals[1, 3, 2])
    mid = vals[1:3, 2:4, 3:5].mean()
    assert sample_trilinear(f, (3.5, 2.5, 1.5)) == pytest.approx(mid)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_trilinear_exact_on_affine_functions(a, b, c):
    z, y, x = np.mgrid[0:4, 0:5, 0:6].astype(float)
    vals = a * x + b * y + c * z + 1.0
    pts = np.array([[0.3, 1.7, 2.2], [4.9, 3.1, 0.4]])
    got = trilinear(vals, pts[:, 0], pts[:, 1], pts[:, 2])
    want = a * pts[:, 0] + b * pts[:, 1] + c * pts[:, 2] + 1.0
    assert np.allclose(got, want, atol=1e-12)


def test_trilinear_outside_policy():
    f = ScalarField3(Grid3.cube(4), np.ones((4, 4, 4)))
    assert sample_trilinear(f, (-0.4, 0, 0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sample_trilinear(f, (-0.6, 0, 0))
    assert sample_trilinear_padded(f, (-1.0, 1, 1)) == 0.0
    assert sample_trilinear_padded(f, (-0.5, 1, 1)) == pytest.approx(0.5)


def test_zero_nyquist_only_even_axes():
    s = np.ones((4, 5))
    zero_nyquist(s, (0, 1))
    assert s[2].sum() == 0 and s.sum() == 15


def test_spectral_divergence_of_curl_vanishes(rng):
    g = Grid3(8, 10, 6)
    psi = rng.standard_normal((3,) + g.shape)
    kz, ky, kx = g.frequencies(angular=True)
    ps = [np.fft.fftn(p) for p in psi]
    # spectral curl of a random potential
    a = np.stack([np.fft.ifftn(1j * ky * ps[2] - 1j * kz * ps[1]).real,
                  np.fft.ifftn(1j * kz * ps[0] - 1j * kx * ps[2]).real,
                  np.fft.ifftn(1j * kx * ps[1] - 1j * ky * ps[0]).real])
    d = divergence_spectral(VectorField3(g, a)).values
    assert np.abs(d).max() <= 1e-12 * np.abs(a).max() * 10


def test_spectral_divergence_of_plane_wave():
    g = Grid3(16, 8, 8)
    z, y, x = np.meshgrid(np.arange(8), np.arange(8), np.arange(16), indexing="ij")
    k = 2 * np.pi * 2 / 16
    a = np.stack([np.sin(k * x), np.zeros(g.shape), np.zeros(g.shape)])
    d = divergence_spectral(VectorField3(g, a)).values
    assert np.allclose(d, k * np.cos(k * x), atol=1e-12)


def test_curl_and_divergence_fd_on_linear_fields():
    g = Grid3(6, 5, 4)
    z, y, x = np.meshgrid(np.arange(4.0), np.arange(5.0), np.arange(6.0), indexing="ij")
    # A = (-y, x, 0) / 2 has curl (0, 0, 1) and zero divergence
    a = VectorField3(g, np.stack([-y / 2, x / 2, np.zeros(g.shape)]))
    b = curl_fd(a).data
    assert np.allclose(b[2], 1.0) and np.allclose(b[:2], 0.0)
    assert np.allclose(divergence_fd(a).values, 0.0)
    grad = VectorField3(g, np.stack([x, 2 * y, 3 * z]))
    assert np.allclose(divergence_fd(grad).values, 6.0)
    with pytest.raises(ValueError):
        curl_fd(VectorField3.zeros(Grid3(4, 4, 2)))
