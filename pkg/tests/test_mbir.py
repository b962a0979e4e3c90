import numpy as np
import pytest

from conftest import energy_oracle
from vectomo import app
from vectomo.fields import Grid3, VectorField3
from vectomo.mbir import (CostTrace, ReconConfig, ScalarModel, SpectralDivergence, VectorModel, icd_sweep,
                          icd_update_scalar, icd_update_vector, map_cost, mbir2d, mbir3d, power_iteration,
                          view_weights)
from vectomo.mbir import _run as run_outer
from vectomo.phantom import shepp_logan, vector_potential
from vectomo.prior import QggmrfParams, neighbor_weights, prior_energy
from vectomo.projector import ProjectionSet, Sinogram, TiltSeries, project_set, sinogram, tilt_angles

PRM = QggmrfParams(p=1.1, q=2.0, t=0.001, sigma_x=0.8)


def _ramlak_matrix(n):
    """Band-limited Ram-Lak kernel as an explicit (linear, unwrapped) convolution matrix."""
    d = np.subtract.outer(np.arange(n), np.arange(n))
    h = np.where(d % 2 != 0, -1.0 / (np.pi * np.where(d == 0, 1, d)) ** 2, 0.0)
    h[d == 0] = 0.25
    return h


def _brute_data_term(e_views, ang, profile_axis):
    """0.5 * sum over views, profiles and sample pairs of w_view * e_i h(i - j) e_j."""
    w = view_weights(ang)
    total = 0.0
    for k, img in enumerate(e_views):
        rows = np.atleast_2d(np.moveaxis(img, profile_axis, -1))
        h = _ramlak_matrix(rows.shape[-1])
        for prof in rows.reshape(-1, rows.shape[-1]):
            for i in range(prof.size):
                for j in range(prof.size):
                    total += 0.5 * w[k] * prof[i] * h[i, j] * prof[j]
    return total


# ---------------------------------------------------------------- config and bookkeeping

@pytest.mark.parametrize("kw", [dict(max_iters=0), dict(cost_tol=-1), dict(init="sirt"), dict(update="x"),
                                dict(weighting="noise"), dict(inner_sweeps=0), dict(lipschitz=0.0),
                                dict(gauge=-1.0), dict(lipschitz_margin=0.5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ReconConfig(**kw)


def test_cost_trace_contract():
    t = CostTrace()
    t.append(3.0)
    t.append(2.0)
    assert t.iterations_run == len(t.costs) == 2
    assert t.is_monotone()
    t.append(2.5)
    assert not t.is_monotone()
    with pytest.raises(FloatingPointError):
        t.append(np.nan)


def test_view_weights():
    w = view_weights(tilt_angles(90, 2))
    assert w[0] == pytest.approx(0.5) and w[-1] == pytest.approx(0.5)
    np.testing.assert_allclose(w[1:-1], 1.0)


def test_spectral_divergence_adjoint(rng):
    shape = (6, 8, 10)
    d = SpectralDivergence(shape)
    a = rng.standard_normal((3,) + shape)
    s = rng.standard_normal(shape)
    assert np.vdot(d.div(a), s) == pytest.approx(np.vdot(a, d.adjoint(s)), rel=1e-10)


def test_power_iteration_bounds_rayleigh_quotients(rng):
    model = ScalarModel(tilt_angles(90, 10), 24)
    lam = power_iteration(model.normal, (24, 24))
    for _ in range(5):
        v = rng.standard_normal((24, 24))
        assert np.vdot(v, model.normal(v)) / np.vdot(v, v) <= lam * (1 + 1e-6)


# ---------------------------------------------------------------- cost

def test_map_cost_zero():
    ang = tilt_angles(90, 30)
    assert map_cost(np.zeros((8, 8)), Sinogram(ang, np.zeros((ang.size, 8))), neighbor_weights(2), PRM) == 0.0


def test_map_cost_constant_image_is_data_term_only(rng):
    ang = tilt_angles(90, 30)
    sino = Sinogram(ang, rng.standard_normal((ang.size, 8)))
    x = np.full((8, 8), 0.3)
    model = ScalarModel(ang, 8)
    expected = model.data_cost(sino.data - model.forward(x))
    assert map_cost(x, sino, neighbor_weights(2), PRM) == pytest.approx(expected, rel=1e-14)


def test_map_cost_scalar_brute_force(rng):
    n = 8
    ang = tilt_angles(90, 20)
    x = rng.standard_normal((n, n))
    sino = Sinogram(ang, rng.standard_normal((ang.size, n)))
    model = ScalarModel(ang, n)
    # forward as an explicit matrix built column by column
    cols = [model.forward(np.eye(n * n)[c].reshape(n, n)).ravel() for c in range(n * n)]
    hx = np.column_stack(cols) @ x.ravel()
    e = sino.data - hx.reshape(ang.size, n)
    expected = _brute_data_term(e, ang, -1) + energy_oracle(x, neighbor_weights(2), PRM)
    assert map_cost(x, sino, neighbor_weights(2), PRM) == pytest.approx(expected, rel=1e-10)


def test_map_cost_vector_brute_force(rng):
    g = Grid3(8, 8, 8)
    ang = tilt_angles(60, 30)
    x = rng.standard_normal((3,) + g.shape)
    ps = ProjectionSet(TiltSeries("x", ang, rng.standard_normal((ang.size, 8, 8))),
                       TiltSeries("y", ang, rng.standard_normal((ang.size, 8, 8))))
    model = VectorModel(g, ang, ang)
    size = x.size
    hx = [np.zeros(ang.size * 64), np.zeros(ang.size * 64)]
    for c in range(size):
        unit = np.zeros(size)
        unit[c] = 1.0
        fx, fy = model.forward(unit.reshape(x.shape))
        hx[0] += fx.ravel() * x.flat[c]
        hx[1] += fy.ravel() * x.flat[c]
    ex = ps.sx.stack - hx[0].reshape(ps.sx.stack.shape)
    ey = ps.sy.stack - hx[1].reshape(ps.sy.stack.shape)
    w = neighbor_weights(3)
    expected = (_brute_data_term(ex, ang, -2) + _brute_data_term(ey, ang, -1)
                + sum(energy_oracle(x[c], w, PRM) for c in range(3)))
    assert map_cost(VectorField3(g, x), ps, w, PRM) == pytest.approx(expected, rel=1e-10)


# ---------------------------------------------------------------- ICD updates

def test_icd_scalar_zero_and_consensus():
    w = neighbor_weights(2)
    assert icd_update_scalar((3, 4), 0.0, np.zeros((8, 8)), w, PRM) == 0.0
    assert icd_update_scalar((0, 0), 1.7, np.full((8, 8), 1.7), w, PRM) == pytest.approx(1.7, abs=1e-15)
    assert icd_update_scalar((5, 2), -2.0, np.full((8, 8), -2.0), w, PRM, lipschitz=30.0) == pytest.approx(-2.0)


def _local_objective(x, z, lam, w, prm):
    return 0.5 * lam * float(np.sum((x - z) ** 2)) + (
        prior_energy(x, w, prm) if x.ndim == 2 else sum(prior_energy(x[c], w, prm) for c in range(3)))


@pytest.mark.parametrize("seed", range(3))
def test_icd_scalar_update_does_not_increase_objective(seed):
    r = np.random.default_rng(seed)
    w = neighbor_weights(2)
    for lam in (1.0, 50.0):
        u = r.standard_normal((16, 16))
        z = u + 0.3 * r.standard_normal((16, 16))
        for _ in range(40):
            j, i = r.integers(0, 16, 2)
            before = _local_objective(u, z, lam, w, PRM)
            u[j, i] = icd_update_scalar((j, i), z[j, i], u, w, PRM, lipschitz=lam)
            assert _local_objective(u, z, lam, w, PRM) <= before * (1 + 1e-12)


def test_icd_vector_zero_and_consensus():
    w = neighbor_weights(3)
    g = Grid3(5, 5, 5)
    assert icd_update_vector((2, 2, 2), (0.0, 0.0, 0.0), VectorField3.zeros(g), w, PRM) == (0.0, 0.0, 0.0)
    vals = np.array([0.5, -1.0, 2.0])
    field = VectorField3(g, np.broadcast_to(vals[:, None, None, None], (3,) + g.shape).copy())
    out = icd_update_vector((0, 4, 1), vals, field, w, PRM)
    np.testing.assert_allclose(out, vals, atol=1e-15)


def test_icd_vector_uses_pre_update_state(rng):
    w = neighbor_weights(3)
    x = rng.standard_normal((3, 6, 6, 6))
    f = rng.standard_normal(3)
    out = icd_update_vector((2, 3, 1), f, x, w, PRM)
    # each component only depends on its own neighbourhood
    for c in range(3):
        y = x.copy()
        y[[k for k in range(3) if k != c]] = 0.0
        assert icd_update_vector((2, 3, 1), f, y, w, PRM)[c] == out[c]


def test_icd_sweep_decreases_vector_objective(rng):
    w = neighbor_weights(3)
    x = rng.standard_normal((3, 16, 16, 16))
    z = x + 0.2 * rng.standard_normal(x.shape)
    prm = QggmrfParams(p=1.001, q=2.0, t=0.01, sigma_x=0.8)
    before = _local_objective(x, z, 20.0, w, prm)
    icd_sweep(x, z, w, prm, 20.0)
    assert _local_objective(x, z, 20.0, w, prm) < before


def test_icd_sweep_rejects_bad_rank():
    with pytest.raises(ValueError):
        icd_sweep(np.zeros((4, 4, 4)), np.zeros((4, 4, 4)), neighbor_weights(3), PRM)


# ---------------------------------------------------------------- mbir2d

def test_mbir2d_zero_data_zero_init():
    ang = tilt_angles(90, 10)
    img, trace = mbir2d(Sinogram(ang, np.zeros((ang.size, 16))), ReconConfig(prior=PRM, init="zero", max_iters=4,
                                                                             cost_tol=0.0))
    assert np.all(img.values == 0)
    # no decrease at all counts as converged
    assert trace.converged and trace.initial == 0.0 and trace.costs == [0.0]


@pytest.mark.parametrize("seed", range(3))
def test_mbir2d_monotone(seed):
    r = np.random.default_rng(seed)
    truth = shepp_logan(64).values
    sino = sinogram(truth, tilt_angles(90, 3))
    data = Sinogram(sino.angles, sino.data + 0.05 * r.standard_normal(sino.data.shape))
    init = ("fbp", "zero", "fbp")[seed]
    _, trace = mbir2d(data, ReconConfig(prior=PRM, init=init, max_iters=12, cost_tol=0.0, seed=seed))
    assert trace.iterations_run == 12
    assert trace.is_monotone(rtol=1e-9)
    assert trace.costs[-1] < trace.initial


def test_outer_iteration_fixed_point():
    n = 16
    ang = tilt_angles(90, 6)
    model = ScalarModel(ang, n)
    x = np.full((n, n), 0.4)
    y = model.forward(x)
    start = x.copy()
    lam = 50.0
    out, _ = run_outer(x, y, model, lambda x_, e: model.descent(x_, e) / lam,
                       ReconConfig(prior=PRM, max_iters=1, cost_tol=0.0), neighbor_weights(2), lam)
    assert np.max(np.abs(out - start)) <= 1e-12


def test_mbir2d_deterministic():
    sino = sinogram(shepp_logan(32).values, tilt_angles(90, 6))
    cfg = ReconConfig(prior=PRM, max_iters=5, cost_tol=0.0, lipschitz=None)
    a, ta = mbir2d(sino, cfg)
    b, tb = mbir2d(sino, cfg)
    assert ta.costs == tb.costs
    assert np.array_equal(a.values, b.values)


def test_mbir2d_weak_prior_approaches_least_squares():
    truth = shepp_logan(64).values
    sino = sinogram(truth, tilt_angles(90, 3))
    base = dict(max_iters=10, cost_tol=0.0)
    ls, _ = mbir2d(sino, ReconConfig(prior=QggmrfParams(1.1, 2.0, 0.001, 1e9), **base))
    gaps = []
    for sigma in (0.8, 8.0, 80.0):
        img, _ = mbir2d(sino, ReconConfig(prior=QggmrfParams(1.1, 2.0, 0.001, sigma), **base))
        gaps.append(np.sqrt(np.mean((img.values - ls.values) ** 2)))
    assert gaps[0] > gaps[1] > gaps[2]


def test_mbir2d_rejects_vector_options():
    sino = sinogram(np.zeros((8, 8)), tilt_angles(90, 30))
    with pytest.raises(ValueError):
        mbir2d(sino, ReconConfig(init="vfet"))
    with pytest.raises(ValueError):
        mbir2d(sino, ReconConfig(update="vfet"))
    with pytest.raises(TypeError):
        mbir2d(np.zeros((7, 8)))


def test_mbir2d_converged_flag():
    sino = sinogram(shepp_logan(32).values, tilt_angles(90, 6))
    _, trace = mbir2d(sino, ReconConfig(prior=PRM, max_iters=200, cost_tol=1e-3))
    assert trace.converged and trace.iterations_run < 200
    _, trace = mbir2d(sino, ReconConfig(prior=PRM, max_iters=2, cost_tol=0.0))
    assert not trace.converged and trace.iterations_run == 2


# ---------------------------------------------------------------- mbir3d

@pytest.fixture(scope="module")
def prism32():
    a = vector_potential(app.phantom_config("prism", 32))
    return a, project_set(a, tilt_angles(70, 5))


def test_mbir3d_zero_fixed_point():
    g = Grid3(12, 12, 12)
    ang = tilt_angles(70, 35)
    z = np.zeros((ang.size, 12, 12))
    ps = ProjectionSet(TiltSeries("x", ang, z), TiltSeries("y", ang, z))
    out, trace = mbir3d(ps, ReconConfig(init="zero", max_iters=3, cost_tol=0.0, gauge=1.0), g)
    assert np.all(out.data == 0)
    assert trace.initial == 0.0 and set(trace.costs) == {0.0}


@pytest.mark.parametrize("gauge", [0.0, 1.0])
def test_mbir3d_monotone(prism32, gauge):
    a, ps = prism32
    cfg = ReconConfig(prior=app.VECTOR_PRIOR, init="vfet", max_iters=6, cost_tol=0.0, gauge=gauge)
    _, trace = mbir3d(ps, cfg, a.grid)
    assert trace.is_monotone(rtol=1e-9)
    assert trace.costs[-1] < trace.initial


def test_mbir3d_map_cost_matches_trace(prism32):
    a, ps = prism32
    cfg = ReconConfig(prior=app.VECTOR_PRIOR, init="vfet", max_iters=2, cost_tol=0.0)
    out, trace = mbir3d(ps, cfg, a.grid)
    assert map_cost(out, ps, neighbor_weights(3), cfg.prior) == pytest.approx(trace.costs[-1], rel=1e-10)


def test_mbir3d_deterministic(prism32):
    a, ps = prism32
    cfg = ReconConfig(prior=app.VECTOR_PRIOR, init="vfet", max_iters=2, cost_tol=0.0, gauge=1.0)
    x1, t1 = mbir3d(ps, cfg, a.grid)
    x2, t2 = mbir3d(ps, cfg, a.grid)
    assert t1.costs == t2.costs and np.array_equal(x1.data, x2.data)


def test_mbir3d_improves_on_vfet(prism32):
    from vectomo.analytic import vfet_reconstruct
    from vectomo.metrics import nrmse
    a, ps = prism32
    cfg = ReconConfig(prior=app.VECTOR_PRIOR, init="vfet", max_iters=10, cost_tol=0.0, gauge=app.VECTOR_GAUGE)
    out, _ = mbir3d(ps, cfg, a.grid)
    assert nrmse(out, a) < nrmse(vfet_reconstruct(ps, a.grid), a)


def test_mbir3d_geometry_errors(prism32):
    a, ps = prism32
    with pytest.raises(ValueError):
        mbir3d(ps, ReconConfig(max_iters=1), Grid3(16, 16, 16))
    with pytest.raises(TypeError):
        mbir3d(ps.sx)
