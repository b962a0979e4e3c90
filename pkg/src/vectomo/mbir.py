"""MAP reconstruction with the q-GGMRF prior, solved by ICD.

Both solvers minimise ``J(x) + sum_bonds b_ij rho(x_i - x_j)`` where the data term
``J(x) = 1/2 <e, W e>``, ``e = y - H x``, uses a positive semi-definite weighting
``W``.  The default ``W`` is the ramp filter along each profile with unit weight per
distinct view, so ``H^T W e`` is (up to the constant ``K/pi``) the filtered back
projection of the error: the gradient step is the FBP correction of the scalar
algorithm and its ramp-filtered analogue for the two tilt series.

One outer iteration is a majorise-minimise step.  ``J`` is bounded above around the
current estimate ``x_k`` by ``L/2 |x - z|^2 + const`` with

    z = x_k + H^T W e_k / L,      L >= lambda_max(H^T W H),

and every pixel update of the ICD sweep then minimises the symmetric-bound
surrogate of that bound, giving the closed form

    x_i = (L z_i + 2 sum_j b~_ij x_j) / (L + 2 sum_j b~_ij).

With ``L = 1`` this is the unit-curvature update.  The error sinogram is refreshed
once per outer iteration, so the cost is guaranteed not to increase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .analytic import FilterSpec, fbp2d, ramp_filter, trapezoid_weights, vfet_reconstruct, vfet_series
from .fields import Grid3, Image2, VectorField3
from .prior import NeighborWeights, QggmrfParams, btilde_fast, neighbor_weights, prior_energy
from .projector import (ProjectionSet, Sinogram, TiltSeries, backproject_scalar_2d, backproject_stack,
                        project_scalar_2d, project_stack)

INITS = ("zero", "fbp", "vfet")
UPDATES = ("gradient", "vfet")
WEIGHTINGS = ("ramp", "identity")


@dataclass(frozen=True)
class ReconConfig:
    prior: QggmrfParams = field(default_factory=QggmrfParams)
    max_iters: int = 35
    cost_tol: float = 1e-6
    init: str = "fbp"
    deterministic: bool = True
    # ICD sweeps per refresh of the error sinogram
    inner_sweeps: int = 1
    # Lipschitz constant of the data term; estimated by power iteration when None
    lipschitz: float | None = None
    lipschitz_margin: float = 1.05
    # "vfet" replaces the gradient step by the gauge-filtered error (3D only)
    update: str = "gradient"
    # include |k| in the gauge kernels of the "vfet" update
    ramp: bool = True
    weighting: str = "ramp"
    # weight of the Coulomb-gauge penalty (vector reconstructions only)
    gauge: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not self.cost_tol >= 0:
            raise ValueError("cost_tol must be >= 0")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.update not in UPDATES:
            raise ValueError(f"update must be one of {UPDATES}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if int(self.inner_sweeps) != self.inner_sweeps or self.inner_sweeps < 1:
            raise ValueError("inner_sweeps must be a positive integer")
        if self.lipschitz is not None and not self.lipschitz > 0:
            raise ValueError("lipschitz must be positive")
        if not self.gauge >= 0:
            raise ValueError("gauge must be >= 0")
        if not self.lipschitz_margin >= 1:
            raise ValueError("lipschitz_margin must be >= 1")


@dataclass
class CostTrace:
    """Cost after each outer iteration; ``initial`` is the cost of the starting point."""

    costs: list = field(default_factory=list)
    converged: bool = False
    initial: float = float("nan")
    lipschitz: float = float("nan")

    @property
    def iterations_run(self) -> int:
        return len(self.costs)

    def append(self, c: float) -> None:
        if not np.isfinite(c):
            raise FloatingPointError(f"non-finite cost at iteration {len(self.costs) + 1}")
        self.costs.append(float(c))

    def is_monotone(self, rtol: float = 1e-9) -> bool:
        seq = [self.initial] + self.costs if np.isfinite(self.initial) else list(self.costs)
        return all(b <= a + rtol * abs(a) for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------- data models

class ScalarModel:
    """2D parallel-beam model; ``W`` is the ramp filter times :func:`view_weights`, or ``I``."""

    def __init__(self, angles, n: int, weighting: str = "ramp"):
        if weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        self.angles = np.asarray(angles, dtype=float)
        self.n = int(n)
        self.weighting = weighting
        self._w = view_weights(self.angles)[:, None]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return project_scalar_2d(x, self.angles)

    def adjoint(self, e: np.ndarray) -> np.ndarray:
        return backproject_scalar_2d(e, self.angles, self.n)

    def weight(self, e: np.ndarray) -> np.ndarray:
        if self.weighting == "identity":
            return e
        return ramp_filter(e, FilterSpec()) * self._w

    def data_cost(self, e: np.ndarray) -> float:
        return 0.5 * float(np.sum(e * self.weight(e)))

    def gradient(self, e: np.ndarray) -> np.ndarray:
        """``H^T W e`` (the negative gradient of the data term)."""
        return self.adjoint(self.weight(e))

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.gradient(self.forward(x))

    def quad_cost(self, x, e) -> float:
        return self.data_cost(e)

    def descent(self, x, e) -> np.ndarray:
        return self.gradient(e)

    def key(self):
        return ("scalar", self.n, _angles_key(self.angles), self.weighting)


class SpectralDivergence:
    """Periodic spectral divergence of ``(3, nz, ny, nx)`` fields and its exact adjoint.

    Nyquist bins are dropped so both maps are real.
    """

    def __init__(self, shape):
        nz, ny, nx = shape
        self.shape = tuple(shape)

        def k(n, real=False):
            f = (np.fft.rfftfreq(n) if real else np.fft.fftfreq(n)) * 2 * np.pi
            if n % 2 == 0:
                f[np.isclose(np.abs(f), np.pi)] = 0
            return f
        self.k = (k(nx, True)[None, None, :], k(ny)[None, :, None], k(nz)[:, None, None])

    def div(self, a: np.ndarray) -> np.ndarray:
        spec = sum(1j * self.k[c] * np.fft.rfftn(a[c]) for c in range(3))
        return np.fft.irfftn(spec, s=self.shape, axes=(0, 1, 2))

    def adjoint(self, d: np.ndarray) -> np.ndarray:
        spec = np.fft.rfftn(d)
        return np.stack([np.fft.irfftn(-1j * self.k[c] * spec, s=self.shape, axes=(0, 1, 2)) for c in range(3)])


class VectorModel:
    """Both tilt series; ``W`` is the ramp along each profile times :func:`view_weights`."""

    def __init__(self, grid: Grid3, angles_x, angles_y, weighting: str = "ramp", gauge: float = 0.0):
        if weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if not gauge >= 0:
            raise ValueError("gauge weight must be >= 0")
        self.grid = grid
        self.gauge = float(gauge)
        self._div = SpectralDivergence(grid.shape) if gauge > 0 else None
        self.angles = (np.asarray(angles_x, dtype=float), np.asarray(angles_y, dtype=float))
        self.weighting = weighting
        self._w = tuple(view_weights(a) for a in self.angles)

    def forward(self, a: np.ndarray):
        f = VectorField3(self.grid, a) if not isinstance(a, VectorField3) else a
        return (project_stack(f, "x", self.angles[0]), project_stack(f, "y", self.angles[1]))

    def adjoint(self, e) -> np.ndarray:
        return (backproject_stack(e[0], self.grid, "x", self.angles[0])
                + backproject_stack(e[1], self.grid, "y", self.angles[1]))

    def weight(self, e):
        if self.weighting == "identity":
            return e
        # x series profiles run along v (rows), y series along u (columns)
        ex = ramp_filter(np.swapaxes(e[0], -1, -2)).swapaxes(-1, -2) * self._w[0][:, None, None]
        ey = ramp_filter(e[1]) * self._w[1][:, None, None]
        return (ex, ey)

    def data_cost(self, e) -> float:
        we = self.weight(e)
        return 0.5 * float(np.sum(e[0] * we[0]) + np.sum(e[1] * we[1]))

    def gradient(self, e) -> np.ndarray:
        return self.adjoint(self.weight(e))

    def _gauge_normal(self, x):
        return self.gauge * self._div.adjoint(self._div.div(x))

    def normal(self, x: np.ndarray) -> np.ndarray:
        out = self.gradient(self.forward(x))
        if self._div is not None:
            out += self._gauge_normal(x)
        return out

    def quad_cost(self, x, e) -> float:
        """Data term plus the Coulomb-gauge penalty ``gauge/2 * |div x|^2``."""
        c = self.data_cost(e)
        if self._div is not None:
            c += 0.5 * self.gauge * float(np.sum(self._div.div(x) ** 2))
        return c

    def descent(self, x, e) -> np.ndarray:
        g = self.gradient(e)
        if self._div is not None:
            g -= self._gauge_normal(x)
        return g

    def key(self):
        return ("vector", self.grid.shape, _angles_key(self.angles), self.weighting, self.gauge)


def view_weights(angles) -> np.ndarray:
    """Per-view data weight: the angular quadrature weight over the nominal step.

    Interior views of a uniform series get 1; the two ends get 1/2, which for a
    full +-90 degree series counts the coincident end views once in total.
    """
    a = np.asarray(angles, dtype=float)
    if a.size < 2:
        return np.ones(a.size)
    step = np.deg2rad(a[-1] - a[0]) / (a.size - 1)
    return trapezoid_weights(a) / step


def _residual(y, hx):
    if isinstance(y, tuple):
        return (y[0] - hx[0], y[1] - hx[1])
    return y - hx


def power_iteration(normal, shape, iters: int = 30, seed: int | None = 0) -> float:
    """Largest eigenvalue of the symmetric PSD operator ``normal``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = normal(v)
        lam = float(np.vdot(v, w).real)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
    return max(lam, float(np.linalg.norm(normal(v))))


# ---------------------------------------------------------------- ICD kernels

def _stencil(weights: NeighborWeights, shape):
    offs = weights.offsets
    w = weights.weights
    norm = weights.normalizers(shape)
    return offs, w, norm


def _prior_args(params: QggmrfParams):
    return (float(params.p), float(params.q), float(params.tsig), float(params.tsig ** (params.q - params.p)),
            float(params.sigma_x ** params.p), float(params.zero_limit()))


@numba.njit(cache=True)
def _update_pixel2d(x, zi, j, i, lam, offs, wts, norm, p, q, tsig, tq, sigp, limit):
    ny, nx = x.shape
    xi = x[j, i]
    num = 0.0
    den = 0.0
    for k in range(offs.shape[0]):
        jj = j + offs[k, 0]
        ii = i + offs[k, 1]
        if jj < 0 or jj >= ny or ii < 0 or ii >= nx:
            continue
        w = 0.5 * (wts[k] / norm[j, i] + wts[k] / norm[jj, ii])
        bt = w * btilde_fast(abs(xi - x[jj, ii]), p, q, tsig, tq, sigp, limit)
        num += bt * x[jj, ii]
        den += bt
    return (lam * zi + 2.0 * num) / (lam + 2.0 * den)


@numba.njit(cache=True)
def _sweep2d(x, z, lam, offs, wts, norm, p, q, tsig, tq, sigp, limit):
    ny, nx = x.shape
    for j in range(ny):
        for i in range(nx):
            x[j, i] = _update_pixel2d(x, z[j, i], j, i, lam, offs, wts, norm, p, q, tsig, tq, sigp, limit)


@numba.njit(cache=True)
def _update_voxel3d(x, zi, kz, j, i, lam, offs, wts, norm, p, q, tsig, tq, sigp, limit):
    nz, ny, nx = x.shape
    xi = x[kz, j, i]
    num = 0.0
    den = 0.0
    for k in range(offs.shape[0]):
        kk = kz + offs[k, 0]
        jj = j + offs[k, 1]
        ii = i + offs[k, 2]
        if kk < 0 or kk >= nz or jj < 0 or jj >= ny or ii < 0 or ii >= nx:
            continue
        w = 0.5 * (wts[k] / norm[kz, j, i] + wts[k] / norm[kk, jj, ii])
        bt = w * btilde_fast(abs(xi - x[kk, jj, ii]), p, q, tsig, tq, sigp, limit)
        num += bt * x[kk, jj, ii]
        den += bt
    return (lam * zi + 2.0 * num) / (lam + 2.0 * den)


@numba.njit(cache=True)
def _sweep3d(a, z, lam, offs, wts, norm, p, q, tsig, tq, sigp, limit):
    nc, nz, ny, nx = a.shape
    for kz in range(nz):
        for j in range(ny):
            for i in range(nx):
                # components are only coupled through the data term, so each one
                # reads its own (pre-update) neighbourhood
                for c in range(nc):
                    a[c, kz, j, i] = _update_voxel3d(a[c], z[c, kz, j, i], kz, j, i, lam, offs, wts, norm,
                                                     p, q, tsig, tq, sigp, limit)


def icd_update_scalar(index, v_i: float, u: np.ndarray, weights: NeighborWeights,
                      params: QggmrfParams, lipschitz: float = 1.0) -> float:
    """Closed-form update of pixel ``index = (row, col)`` anchored at ``v_i``."""
    u = np.asarray(u, dtype=float)
    offs, w, norm = _stencil(weights, u.shape)
    j, i = index
    return float(_update_pixel2d(u, float(v_i), int(j), int(i), float(lipschitz), offs, w, norm,
                                 *_prior_args(params)))


def icd_update_vector(index, f, x: VectorField3 | np.ndarray, weights: NeighborWeights,
                      params: QggmrfParams, lipschitz: float = 1.0) -> tuple[float, float, float]:
    """The three component updates of voxel ``index = (z, y, x)`` from the same state."""
    data = x.data if isinstance(x, VectorField3) else np.asarray(x, dtype=float)
    offs, w, norm = _stencil(weights, data.shape[1:])
    kz, j, i = (int(v) for v in index)
    args = _prior_args(params)
    return tuple(float(_update_voxel3d(data[c], float(f[c]), kz, j, i, float(lipschitz), offs, w, norm, *args))
                 for c in range(3))


def icd_sweep(x: np.ndarray, z: np.ndarray, weights: NeighborWeights, params: QggmrfParams,
              lipschitz: float = 1.0) -> np.ndarray:
    """One raster-order sweep, in place, over a 2D image or a ``(3, nz, ny, nx)`` field."""
    args = _prior_args(params)
    lam = float(lipschitz)
    if x.ndim == 2:
        offs, w, norm = _stencil(weights, x.shape)
        _sweep2d(x, z, lam, offs, w, norm, *args)
    elif x.ndim == 4:
        offs, w, norm = _stencil(weights, x.shape[1:])
        _sweep3d(x, z, lam, offs, w, norm, *args)
    else:
        raise ValueError(f"expected a 2D image or a (3, nz, ny, nx) field, got shape {x.shape}")
    return x


# ---------------------------------------------------------------- costs

def _prior_total(x: np.ndarray, weights: NeighborWeights, params: QggmrfParams) -> float:
    if x.ndim == 4:
        return sum(prior_energy(x[c], weights, params) for c in range(3))
    return prior_energy(x, weights, params)


def map_cost(x, data, weights: NeighborWeights, params: QggmrfParams, model=None) -> float:
    """MAP objective: weighted data misfit plus the prior over every bond.

    ``data`` is a :class:`Sinogram` (2D) or :class:`ProjectionSet` (3D); by default the
    ramp-weighted model matching the solvers is used.
    """
    if isinstance(x, (Image2, VectorField3)):
        x = x.values if isinstance(x, Image2) else x.data
    x = np.asarray(x, dtype=float)
    if model is None:
        model = _model_for(data, x.shape, "ramp")
    y = _data_arrays(data)
    return model.quad_cost(x, _residual(y, model.forward(x))) + _prior_total(x, weights, params)


def _data_arrays(data, scale: float = 1.0):
    if isinstance(data, Sinogram):
        return data.data
    if isinstance(data, ProjectionSet):
        return (data.sx.stack / scale, data.sy.stack / scale)
    raise TypeError(f"unsupported data type {type(data).__name__}")


def _model_for(data, shape, weighting):
    if isinstance(data, Sinogram):
        return ScalarModel(data.angles, data.n, weighting)
    nz, ny, nx = shape[-3:]
    return VectorModel(Grid3(nx, ny, nz, data.sx.pitch), data.sx.angles, data.sy.angles, weighting)


# ---------------------------------------------------------------- drivers

_LIPSCHITZ_CACHE: dict = {}


def _angles_key(angles):
    if isinstance(angles, tuple):
        return tuple(tuple(float(v) for v in a) for a in angles)
    return tuple(float(v) for v in angles)


def _estimate_lipschitz(model, shape, config: ReconConfig) -> float:
    """Margin times the power-iteration estimate; cached per geometry when the seed is pinned."""
    if config.lipschitz is not None:
        return float(config.lipschitz)
    seed = config.seed if config.deterministic else None
    key = model.key() + (seed,)
    if seed is None or key not in _LIPSCHITZ_CACHE:
        _LIPSCHITZ_CACHE[key] = power_iteration(model.normal, shape, seed=seed)
    return config.lipschitz_margin * _LIPSCHITZ_CACHE[key]


def _run(x, y, model, step, config: ReconConfig, weights, lam, callback=None):
    params = config.prior
    trace = CostTrace(lipschitz=lam)
    e = _residual(y, model.forward(x))
    prev = model.quad_cost(x, e) + _prior_total(x, weights, params)
    trace.initial = prev
    for it in range(int(config.max_iters)):
        z = x + step(x, e)
        for _ in range(int(config.inner_sweeps)):
            icd_sweep(x, z, weights, params, lam)
        e = _residual(y, model.forward(x))
        cost = model.quad_cost(x, e) + _prior_total(x, weights, params)
        trace.append(cost)
        if callback is not None:
            callback(it, x, cost)
        if prev - cost <= config.cost_tol * abs(prev):
            trace.converged = True
            break
        prev = cost
    return x, trace


def mbir2d(sino: Sinogram, config: ReconConfig = ReconConfig(), callback=None) -> tuple[Image2, CostTrace]:
    """Scalar MBIR of a sinogram; starts from the FBP unless ``config.init == 'zero'``."""
    if not isinstance(sino, Sinogram):
        raise TypeError("mbir2d expects a Sinogram")
    if config.init == "vfet":
        raise ValueError("init='vfet' applies to vector reconstructions only")
    if config.update != "gradient":
        raise ValueError("the 'vfet' update applies to vector reconstructions only")
    n = sino.n
    model = ScalarModel(sino.angles, n, config.weighting)
    x = fbp2d(sino).values.copy() if config.init == "fbp" else np.zeros((n, n))
    lam = _estimate_lipschitz(model, (n, n), config)
    weights = neighbor_weights(2)
    x, trace = _run(x, sino.data, model, lambda x_, e: model.descent(x_, e) / lam, config, weights, lam, callback)
    return Image2(x, 1.0), trace


def mbir3d(ps: ProjectionSet, config: ReconConfig = ReconConfig(init="vfet"), grid: Grid3 | None = None,
           scale: float = 1.0, callback=None) -> tuple[VectorField3, CostTrace]:
    """Vector MBIR from both tilt series; ``scale`` as in :func:`vfet_reconstruct`.

    Any non-zero ``init`` starts from VFET, the vector counterpart of FBP.
    """
    if not isinstance(ps, ProjectionSet):
        raise TypeError("mbir3d expects a ProjectionSet")
    if ps.sx.shape != ps.sy.shape or ps.sx.pitch != ps.sy.pitch:
        raise ValueError("x and y tilt series must share image shape and pitch")
    if grid is None:
        nv, nu = ps.sx.shape
        grid = Grid3(nu, nv, max(nu, nv), ps.sx.pitch)
    if (grid.ny, grid.nx) != ps.sx.shape:
        raise ValueError(f"grid {grid.shape} does not match images {ps.sx.shape}")
    shape = (3,) + grid.shape
    model = VectorModel(grid, ps.sx.angles, ps.sy.angles, config.weighting, config.gauge)
    y = _data_arrays(ps, scale)
    if config.init != "zero":
        x = vfet_reconstruct(ps, grid, scale=scale).data.copy()
    else:
        x = np.zeros(shape)
    weights = neighbor_weights(3)
    if config.update == "vfet":
        # gauge-filtered error images replace the gradient; unit step
        lam = 1.0 if config.lipschitz is None else float(config.lipschitz)

        def step(x_, e):
            sx = TiltSeries("x", ps.sx.angles, e[0], grid.pitch)
            sy = TiltSeries("y", ps.sy.angles, e[1], grid.pitch)
            return (vfet_series(sx, grid, ramp=config.ramp) + vfet_series(sy, grid, ramp=config.ramp)) / lam
    else:
        lam = _estimate_lipschitz(model, shape, config)

        def step(x_, e):
            return model.descent(x_, e) / lam
    x, trace = _run(x, y, model, step, config, weights, lam, callback)
    return VectorField3(grid, x), trace

