"""q-GGMRF potential, its symmetric-bound surrogate and the neighbourhood tables.

The potential is

    rho(d) = |d|^p / (p s^p) * u / (1 + u),   u = |d / (T s)|^(q - p)

with ``s = sigma_x``.  The surrogate replacing ``b * rho(d)`` around the current
difference ``d'`` is the quadratic ``b~ * d^2`` (plus a constant), where
``b~ = b * rho'(d') / (2 d')``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numba
import numpy as np

# below this |d'| the surrogate coefficient uses its d' -> 0 limit
ZERO_GUARD = 1e-12


@dataclass(frozen=True)
class QggmrfParams:
    p: float = 1.1
    q: float = 2.0
    t: float = 0.001
    sigma_x: float = 0.8

    def __post_init__(self):
        if not (1.0 <= self.p <= self.q <= 2.0):
            raise ValueError(f"need 1 <= p <= q <= 2, got p={self.p}, q={self.q}")
        if not self.t > 0:
            raise ValueError("T must be positive")
        if not self.sigma_x > 0:
            raise ValueError("sigma_x must be positive")

    @property
    def tsig(self) -> float:
        return self.t * self.sigma_x

    def zero_limit(self) -> float:
        """``rho'(d)/d`` as ``d -> 0``, i.e. ``rho''(0)``."""
        p, q, s = self.p, self.q, self.sigma_x
        if q == p:
            # u == 1 and rho = |d|^p / (2 p s^p): finite curvature only for p = 2,
            # otherwise take the value at the guard so updates stay finite
            return 1.0 / (2 * s ** 2) if p == 2 else ZERO_GUARD ** (p - 2) / (2 * s ** p)
        return q / (p * s ** p * self.tsig ** (q - p))


def _u(delta, params: QggmrfParams):
    return np.abs(np.asarray(delta, dtype=float) / params.tsig) ** (params.q - params.p)


def rho(delta, params: QggmrfParams):
    """Potential ``rho(delta)``; even, ``rho(0) = 0``."""
    d = np.abs(np.asarray(delta, dtype=float))
    u = _u(d, params)
    return d ** params.p / (params.p * params.sigma_x ** params.p) * u / (1 + u)


def rho_prime(delta, params: QggmrfParams):
    d = np.asarray(delta, dtype=float)
    a = np.abs(d)
    u = _u(a, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        mag = a ** (params.p - 1) / params.sigma_x ** params.p * u * (params.q / params.p + u) / (1 + u) ** 2
    return np.where(a == 0, 0.0, np.sign(d) * mag)


def rho_prime_over_delta(delta, params: QggmrfParams):
    """``rho'(d)/d`` with the ``d -> 0`` limit filled in below :data:`ZERO_GUARD`."""
    a = np.abs(np.asarray(delta, dtype=float))
    small = a < ZERO_GUARD
    safe = np.where(small, 1.0, a)
    u = _u(safe, params)
    val = safe ** (params.p - 2) / params.sigma_x ** params.p * u * (params.q / params.p + u) / (1 + u) ** 2
    return np.where(small, params.zero_limit(), val)


def surrogate_coeff(delta_prime, params: QggmrfParams, b_ij=1.0):
    """``b~ = b * rho'(d') / (2 d')``; at ``d' = 0`` the limit ``b * rho''(0) / 2``."""
    out = 0.5 * np.asarray(b_ij, dtype=float) * rho_prime_over_delta(delta_prime, params)
    return float(out) if np.ndim(out) == 0 else out


def surrogate(delta, delta_prime, params: QggmrfParams):
    """Symmetric-bound quadratic touching ``rho`` at ``+-delta_prime``."""
    a2 = rho_prime_over_delta(delta_prime, params)
    d, dp = np.asarray(delta, dtype=float), np.asarray(delta_prime, dtype=float)
    return rho(dp, params) + 0.5 * a2 * (d ** 2 - dp ** 2)


@numba.njit(cache=True, fastmath=False)
def btilde_kernel(delta, p, q, tsig, sigp, limit):
    """Scalar ``rho'(d)/(2d)`` for the compiled ICD loops (``sigp = sigma_x**p``)."""
    a = abs(delta)
    if a < ZERO_GUARD:
        return 0.5 * limit
    u = (a / tsig) ** (q - p)
    return 0.5 * a ** (p - 2) / sigp * u * (q / p + u) / (1 + u) ** 2


@numba.njit(cache=True, fastmath=False)
def btilde_fast(a, p, q, tsig, tq, sigp, limit):
    """:func:`btilde_kernel` for ``a = |d| >= 0`` with ``tq = tsig**(q-p)`` precomputed.

    One power per call when ``q == 2`` by writing ``a^(p-2) = 1 / (u tq)``.
    """
    if a < ZERO_GUARD:
        return 0.5 * limit
    if q == 2.0:
        u = (a / tsig) ** (2.0 - p)
        return 0.5 / (u * tq * sigp) * u * (2.0 / p + u) / ((1 + u) * (1 + u))
    u = (a / tsig) ** (q - p)
    return 0.5 * a ** (p - 2) / sigp * u * (q / p + u) / ((1 + u) * (1 + u))


# ---------------------------------------------------------------- neighbourhoods

_RAW_2D = {1: 1 / 6, 2: 1 / 12}
_RAW_3D = {1: 9 / 132, 2: 9 / 264, 3: 9 / 396}


@dataclass(frozen=True, eq=False)
class NeighborWeights:
    """``table`` maps a lattice offset (array-axis order) to its weight ``b_ij``."""

    dim: int
    table: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        for off, w in self.table.items():
            neg = tuple(-o for o in off)
            if self.table.get(neg) != w:
                raise ValueError(f"weights not symmetric at offset {off}")

    @property
    def offsets(self) -> np.ndarray:
        return np.array(list(self.table.keys()), dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array(list(self.table.values()), dtype=float)

    def total(self) -> float:
        return float(sum(self.table.values()))

    def at(self, index, shape) -> dict:
        """Surviving neighbours of ``index`` inside ``shape``, renormalised to sum 1."""
        kept = {}
        for off, w in self.table.items():
            j = tuple(i + o for i, o in zip(index, off))
            if all(0 <= jj < n for jj, n in zip(j, shape)):
                kept[off] = w
        s = sum(kept.values())
        return {off: w / s for off, w in kept.items()}

    def normalizers(self, shape) -> np.ndarray:
        """Per-voxel sum of the in-grid stencil weights (1 away from the boundary)."""
        shape = tuple(shape)
        if len(shape) != self.dim:
            raise ValueError(f"shape {shape} is not {self.dim}D")
        ones = np.ones(shape)
        total = np.zeros(shape)
        for off, w in self.table.items():
            total += w * _shifted_mask(ones, off)
        return total

    def pair_weights(self, shape):
        """``(offset, w)`` pairs for every positive offset, with ``w`` an array over the
        lower voxel of each bond: the symmetrised renormalised weight, 0 where the
        partner falls outside the grid."""
        norm = self.normalizers(shape)
        out = []
        for off, w in self.table.items():
            if off <= tuple(-o for o in off):
                continue
            src, dst = _bond_slices(off, shape)
            bw = np.zeros(shape)
            bw[src] = 0.5 * (w / norm[src] + w / norm[dst])
            out.append((off, bw))
        return out


def _bond_slices(off, shape):
    src, dst = [], []
    for o, n in zip(off, shape):
        if o >= 0:
            src.append(slice(0, n - o))
            dst.append(slice(o, n))
        else:
            src.append(slice(-o, n))
            dst.append(slice(0, n + o))
    return tuple(src), tuple(dst)


def _shifted_mask(ones: np.ndarray, off) -> np.ndarray:
    m = np.zeros_like(ones)
    src, _ = _bond_slices(off, ones.shape)
    m[src] = 1
    return m


def neighbor_weights(dim: int) -> NeighborWeights:
    """3x3 (2D) or 3x3x3 (3D) stencil; weight depends on the number of non-zero offsets."""
    if dim == 2:
        raw = _RAW_2D
    elif dim == 3:
        raw = _RAW_3D
    else:
        raise ValueError("dim must be 2 or 3")
    table = {}
    for off in itertools.product((-1, 0, 1), repeat=dim):
        order = sum(o != 0 for o in off)
        if order:
            table[off] = raw[order]
    return NeighborWeights(dim, table)


def prior_energy(x: np.ndarray, weights: NeighborWeights, params: QggmrfParams) -> float:
    """``sum over bonds {i, j} of b_ij * rho(x_i - x_j)``, each bond counted once."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for off, bw in weights.pair_weights(x.shape):
        src, dst = _bond_slices(off, x.shape)
        total += float(np.sum(bw[src] * rho(x[src] - x[dst], params)))
    return total
