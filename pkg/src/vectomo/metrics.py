"""Error metrics between a reconstruction and its ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fields import Image2, ScalarField3, VectorField3

# y-plane half range (nm) used for the planar curves
PLANAR_EXTENT_NM = 35.0
# planes whose truth range is below this fraction of the global range carry no signal
DEGENERATE_RTOL = 1e-6


def _values(f) -> np.ndarray:
    if isinstance(f, VectorField3):
        return f.data
    if isinstance(f, (ScalarField3,)):
        return f.values
    if isinstance(f, Image2):
        return f.values
    return np.asarray(f, dtype=float)


def _pair(est, truth):
    e, t = _values(est), _values(truth)
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch: estimate {e.shape} vs truth {t.shape}")
    return e, t


def rmse(est, truth) -> float:
    e, t = _pair(est, truth)
    return float(np.sqrt(np.mean((e - t) ** 2)))


def nrmse(est, truth) -> float:
    """RMSE over the truth's dynamic range."""
    e, t = _pair(est, truth)
    span = float(t.max() - t.min())
    if span <= 0:
        raise ValueError("truth is constant; NRMSE normalisation is degenerate")
    return rmse(e, t) / span


def central_planes(n: int, pitch: float, extent_nm: float = PLANAR_EXTENT_NM) -> np.ndarray:
    """Plane indices whose centre lies within ``+-extent_nm`` of the grid centre."""
    pos = (np.arange(n) - n // 2) * pitch
    return np.flatnonzero(np.abs(pos) <= extent_nm + 1e-9)


def planar_nrmse(est, truth, axis: str = "y", extent_nm: float = PLANAR_EXTENT_NM,
                 pitch: float | None = None) -> list[tuple[int, float]]:
    """Per-plane NRMSE of a scalar volume ``(nz, ny, nx)``.

    Each plane is normalised by its own truth range.  Planes whose range is below
    :data:`DEGENERATE_RTOL` of the whole volume's (e.g. a component that is odd
    about the plane) are left out.
    """
    e, t = _pair(est, truth)
    if e.ndim != 3:
        raise ValueError("planar_nrmse expects one scalar volume; pass a single component")
    if pitch is None:
        pitch = est.grid.pitch if isinstance(est, ScalarField3) else 1.0
    ax = {"z": 0, "y": 1, "x": 2}[axis]
    total = float(t.max() - t.min())
    if total <= 0:
        raise ValueError("truth is constant; NRMSE normalisation is degenerate")
    out = []
    for j in central_planes(t.shape[ax], pitch, extent_nm):
        tp, ep = np.take(t, j, axis=ax), np.take(e, j, axis=ax)
        span = float(tp.max() - tp.min())
        if span < DEGENERATE_RTOL * total:
            continue
        out.append((int(j), float(np.sqrt(np.mean((ep - tp) ** 2)) / span)))
    return out


def planar_profiles(est: VectorField3, truth: VectorField3, axis: str = "y",
                    extent_nm: float = PLANAR_EXTENT_NM) -> dict[str, list[tuple[int, float]]]:
    return {c: planar_nrmse(est.component(i), truth.component(i), axis, extent_nm)
            for i, c in enumerate("xyz")}


@dataclass
class MetricReport:
    rmse: float
    nrmse: float
    planar_nrmse: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.rmse, self.nrmse] + [v for prof in self.planar_nrmse.values() for _, v in prof]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("metric values must be finite and non-negative")

    def to_json(self) -> str:
        return json.dumps({"rmse": self.rmse, "nrmse": self.nrmse,
                           "planar_nrmse": {k: [[j, v] for j, v in prof] for k, prof in self.planar_nrmse.items()},
                           "metadata": self.metadata}, indent=1)


def report(est, truth, metadata=None) -> MetricReport:
    planar = planar_profiles(est, truth) if isinstance(est, VectorField3) else {}
    return MetricReport(rmse(est, truth), nrmse(est, truth), planar, dict(metadata or {}))
