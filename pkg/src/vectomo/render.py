"""Image and CSV artifacts: holographic contours, induction colour maps, plot data."""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.colors as mcolors  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fields import VectorField3, curl_fd  # noqa: E402
from .io import atomic_write  # noqa: E402

COST_HEADER = ("iter", "cost")
PLANAR_HEADER = ("plane", "nrmse_ax", "nrmse_ay", "nrmse_az")
RMSE_HEADER = ("algo", "rmse")


def holographic(phase, s: float = 100.0) -> np.ndarray:
    """``cos(s * phase)`` contour image."""
    return np.cos(s * np.asarray(phase, dtype=float))


def integrated_induction(a: VectorField3, axis: str = "z") -> np.ndarray:
    """In-plane induction ``(2, n1, n2)`` of ``curl A`` summed along the beam axis."""
    b = curl_fd(a).data
    # per-component array axes are (z, y, x)
    ax = {"z": 0, "y": 1, "x": 2}[axis]
    comps = {"z": (0, 1), "y": (0, 2), "x": (1, 2)}[axis]
    return np.stack([b[c].sum(axis=ax) for c in comps])


def induction_rgb(bplane: np.ndarray) -> np.ndarray:
    """Direction of ``(b1, b2)`` to hue, magnitude (over its max) to saturation."""
    b1, b2 = bplane
    mag = np.hypot(b1, b2)
    peak = mag.max()
    hue = (np.arctan2(b2, b1) / (2 * np.pi)) % 1.0
    sat = mag / peak if peak > 0 else np.zeros_like(mag)
    return mcolors.hsv_to_rgb(np.stack([hue, sat, np.ones_like(hue)], axis=-1))


def _png_bytes(img: np.ndarray, cmap: str | None = "gray", vmin=None, vmax=None) -> bytes:
    buf = _io.BytesIO()
    # row 0 of an image array is drawn at the top
    plt.imsave(buf, img, cmap=cmap, vmin=vmin, vmax=vmax, format="png")
    return buf.getvalue()


def save_png(path, img: np.ndarray, cmap: str | None = "gray", vmin=None, vmax=None) -> Path:
    return atomic_write(path, _png_bytes(img, cmap, vmin, vmax))


def _csv_bytes(header, rows) -> bytes:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue().encode()


def write_cost_csv(path, trace) -> Path:
    rows = [(i + 1, repr(c)) for i, c in enumerate(trace.costs)]
    return atomic_write(path, _csv_bytes(COST_HEADER, rows))


def write_planar_csv(path, profiles: dict) -> Path:
    """``profiles`` maps ``'x'/'y'/'z'`` to ``[(plane, value), ...]``; gaps are left blank."""
    planes = sorted({j for prof in profiles.values() for j, _ in prof})
    lookup = {c: dict(profiles.get(c, [])) for c in "xyz"}
    rows = [(j, *(repr(lookup[c][j]) if j in lookup[c] else "" for c in "xyz")) for j in planes]
    return atomic_write(path, _csv_bytes(PLANAR_HEADER, rows))


def write_rmse_csv(path, rows) -> Path:
    return atomic_write(path, _csv_bytes(RMSE_HEADER, [(a, repr(float(v))) for a, v in rows]))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def render_outputs(outdir, phase=None, field: VectorField3 | None = None, trace=None, planar=None,
                   rmse_rows=None, s: float = 100.0, prefix: str = "") -> dict[str, Path]:
    """Write whichever artifacts are supplied; returns name -> path."""
    out = Path(outdir)
    written = {}
    if phase is not None:
        written["holographic"] = save_png(out / f"{prefix}holographic.png", holographic(phase, s),
                                          vmin=-1.0, vmax=1.0)
    if field is not None:
        written["induction"] = save_png(out / f"{prefix}induction.png", induction_rgb(integrated_induction(field)),
                                        cmap=None)
    if trace is not None:
        written["cost"] = write_cost_csv(out / f"{prefix}cost.csv", trace)
    if planar is not None:
        written["planar"] = write_planar_csv(out / f"{prefix}planar_nrmse.csv", planar)
    if rmse_rows is not None:
        written["rmse"] = write_rmse_csv(out / f"{prefix}rmse.csv", rmse_rows)
    return written
