"""Binary volume / tilt-series formats and ingestion of raw phase stacks.

VFM1 (volume), little endian::

    4s   magic  b"VFM1"
    u4   nx, ny, nz
    u1   ncomp        1 or 3
    u1   dtype size   4 (f32) or 8 (f64)
    f8   pitch        nm per voxel
    ...  payload      component-outermost, then z, y, x (x fastest)

VFS1 (tilt series), little endian::

    4s   magic  b"VFS1"
    1s   axis         b"x" or b"y"
    u4   count, nu, nv
    u1   dtype size
    f8   pitch
    f8   angles[count] degrees, strictly increasing
    ...  payload      count images of (nv, nu), u fastest, in angle order

Writes go to a temporary file in the target directory followed by a rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import yaml

from .fields import Grid3, ScalarField3, VectorField3
from .projector import TiltSeries

VOLUME_MAGIC = b"VFM1"
SERIES_MAGIC = b"VFS1"
_VOL_HEAD = struct.Struct("<4sIIIBBd")
_SER_HEAD = struct.Struct("<4scIIIBd")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}
# refuse headers that would describe more than this many payload bytes
MAX_PAYLOAD = 1 << 40


class FormatError(ValueError):
    pass


class IngestError(ValueError):
    pass


def _dtype(name) -> np.dtype:
    key = {"f32": 4, "float32": 4, "f64": 8, "float64": 8}.get(str(name))
    if key is None:
        raise ValueError(f"dtype must be f32 or f64, got {name!r}")
    return _DTYPES[key]


def atomic_write(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _payload(buf: bytes, offset: int, count: int, dt: np.dtype, what: str) -> np.ndarray:
    need = count * dt.itemsize
    if need > MAX_PAYLOAD:
        raise FormatError(f"{what}: header describes {need} payload bytes, above the {MAX_PAYLOAD} limit")
    have = len(buf) - offset
    if have < need:
        raise FormatError(f"{what}: truncated payload at byte offset {offset}: expected {need} bytes, got {have}")
    if have > need:
        raise FormatError(f"{what}: {have - need} trailing bytes after payload ending at offset {offset + need}")
    return np.frombuffer(buf, dtype=dt, count=count, offset=offset)


def _head(buf: bytes, st: struct.Struct, magic: bytes, what: str):
    if len(buf) < st.size:
        raise FormatError(f"{what}: file is {len(buf)} bytes, shorter than the {st.size}-byte header")
    fields = st.unpack_from(buf, 0)
    if fields[0] != magic:
        raise FormatError(f"{what}: bad magic {fields[0]!r} at offset 0, expected {magic!r}")
    return fields


# ---------------------------------------------------------------- volumes

def volume_bytes(field, dtype="f64") -> bytes:
    dt = _dtype(dtype)
    if isinstance(field, VectorField3):
        arr, ncomp = field.data, 3
    elif isinstance(field, ScalarField3):
        arr, ncomp = field.values, 1
    else:
        raise TypeError("expected a ScalarField3 or VectorField3")
    g = field.grid
    head = _VOL_HEAD.pack(VOLUME_MAGIC, g.nx, g.ny, g.nz, ncomp, dt.itemsize, g.pitch)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def write_volume(path, field, dtype="f64") -> Path:
    return atomic_write(path, volume_bytes(field, dtype))


def parse_volume(buf: bytes, what: str = "volume"):
    """Decode VFM1 bytes; returns the field (float64) and the stored dtype name."""
    _, nx, ny, nz, ncomp, size, pitch = _head(buf, _VOL_HEAD, VOLUME_MAGIC, what)
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{what}: non-positive dimension in header ({nx}, {ny}, {nz})")
    if ncomp not in (1, 3):
        raise FormatError(f"{what}: ncomp must be 1 or 3, got {ncomp} at offset 16")
    if size not in _DTYPES:
        raise FormatError(f"{what}: unknown dtype size {size} at offset 17")
    if not (pitch > 0 and np.isfinite(pitch)):
        raise FormatError(f"{what}: pitch must be positive, got {pitch} at offset 18")
    data = _payload(buf, _VOL_HEAD.size, nx * ny * nz * ncomp, _DTYPES[size], what)
    grid = Grid3(nx, ny, nz, pitch)
    arr = data.astype(np.float64).reshape((ncomp,) + grid.shape)
    field = VectorField3(grid, arr) if ncomp == 3 else ScalarField3(grid, arr[0])
    return field, ("f32" if size == 4 else "f64")


def read_volume(path):
    return parse_volume(Path(path).read_bytes(), str(path))[0]


# ---------------------------------------------------------------- tilt series

def series_bytes(series: TiltSeries, dtype="f64") -> bytes:
    dt = _dtype(dtype)
    k = len(series)
    nv, nu = series.shape
    head = _SER_HEAD.pack(SERIES_MAGIC, series.axis.encode(), k, nu, nv, dt.itemsize, series.pitch)
    angles = np.asarray(series.angles, dtype="<f8").tobytes()
    return head + angles + np.ascontiguousarray(series.stack, dtype=dt).tobytes()


def write_series(path, series: TiltSeries, dtype="f64") -> Path:
    return atomic_write(path, series_bytes(series, dtype))


def parse_series(buf: bytes, what: str = "series") -> TiltSeries:
    _, axis, k, nu, nv, size, pitch = _head(buf, _SER_HEAD, SERIES_MAGIC, what)
    if axis not in (b"x", b"y"):
        raise FormatError(f"{what}: axis byte {axis!r} at offset 4 is not 'x' or 'y'")
    if min(k, nu, nv) < 1:
        raise FormatError(f"{what}: non-positive count or image size in header ({k}, {nu}, {nv})")
    if size not in _DTYPES:
        raise FormatError(f"{what}: unknown dtype size {size} at offset 17")
    off = _SER_HEAD.size
    if len(buf) < off + 8 * k:
        raise FormatError(f"{what}: truncated angle table at byte offset {off}: expected {8 * k} bytes, "
                          f"got {len(buf) - off}")
    angles = np.frombuffer(buf, dtype="<f8", count=k, offset=off).astype(float)
    data = _payload(buf, off + 8 * k, k * nu * nv, _DTYPES[size], what)
    try:
        return TiltSeries(axis.decode(), angles, data.astype(np.float64).reshape(k, nv, nu), pitch)
    except ValueError as exc:
        raise FormatError(f"{what}: {exc}") from exc


def read_series(path) -> TiltSeries:
    return parse_series(Path(path).read_bytes(), str(path))


# ---------------------------------------------------------------- ingestion

def load_mapping(path) -> dict:
    """Read a JSON or YAML mapping."""
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise IngestError(f"{path}: expected a mapping at top level")
    return data


def _sidecar_angles(meta: dict) -> np.ndarray:
    if "angles" in meta:
        return np.asarray(meta["angles"], dtype=float)
    try:
        start, stop, step = (float(meta[k]) for k in ("angle_start", "angle_stop", "angle_step"))
    except KeyError as exc:
        raise IngestError(f"sidecar needs 'angles' or angle_start/angle_stop/angle_step (missing {exc})") from None
    if step <= 0:
        raise IngestError("angle_step must be positive")
    count = int(round((stop - start) / step)) + 1
    return start + step * np.arange(count)


def ingest_phase_stack(raw_path, sidecar) -> TiltSeries:
    """Raw little-endian float stack plus JSON/YAML sidecar -> validated :class:`TiltSeries`.

    Sidecar keys: ``axis``, ``nu``, ``nv``, ``pitch`` (nm), and either ``angles`` or
    ``angle_start``/``angle_stop``/``angle_step``; optional ``dtype`` (default f32).
    """
    meta = sidecar if isinstance(sidecar, dict) else load_mapping(sidecar)
    missing = [k for k in ("axis", "nu", "nv", "pitch") if k not in meta]
    if missing:
        raise IngestError(f"sidecar is missing {missing}")
    angles = _sidecar_angles(meta)
    if np.any(np.diff(angles) <= 0):
        raise IngestError("sidecar angles must be strictly increasing (no duplicates)")
    nu, nv = int(meta["nu"]), int(meta["nv"])
    dt = _dtype(meta.get("dtype", "f32"))
    raw = Path(raw_path).read_bytes()
    per_image = nu * nv * dt.itemsize
    if len(raw) % per_image:
        raise IngestError(f"{raw_path}: {len(raw)} bytes is not a whole number of {nu}x{nv} images")
    depth = len(raw) // per_image
    if depth != angles.size:
        raise IngestError(f"{raw_path}: stack holds {depth} images but the sidecar lists {angles.size} angles")
    stack = np.frombuffer(raw, dtype=dt).astype(np.float64).reshape(depth, nv, nu)
    try:
        return TiltSeries(str(meta["axis"]), angles, stack, float(meta["pitch"]))
    except ValueError as exc:
        raise IngestError(str(exc)) from exc


def write_phase_stack(raw_path, sidecar_path, series: TiltSeries, dtype="f32") -> None:
    """Inverse of :func:`ingest_phase_stack` (used to build synthetic experiments)."""
    dt = _dtype(dtype)
    atomic_write(raw_path, np.ascontiguousarray(series.stack, dtype=dt).tobytes())
    nv, nu = series.shape
    meta = {"axis": series.axis, "nu": nu, "nv": nv, "pitch": series.pitch,
            "dtype": "f32" if dt.itemsize == 4 else "f64", "angles": [float(a) for a in series.angles]}
    atomic_write(sidecar_path, json.dumps(meta, indent=1).encode())
