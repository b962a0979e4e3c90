"""End-to-end pipelines used by the CLI and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analytic import SirtParams, bp2d, fbp2d, normalize_range, sirt2d, vfet_reconstruct
from .fields import Grid3, VectorField3
from .io import ingest_phase_stack, write_phase_stack
from .mbir import CostTrace, ReconConfig, mbir2d, mbir3d
from .metrics import planar_profiles, rmse
from .phantom import MagnetizationSpec, PhantomConfig, ShapeSpec, shepp_logan, vector_potential
from .prior import QggmrfParams
from .projector import ProjectionSet, project_set, sinogram, tilt_angles
from .render import render_outputs

TABLE1_ORDER = ("BP", "FBP", "SIRT", "MBIR")
TABLE1_PRIOR = QggmrfParams(p=1.1, q=2.0, t=0.001, sigma_x=0.8)
VECTOR_PRIOR = QggmrfParams(p=1.001, q=2.0, t=0.01, sigma_x=0.8)
# Coulomb-gauge penalty for vector runs: pins the curl-free null space of the data term
VECTOR_GAUGE = 1.0


# ---------------------------------------------------------------- scalar table

@dataclass
class Table1Result:
    rows: list
    images: dict = field(default_factory=dict)
    trace: CostTrace | None = None
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.rows)


def repro_table1(n: int = 256, step: float = 2.0, config: ReconConfig | None = None,
                 sirt: SirtParams = SirtParams()) -> Table1Result:
    """BP, FBP, SIRT and MBIR of the Shepp-Logan phantom from a +-90 degree sinogram.

    The unfiltered BP has no intrinsic scale, so it is mapped onto the phantom's
    [0, 1] range before scoring.
    """
    t0 = time.perf_counter()
    truth = shepp_logan(n).values
    sino = sinogram(truth, tilt_angles(90.0, step))
    config = config or ReconConfig(prior=TABLE1_PRIOR, init="fbp")
    images = {
        "BP": normalize_range(bp2d(sino)).values,
        "FBP": fbp2d(sino).values,
        "SIRT": sirt2d(sino, sirt).values,
    }
    u, trace = mbir2d(sino, config)
    images["MBIR"] = u.values
    rows = [(k, rmse(images[k], truth)) for k in TABLE1_ORDER]
    return Table1Result(rows, images | {"truth": truth}, trace, time.perf_counter() - t0)


# ---------------------------------------------------------------- synthetic vector runs

def phantom_config(kind: str, n: int = 64, **kw) -> PhantomConfig:
    if kind == "prism":
        return PhantomConfig.prism(n, **kw)
    if kind == "cylinder":
        return PhantomConfig.cylinder(n, **kw)
    raise ValueError(f"unknown phantom kind {kind!r}")


@dataclass
class SyntheticResult:
    truth: VectorField3
    recon: dict
    planar: dict
    trace: CostTrace | None = None


def repro_synthetic(kind: str = "prism", n: int = 64, wedge: float = 70.0, step: float = 2.0,
                    mbir: bool = True, config: ReconConfig | None = None) -> SyntheticResult:
    """VFET from full (+-90) and wedge data, and MBIR from the wedge data."""
    truth = vector_potential(phantom_config(kind, n))
    g = truth.grid
    full = project_set(truth, tilt_angles(90.0, step))
    part = project_set(truth, tilt_angles(wedge, step))
    recon = {"vfet_full": vfet_reconstruct(full, g), "vfet_wedge": vfet_reconstruct(part, g)}
    trace = None
    if mbir:
        config = config or ReconConfig(prior=VECTOR_PRIOR, init="vfet", gauge=VECTOR_GAUGE)
        recon["mbir_wedge"], trace = mbir3d(part, config, g)
    planar = {k: planar_profiles(v, truth) for k, v in recon.items()}
    return SyntheticResult(truth, recon, planar, trace)


# ---------------------------------------------------------------- thin-film experiment stand-in

def thin_film_phantom(n: int = 256, nz: int = 32, pitch: float = 6.0) -> PhantomConfig:
    """Vortex disc filling about half the field of view, a few voxels thick."""
    grid = Grid3(n, n, nz, pitch)
    diameter = 0.55 * n * pitch
    height = max(4, nz // 4) * pitch
    return PhantomConfig(grid, ShapeSpec.cylinder(diameter, height), MagnetizationSpec("vortex"))


@dataclass
class ExperimentResult:
    series: ProjectionSet
    field: VectorField3
    trace: CostTrace
    artifacts: dict


def repro_experiment(workdir, n: int = 256, nz: int = 32, limit: float = 50.0, step: float = 1.0,
                     iterations: int = 35, contour_scale: float = 100.0,
                     config: ReconConfig | None = None) -> ExperimentResult:
    """Write a synthetic raw phase stack, ingest it, run MBIR and render the maps.

    Stands in for a measured dataset: the same file route, tilt range and
    iteration count, with a known phantom behind it.
    """
    work = Path(workdir)
    cfg = thin_film_phantom(n, nz)
    truth = vector_potential(cfg)
    ps = project_set(truth, tilt_angles(limit, step))
    for s in ps.series():
        write_phase_stack(work / f"phase_{s.axis}.f32", work / f"phase_{s.axis}.json", s)
    ingested = ProjectionSet(*(ingest_phase_stack(work / f"phase_{a}.f32", work / f"phase_{a}.json")
                               for a in "xy"))
    config = config or ReconConfig(prior=VECTOR_PRIOR, init="vfet", max_iters=iterations, cost_tol=0.0,
                                   gauge=VECTOR_GAUGE)
    field_, trace = mbir3d(ingested, config, cfg.grid)
    zero = int(np.argmin(np.abs(ingested.sx.angles)))
    artifacts = render_outputs(work, phase=ingested.sx.stack[zero], field=field_, trace=trace,
                               s=contour_scale)
    return ExperimentResult(ingested, field_, trace, artifacts)


def with_overrides(config: ReconConfig, **kw) -> ReconConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
