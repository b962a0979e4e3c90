"""Magnetic vector-potential tomography: VFET, FBP/SIRT and MBIR with a q-GGMRF prior."""

from .analytic import FilterSpec, SirtParams, bp2d, fbp2d, sirt2d, vfet_reconstruct, vfet_series
from .fields import Grid3, Image2, ScalarField3, VectorField3, curl_fd, divergence_fd, divergence_spectral
from .io import (FormatError, IngestError, ingest_phase_stack, read_series, read_volume, write_series,
                 write_volume)
from .mbir import CostTrace, ReconConfig, map_cost, mbir2d, mbir3d
from .metrics import MetricReport, nrmse, planar_nrmse, rmse
from .phantom import MagnetizationSpec, PhantomConfig, ShapeSpec, shepp_logan, vector_potential
from .prior import NeighborWeights, QggmrfParams, neighbor_weights, rho, rho_prime, surrogate_coeff
from .projector import ProjectionSet, Sinogram, TiltSeries, project_set, sinogram, tilt_angles

__version__ = "0.1.0"
