"""Command line interface: ``vectomo <command> [options]``.

Every option can also come from ``--config FILE`` (JSON or YAML); its keys are the
long option names, with dashes or underscores.  Command line flags win.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import app
from .analytic import SirtParams, bp2d, fbp2d, sirt2d, vfet_reconstruct
from .fields import Grid3, Image2, ScalarField3, VectorField3
from .io import FormatError, IngestError, ingest_phase_stack, load_mapping, read_series, read_volume, \
    write_series, write_volume, atomic_write
from .mbir import ReconConfig, mbir2d, mbir3d
from .metrics import report
from .phantom import shepp_logan, vector_potential
from .prior import QggmrfParams
from .projector import ProjectionSet, Sinogram, TiltSeries, project_scalar_2d, project_set, tilt_angles
from .render import holographic, render_outputs, save_png, write_planar_csv, write_rmse_csv

log = logging.getLogger("vectomo")

ALGOS = ("bp", "fbp", "sirt", "vfet", "mbir2d", "mbir3d")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--config", help="JSON/YAML file with option defaults")
    p.add_argument("--deterministic", action="store_true", help="pin seeds and summation order")
    p.add_argument("--threads", type=int, help="FFT worker cap (sets VECTOMO_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")


def _prior_opts(p, defaults: QggmrfParams):
    p.add_argument("--p", type=float, default=defaults.p)
    p.add_argument("--q", type=float, default=defaults.q)
    p.add_argument("--t", type=float, default=defaults.t)
    p.add_argument("--sigma-x", type=float, default=defaults.sigma_x)
    p.add_argument("--max-iters", type=int, default=35)
    p.add_argument("--cost-tol", type=float, default=1e-6)
    p.add_argument("--gauge", type=float, default=None, help="Coulomb-gauge penalty weight (vector MBIR)")
    p.add_argument("--cost-csv", help="write the cost trace here")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="vectomo", description="Vector-potential and scalar tomography.")
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a ground-truth volume or image")
    _common(p)
    p.add_argument("--kind", choices=("prism", "cylinder", "shepp-logan"), default="prism")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--b0", type=float, default=1.0)
    p.add_argument("--chirality", choices=("ccw", "cw"), default="ccw")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--out", required=True, help=".vfm volume (.npy for shepp-logan)")

    p = sub.add_parser("project", help="project a volume into x/y tilt series (or an image into a sinogram)")
    _common(p)
    p.add_argument("--input", required=True, help=".vfm volume or .npy image")
    p.add_argument("--tilt-limit", type=float, default=90.0)
    p.add_argument("--tilt-step", type=float, default=2.0)
    p.add_argument("--scale", type=float, default=1.0, help="phase per (T px)")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--out-x", help="x series (.vfs); the sinogram for a 2D input")
    p.add_argument("--out-y", help="y series (.vfs)")

    p = sub.add_parser("reconstruct", help="run one reconstruction algorithm")
    _common(p)
    p.add_argument("--algo", choices=ALGOS, required=True)
    p.add_argument("--sinogram", help="2D sinogram (.vfs with single-row images)")
    p.add_argument("--series-x")
    p.add_argument("--series-y")
    p.add_argument("--raw-x", help="raw f32 phase stack (with --sidecar-x)")
    p.add_argument("--sidecar-x")
    p.add_argument("--raw-y")
    p.add_argument("--sidecar-y")
    p.add_argument("--nz", type=int, help="volume depth (default: image width)")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--sirt-iters", type=int, default=10)
    p.add_argument("--lam", type=float, default=0.25)
    p.add_argument("--init", choices=("zero", "fbp", "vfet"), default=None)
    _prior_opts(p, app.TABLE1_PRIOR)
    p.add_argument("--out", required=True, help=".vfm for vector output, .npy for 2D")

    p = sub.add_parser("evaluate", help="compare a reconstruction with ground truth")
    _common(p)
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--planar-csv")
    p.add_argument("--report", help="write the JSON report here as well")

    p = sub.add_parser("repro-table1", help="Shepp-Logan BP/FBP/SIRT/MBIR RMSE table")
    _common(p)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--tilt-step", type=float, default=2.0)
    _prior_opts(p, app.TABLE1_PRIOR)
    p.add_argument("--outdir")

    p = sub.add_parser("repro-synthetic", help="VFET full/wedge and MBIR on a synthetic particle")
    _common(p)
    p.add_argument("--kind", choices=("prism", "cylinder"), default="prism")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--wedge", type=float, default=70.0)
    p.add_argument("--tilt-step", type=float, default=2.0)
    p.add_argument("--no-mbir", action="store_true")
    _prior_opts(p, app.VECTOR_PRIOR)
    p.add_argument("--outdir")

    p = sub.add_parser("repro-experiment", help="ingest a synthetic thin-film stack, run MBIR, render maps")
    _common(p)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--nz", type=int, default=32)
    p.add_argument("--tilt-limit", type=float, default=50.0)
    p.add_argument("--tilt-step", type=float, default=1.0)
    p.add_argument("--contour-scale", type=float, default=100.0)
    _prior_opts(p, app.VECTOR_PRIOR)
    p.add_argument("--workdir", required=True)
    return top


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if command is None:
        if {"-h", "--help"} & set(argv):
            return parser.parse_args(argv)
        parser.print_help(sys.stderr)
        raise UsageError("vectomo: a command is required")
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[argv.index(command) + 1:])
    known.command = command
    if known.config:
        try:
            cfg = load_mapping(known.config)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {known.config}: {exc}") from None
        sub = choices[known.command]
        known_dests = {a.dest for a in sub._actions}
        defaults = {}
        for key, val in cfg.items():
            dest = str(key).replace("-", "_")
            if dest not in known_dests or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {known.command}")
            defaults[dest] = val
        sub.set_defaults(**defaults)
        # required options may come from the file
        for a in sub._actions:
            if a.dest in defaults:
                a.required = False
    return parser.parse_args(argv)


# ---------------------------------------------------------------- helpers

def _recon_config(args, init_default: str, gauge_default: float = 0.0) -> ReconConfig:
    prior = QggmrfParams(p=args.p, q=args.q, t=args.t, sigma_x=args.sigma_x)
    gauge = args.gauge if getattr(args, "gauge", None) is not None else gauge_default
    return ReconConfig(prior=prior, max_iters=args.max_iters, cost_tol=args.cost_tol,
                       init=getattr(args, "init", None) or init_default,
                       deterministic=bool(args.deterministic), gauge=gauge)


def _load_projection_set(args) -> ProjectionSet:
    if args.series_x and args.series_y:
        return ProjectionSet(read_series(args.series_x), read_series(args.series_y))
    if args.raw_x and args.sidecar_x and args.raw_y and args.sidecar_y:
        return ProjectionSet(ingest_phase_stack(args.raw_x, args.sidecar_x),
                             ingest_phase_stack(args.raw_y, args.sidecar_y))
    raise UsageError("vector reconstruction needs --series-x/--series-y or raw stacks with sidecars")


def _load_sinogram(path) -> Sinogram:
    s = read_series(path)
    if s.stack.shape[1] != 1:
        raise UsageError(f"{path}: a 2D sinogram is stored as single-row images, got {s.shape}")
    return Sinogram(s.angles, s.stack[:, 0, :])


def _save_image(path, img: np.ndarray) -> None:
    import io as _io
    buf = _io.BytesIO()
    np.save(buf, np.asarray(img, dtype=np.float64))
    atomic_write(path, buf.getvalue())


def _load_any(path):
    if str(path).endswith(".npy"):
        return Image2(np.load(path))
    return read_volume(path)


# ---------------------------------------------------------------- commands

def cmd_phantom(args) -> int:
    if args.kind == "shepp-logan":
        _save_image(args.out, shepp_logan(args.n).values)
    else:
        kw = {"b0": args.b0}
        if args.kind == "cylinder":
            kw["chirality"] = args.chirality
        write_volume(args.out, vector_potential(app.phantom_config(args.kind, args.n, **kw)), args.dtype)
    print(f"wrote {args.out}")
    return 0


def cmd_project(args) -> int:
    ang = tilt_angles(args.tilt_limit, args.tilt_step)
    if str(args.input).endswith(".npy"):
        if not args.out_x:
            raise UsageError("--out-x is required for a 2D sinogram")
        img = np.load(args.input)
        sino = project_scalar_2d(img, ang) * args.scale
        write_series(args.out_x, TiltSeries("x", ang, sino[:, None, :]), args.dtype)
        print(f"wrote {args.out_x}")
        return 0
    vol = read_volume(args.input)
    if not isinstance(vol, VectorField3):
        raise UsageError(f"{args.input} holds a scalar volume; projection needs three components")
    if not (args.out_x and args.out_y):
        raise UsageError("--out-x and --out-y are required for a vector volume")
    ps = project_set(vol, ang, scale=args.scale)
    write_series(args.out_x, ps.sx, args.dtype)
    write_series(args.out_y, ps.sy, args.dtype)
    print(f"wrote {args.out_x} {args.out_y}")
    return 0


def cmd_reconstruct(args) -> int:
    algo = args.algo
    if algo in ("bp", "fbp", "sirt", "mbir2d"):
        if not args.sinogram:
            raise UsageError(f"--algo {algo} needs --sinogram")
        sino = _load_sinogram(args.sinogram)
        trace = None
        if algo == "bp":
            out = bp2d(sino)
        elif algo == "fbp":
            out = fbp2d(sino)
        elif algo == "sirt":
            out = sirt2d(sino, SirtParams(args.lam, args.sirt_iters))
        else:
            out, trace = mbir2d(sino, _recon_config(args, "fbp"))
        _save_image(args.out, out.values)
    else:
        ps = _load_projection_set(args)
        nv, nu = ps.sx.shape
        grid = Grid3(nu, nv, args.nz or max(nu, nv), ps.sx.pitch)
        trace = None
        if algo == "vfet":
            out = vfet_reconstruct(ps, grid, scale=args.scale)
        else:
            out, trace = mbir3d(ps, _recon_config(args, "vfet", app.VECTOR_GAUGE), grid, scale=args.scale)
        write_volume(args.out, out)
    if trace is not None:
        print(f"iterations {trace.iterations_run}  final cost {trace.costs[-1]:.6g}  "
              f"converged {trace.converged}")
        if args.cost_csv:
            from .render import write_cost_csv
            write_cost_csv(args.cost_csv, trace)
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    est, truth = _load_any(args.estimate), _load_any(args.truth)
    if type(est) is not type(truth):
        raise UsageError("estimate and truth hold different kinds of data")
    if isinstance(est, (VectorField3, ScalarField3)) and est.grid.shape != truth.grid.shape:
        raise UsageError(f"grid mismatch: {est.grid.shape} vs {truth.grid.shape}")
    rep = report(est, truth, {"estimate": str(args.estimate), "truth": str(args.truth)})
    text = rep.to_json()
    print(text)
    if args.report:
        atomic_write(args.report, text.encode())
    if args.planar_csv and rep.planar_nrmse:
        write_planar_csv(args.planar_csv, rep.planar_nrmse)
    return 0


def cmd_table1(args) -> int:
    res = app.repro_table1(args.n, args.tilt_step, _recon_config(args, "fbp"))
    for algo, val in res.rows:
        print(f"{algo:5s} {val:.4f}")
    if args.outdir:
        out = Path(args.outdir)
        write_rmse_csv(out / "rmse.csv", res.rows)
        render_outputs(out, trace=res.trace)
        for k, img in res.images.items():
            save_png(out / f"{k.lower()}.png", img, cmap="coolwarm", vmin=0, vmax=1)
    return 0


def cmd_synthetic(args) -> int:
    cfg = None if args.no_mbir else _recon_config(args, "vfet", app.VECTOR_GAUGE)
    res = app.repro_synthetic(args.kind, args.n, args.wedge, args.tilt_step, not args.no_mbir, cfg)
    print("recon        mean planar NRMSE  x       y       z")
    for name, prof in res.planar.items():
        means = [np.mean([v for _, v in prof[c]]) if prof[c] else float("nan") for c in "xyz"]
        print(f"{name:12s} {'':18s} " + "  ".join(f"{m:.4f}" for m in means))
    if args.outdir:
        out = Path(args.outdir)
        for name, prof in res.planar.items():
            write_planar_csv(out / f"planar_{name}.csv", prof)
        last = res.recon.get("mbir_wedge", res.recon["vfet_wedge"])
        render_outputs(out, field=last, trace=res.trace)
        write_volume(out / "truth.vfm", res.truth)
        for name, vol in res.recon.items():
            write_volume(out / f"{name}.vfm", vol)
    return 0


def cmd_experiment(args) -> int:
    cfg = _recon_config(args, "vfet", app.VECTOR_GAUGE)
    res = app.repro_experiment(args.workdir, args.n, args.nz, args.tilt_limit, args.tilt_step,
                               args.max_iters, args.contour_scale, cfg)
    print(f"iterations {res.trace.iterations_run}  monotone {res.trace.is_monotone()}")
    for k, v in res.artifacts.items():
        print(f"{k:12s} {v}")
    return 0


COMMANDS = {"phantom": cmd_phantom, "project": cmd_project, "reconstruct": cmd_reconstruct,
            "evaluate": cmd_evaluate, "repro-table1": cmd_table1, "repro-synthetic": cmd_synthetic,
            "repro-experiment": cmd_experiment}


def cli_run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            os.environ["VECTOMO_THREADS"] = str(args.threads)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (FormatError, IngestError, OSError) as exc:
        print(f"vectomo: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"vectomo: invalid input: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_run())


if __name__ == "__main__":
    main()
