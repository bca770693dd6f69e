"""Command-line entry point: ``vansfem mms | packed-bed | step-demo``.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
3 input/output error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("vansfem")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_element(text):
    """``"Q2-Q1"`` -> (2, 1)."""
    try:
        vel, pres = text.upper().split("-")
        if not (vel.startswith("Q") and pres.startswith("Q")):
            raise ValueError
        k, m = int(vel[1:]), int(pres[1:])
    except ValueError:
        raise UsageError(f"element pair must look like Q2-Q1, got {text!r}") from None
    if k < 1 or m < 1 or k > 4:
        raise UsageError(f"unsupported element pair {text!r}")
    if m > k:
        raise UsageError(f"pressure degree may not exceed velocity degree ({text})")
    return k, m


def build_parser():
    parser = _Parser(prog="vansfem", description="Stabilized finite element VANS solver")
    parser.add_argument("--config", help="INI file with solver settings")
    parser.add_argument("--output", default="vansfem-output", help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS/worker threads")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mms = sub.add_parser("mms", help="manufactured-solution convergence study")
    mms.add_argument("--case", type=int, default=1)
    mms.add_argument("--form", default=None, choices=["A", "B", "a", "b"])
    mms.add_argument("--el", default="Q1-Q1", help="velocity-pressure pair, e.g. Q2-Q2")
    mms.add_argument("--meshes", type=_int_list, default=(16, 32, 64))
    mms.add_argument("--dts", type=_float_list, default=None)
    mms.add_argument("--bdf", type=int, default=None)
    mms.add_argument("--nu", type=float, default=None)
    mms.add_argument("--temporal-mesh", type=int, default=48)

    bed = sub.add_parser("packed-bed", help="packed-bed pressure-drop sweep")
    bed.add_argument("--drag", default=None, choices=["difelice", "rong", "none"])
    bed.add_argument("--form", default=None, choices=["A", "B", "a", "b"])
    bed.add_argument("--bound-void-fraction", action="store_true")
    bed.add_argument("--velocities", type=_float_list, default=None)
    bed.add_argument("--eps", type=float, default=None, help="target packing void fraction")
    bed.add_argument("--seed", type=int, default=None)
    bed.add_argument("--vtk", action="store_true", help="write one field file per velocity")

    step = sub.add_parser("step-demo", help="step void fraction with and without grad-div")
    step.add_argument("--cells", type=int, default=32)
    step.add_argument("--nu", type=float, default=0.01)
    step.add_argument("--uniform", action="store_true", help="use eps = 1 everywhere")
    return parser


# ---------------------------------------------------------------------------
# configuration


def read_config(path):
    """Flat sectioned key-value settings; unknown keys are rejected."""
    known = {
        "linear": {"method", "max_iterations", "min_residual", "relative_residual", "ilu_fill"},
        "nonlinear": {"tolerance", "max_iterations"},
        "time": {"dt", "end", "bdf_order"},
        "model": {"form"},
        "stabilization": {"supg", "pspg", "graddiv"},
        "drag": {"model"},
    }
    cp = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise OSError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"config file {path} does not parse: {exc}") from exc
    for section in cp.sections():
        if section not in known:
            raise UsageError(f"unknown config section [{section}]")
        extra = set(cp[section]) - known[section]
        if extra:
            raise UsageError(f"unknown keys in [{section}]: {sorted(extra)}")
    try:
        out = {
            "linear.method": cp.get("linear", "method", fallback="direct"),
            "linear.max_iterations": cp.getint("linear", "max_iterations", fallback=5000),
            "linear.min_residual": cp.getfloat("linear", "min_residual", fallback=1e-11),
            "linear.relative_residual": cp.getfloat("linear", "relative_residual", fallback=1e-3),
            "linear.ilu_fill": cp.getint("linear", "ilu_fill", fallback=1),
            "nonlinear.tolerance": cp.getfloat("nonlinear", "tolerance", fallback=None),
            "nonlinear.max_iterations": cp.getint("nonlinear", "max_iterations", fallback=None),
            "time.dt": cp.getfloat("time", "dt", fallback=None),
            "time.end": cp.getfloat("time", "end", fallback=None),
            "time.bdf_order": cp.getint("time", "bdf_order", fallback=None),
            "model.form": cp.get("model", "form", fallback=None),
            "stabilization.supg": cp.getboolean("stabilization", "supg", fallback=True),
            "stabilization.pspg": cp.getboolean("stabilization", "pspg", fallback=True),
            "stabilization.graddiv": cp.getboolean("stabilization", "graddiv", fallback=True),
            "drag.model": cp.get("drag", "model", fallback=None),
        }
    except ValueError as exc:
        raise UsageError(f"bad value in config file: {exc}") from exc
    return out


def _linear_settings(cfg):
    from .solver import LinearSolverSettings

    return LinearSolverSettings(method=cfg["linear.method"], max_iterations=cfg["linear.max_iterations"],
                                min_residual=cfg["linear.min_residual"],
                                relative_residual=cfg["linear.relative_residual"],
                                ilu_fill=cfg["linear.ilu_fill"])


def _stabilization(cfg):
    return {k: cfg[f"stabilization.{k}"] for k in ("supg", "pspg", "graddiv")}


def write_manifest(outdir, command, resolved):
    from . import __version__

    manifest = {"command": command, "version": __version__, "threads": os.environ.get("OMP_NUM_THREADS"),
                "settings": resolved}
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


# ---------------------------------------------------------------------------
# subcommands


def run_mms(args, cfg):
    from . import mms
    from .errors import ConfigurationError

    if args.case not in mms.CASES:
        raise UsageError(f"unknown MMS case {args.case}; valid cases: {sorted(mms.CASES)}")
    k, m = parse_element(args.el)
    form = (args.form or cfg["model.form"] or "B").upper()
    case = mms.get_case(args.case)
    bdf = args.bdf or cfg["time.bdf_order"] or 1
    dts = args.dts
    if case.transient and dts is None:
        dts = (0.1, 0.05, 0.025)
    if dts is not None and not case.transient:
        raise UsageError(f"case {args.case} is steady; --dts needs the transient case 3")
    kwargs = dict(case=args.case, form=form, velocity_degree=k, pressure_degree=m, bdf_order=bdf,
                  nu=args.nu, linear=_linear_settings(cfg),
                  max_iterations=cfg["nonlinear.max_iterations"],
                  tolerance=cfg["nonlinear.tolerance"], **_stabilization(cfg))
    if dts is None:
        kwargs["meshes"] = args.meshes
        name = f"mms_case{args.case}_{form}_{args.el.upper()}.csv"
    else:
        kwargs.update(dts=dts, t_end=cfg["time.end"] or 1.0, temporal_mesh=args.temporal_mesh)
        name = f"mms_case{args.case}_{form}_{args.el.upper()}_bdf{bdf}.csv"
    write_manifest(args.output, "mms", {**kwargs, "linear": vars(kwargs["linear"])})
    path = os.path.join(args.output, name)
    try:
        table = mms.run_convergence_study(**kwargs)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    except Exception as exc:  # solver failure: keep the partial table
        partial = getattr(exc, "table", None)
        if partial is not None and partial.rows:
            partial.write_csv(path)
        raise
    orders = table.write_csv(path)
    print(f"wrote {path}: velocity order {orders[0]:.3f}, pressure order {orders[1]:.3f}")
    return EXIT_OK


def run_packed_bed(args, cfg):
    from .output import solution_point_fields, write_vtk
    from .packedbed import BedConfig, generate_packing, run_bed_sweep
    from .voidfraction import write_particles

    bed_kwargs = {}
    if args.velocities is not None:
        bed_kwargs["velocities"] = args.velocities
    if args.eps is not None:
        bed_kwargs["eps_target"] = args.eps
    if args.seed is not None:
        bed_kwargs["seed"] = args.seed
    if cfg["time.dt"] is not None:
        bed_kwargs["dt"] = cfg["time.dt"]
    if cfg["time.end"] is not None:
        bed_kwargs["t_end"] = cfg["time.end"]
    if cfg["nonlinear.tolerance"] is not None:
        bed_kwargs["newton_tolerance"] = cfg["nonlinear.tolerance"]
    if cfg["nonlinear.max_iterations"] is not None:
        bed_kwargs["newton_max_iterations"] = cfg["nonlinear.max_iterations"]
    bed = BedConfig(form=(args.form or cfg["model.form"] or "B").upper(),
                    drag_model=args.drag or cfg["drag.model"] or "difelice",
                    bound_void_fraction=args.bound_void_fraction, linear=_linear_settings(cfg),
                    **bed_kwargs)
    resolved = {k: (vars(v) if hasattr(v, "__dataclass_fields__") else v) for k, v in vars(bed).items()}
    write_manifest(args.output, "packed-bed", resolved)
    particles = generate_packing(bed)
    write_particles(particles, os.path.join(args.output, "particles.csv"))
    report = run_bed_sweep(bed, particles, keep_fields=args.vtk)
    name = f"packed_bed_{bed.form}_{bed.drag_model}{'_bounded' if bed.bound_void_fraction else ''}.csv"
    path = os.path.join(args.output, name)
    report.write_csv(path)
    if args.vtk:
        for row in report.rows:
            if row.converged:
                write_vtk(row.problem.mesh, solution_point_fields(row.problem, row.state),
                          os.path.join(args.output, f"bed_u{row.u_in:g}.vtk"))
    print(f"wrote {path} ({len(report.rows)} rows, eps={report.eps_achieved:.4f}, "
          f"H_b={report.bed_height * 1e3:.2f} mm)")
    failed = [r.u_in for r in report.rows if not r.converged]
    if failed:
        log.error("rows failed at inlet velocities %s", failed)
        return EXIT_SOLVER
    return EXIT_OK


def run_step_demo(args, cfg):
    import csv

    from .output import solution_point_fields, write_vtk
    from .stepdemo import compare_graddiv

    write_manifest(args.output, "step-demo", {"cells": args.cells, "nu": args.nu, "uniform": args.uniform})
    results = compare_graddiv(n_cells=args.cells, nu=args.nu, uniform=args.uniform)
    path = os.path.join(args.output, "step_demo.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graddiv", "converged", "continuity_l2", "u_max", "overshoot"])
        for r in results:
            w.writerow([int(r.graddiv), int(r.converged), repr(r.continuity_l2), repr(r.u_max),
                        repr(r.overshoot)])
            tag = "on" if r.graddiv else "off"
            write_vtk(r.problem.mesh, solution_point_fields(r.problem, r.state),
                      os.path.join(args.output, f"step_graddiv_{tag}.vtk"))
    off, on = results
    print(f"wrote {path}: continuity L2 {off.continuity_l2:.4g} without grad-div, "
          f"{on.continuity_l2:.4g} with; overshoot {off.overshoot:.4g} -> {on.overshoot:.4g}")
    if not on.converged:
        return EXIT_SOLVER
    return EXIT_OK


COMMANDS = {"mms": run_mms, "packed-bed": run_packed_bed, "step-demo": run_step_demo}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be positive")
        for var in THREAD_VARIABLES:
            os.environ[var] = str(args.threads)
    try:
        os.makedirs(args.output, exist_ok=True)
        cfg = read_config(args.config)
        start = time.perf_counter()
        status = COMMANDS[args.command](args, cfg)
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - start)
        return status
    except UsageError as exc:
        print(f"vansfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"vansfem: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        from .errors import ConfigurationError, NonConvergenceError, SolverError

        if isinstance(exc, ConfigurationError):
            print(f"vansfem: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if isinstance(exc, (NonConvergenceError, SolverError, ArithmeticError)):
            print(f"vansfem: solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        raise


if __name__ == "__main__":
    sys.exit(main())
