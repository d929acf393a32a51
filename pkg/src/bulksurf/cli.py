"""Batch command-line entry point.

Subcommands: run, mms, equilibrium, probe, check-assumptions, eig,
transport-check.  Each writes its artifacts under the output directory and
prints a one-line summary; exit codes are 0 (success), 1 (usage or config
error), 2 (numerical failure).  Output files are truncated at start so
reruns are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import config as config_mod
from . import diagnostics as diag_mod
from . import solver as solver_mod
from .equilibrium import EquilibriumMode, solve_equilibrium
from .errors import BulkSurfError, ParseError, ValidationError
from .geometry import GeometryKind, GeometryPreset, build_geometry
from .mesh import build_mesh
from .model import CUSTOM_NONLINEARITIES, MassAction, ModelParams


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_mod.parse_config(fh.read())


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _ensure_dir(cfg.output.directory)
    snap_dir = _ensure_dir(os.path.join(out_dir, "snapshots"))
    csv_path = os.path.join(out_dir, "diagnostics.csv")

    with open(csv_path, "w", encoding="utf-8") as csv_fh:
        csv_fh.write(diag_mod.CSV_HEADER + "\n")
        csv_fh.flush()

        def on_record(rec):
            csv_fh.write(rec.csv_row() + "\n")
            csv_fh.flush()

        def on_snapshot(name, index, t, grid):
            path = os.path.join(snap_dir, f"{name}_{index:06d}.txt")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(config_mod.format_snapshot(name, t, grid))

        result = solver_mod.run(
            cfg, on_record=on_record,
            on_snapshot=on_snapshot if cfg.output.snapshots else None)

    recs = result.records
    first, last = recs[0], recs[-1]
    drift1 = abs(last.m1 - first.m1) / max(abs(first.m1), 1e-300)
    drift2 = abs(last.m2 - first.m2) / max(abs(first.m2), 1e-300)
    min_all = min(min(r.min_u, r.min_w, r.min_z) for r in recs)
    eq = result.equilibrium
    report = [
        f"steps to t = {last.t:g} with {cfg.time.stepper} stepper",
        f"masses: m1 = {last.m1:.12g} (rel drift {drift1:.3e}), "
        f"m2 = {last.m2:.12g} (rel drift {drift2:.3e})",
        f"equilibrium ({eq.mode.value}): u = {eq.u_inf:.12g}, w = {eq.w_inf:.12g}, "
        f"z = {eq.z_inf:.12g}",
        f"entropy: start {first.entropy:.6e}, end {last.entropy:.6e}",
        f"min field value over run: {min_all:.3e}",
        f"L1 distances at end: u {last.l1_u:.3e}, w {last.l1_w:.3e}, z {last.l1_z:.3e}",
    ]
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(report) + "\n")
    print(f"run: t={last.t:g} E={last.entropy:.3e} drift=({drift1:.1e},{drift2:.1e}) "
          f"-> {csv_path}")
    return 0


def _cmd_mms(args) -> int:
    out_dir = _ensure_dir(args.out)
    preset = GeometryPreset(
        kind=GeometryKind.ROTATION if args.preset == "rotation" else GeometryKind.FIXED,
        r_inner0=1.0, r_outer0=2.0, omega=1.0 if args.preset == "rotation" else 0.0)
    rows = []
    errs = []
    hs = []
    for level in range(args.levels):
        n_r = args.n0 * (2 ** level)
        n_theta = 2 * n_r
        dt = args.dt0 / (4.0 ** level)  # first-order time: dt ~ h^2 keeps space dominant
        eu, ew, ez = solver_mod.manufactured_solution_error(
            args.case, n_r, n_theta, dt, args.t_final, preset=preset)
        err = max(eu, ew, ez)
        rows.append(f"level {level}: n_r={n_r} n_theta={n_theta} dt={dt:g} "
                    f"err_u={eu:.6e} err_w={ew:.6e} err_z={ez:.6e}")
        errs.append(err)
        hs.append(1.0 / n_r)
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0]) if len(errs) > 1 else float("nan")
    rows.append(f"fitted spatial order: {order:.3f}")
    with open(os.path.join(out_dir, "mms.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    for row in rows:
        print(row)
    return 0


def _cmd_equilibrium(args) -> int:
    mode = EquilibriumMode.PAPER_LITERAL if args.mode == "paper" else EquilibriumMode.RATE_BALANCE
    params = ModelParams(1.0, 1.0, 1.0, args.delta_k, args.delta_k_prime)
    eq = solve_equilibrium(args.m1, args.m2, args.area, args.length, params, mode)
    kappa = 1.0 if mode is EquilibriumMode.PAPER_LITERAL else args.delta_k_prime / args.delta_k
    res_closure = abs(eq.z_inf - kappa * eq.u_inf * eq.w_inf)
    res_m1 = abs(eq.u_inf * args.area + eq.z_inf * args.length - args.m1)
    res_m2 = abs(eq.w_inf * args.length + eq.z_inf * args.length - args.m2)
    line = (f"u={eq.u_inf:.12g} w={eq.w_inf:.12g} z={eq.z_inf:.12g} "
            f"residuals=({res_closure:.2e},{res_m1:.2e},{res_m2:.2e})")
    out_dir = _ensure_dir(args.out)
    with open(os.path.join(out_dir, "equilibrium.txt"), "w", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


def _cmd_probe(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _ensure_dir(cfg.output.directory)
    geom = build_geometry(cfg.geometry)
    mesh = build_mesh(cfg.mesh.n_r, cfg.mesh.n_theta, cfg.geometry.r_inner0,
                      cfg.geometry.r_outer0)
    params = cfg.model.params
    area0 = float(np.sum(mesh.bulk_ref_measures))
    len0 = float(np.sum(mesh.surf_ref_measures))
    eq = solve_equilibrium(cfg.ic.m1, cfg.ic.m2, area0, len0, params,
                           cfg.model.equilibrium_mode)
    lam, worst = diag_mod.probe_functional_inequality(
        eq, geom, mesh, params, cfg.probe.n_samples, cfg.probe.seed)
    lines = [
        f"lambda_probe = {lam:.12g} over {cfg.probe.n_samples} samples (seed {cfg.probe.seed})",
        f"worst sample: index={worst.index} E={worst.entropy:.6e} "
        f"Dtilde={worst.dissipation:.6e}",
    ]
    with open(os.path.join(out_dir, "probe.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(lines[0])
    return 0


def _cmd_check_assumptions(args) -> int:
    from .model import check_assumptions
    params = ModelParams(1.0, 1.0, 1.0, args.delta_k, args.delta_k_prime)
    if args.nonlinearity == "mass_action":
        spec = MassAction(params)
    else:
        name = args.nonlinearity.split(":", 1)[1]
        if name not in CUSTOM_NONLINEARITIES:
            raise _UsageError(f"unknown custom nonlinearity {name!r}")
        spec = CUSTOM_NONLINEARITIES[name](params)
    box = ((args.lo, args.hi),) * 3
    report = check_assumptions(spec, box, args.n, args.seed, args.tol)
    lines = []
    for res in report.results:
        status = "pass" if res.passed else "FAIL"
        extra = f" C={res.fitted_constant:.6g}" if res.fitted_constant is not None else ""
        lines.append(f"{res.name}: {status} ({res.description}) worst={res.worst_value:.3e} "
                     f"at (u,w,z)={tuple(round(x, 6) for x in res.witness)}{extra}")
    out_dir = _ensure_dir(args.out)
    with open(os.path.join(out_dir, "assumptions.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0 if report.all_passed else 2


def _cmd_eig(args) -> int:
    preset = GeometryPreset(GeometryKind.FIXED, r_inner0=args.r_inner, r_outer0=args.r_outer)
    geom = build_geometry(preset)
    mesh = build_mesh(args.n_r, args.n_theta, args.r_inner, args.r_outer)
    consts = diag_mod.estimate_poincare_constants(mesh, geom, t=0.0)
    line = f"c_pw={consts.c_pw:.12g} c_trpw={consts.c_trpw:.12g}"
    out_dir = _ensure_dir(args.out)
    with open(os.path.join(out_dir, "eig.txt"), "w", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


def _cmd_transport_check(args) -> int:
    kind = {"fixed": GeometryKind.FIXED, "rotation": GeometryKind.ROTATION,
            "breathing": GeometryKind.BREATHING,
            "surface_wind": GeometryKind.SURFACE_WIND}[args.preset]
    preset = GeometryPreset(kind, r_inner0=1.0, r_outer0=2.0, amplitude=args.amplitude,
                            omega=1.0, delta=args.delta,
                            wind_speed=0.5 if kind is GeometryKind.SURFACE_WIND else 0.0)
    geom = build_geometry(preset)
    lines = []
    for level in range(args.levels):
        n_r = 16 * (2 ** level)
        mesh = build_mesh(n_r, 2 * n_r, 1.0, 2.0)
        dt = args.dt0 / (2 ** level)
        res = []
        for which in (solver_mod.TransportKind.BULK, solver_mod.TransportKind.SURFACE,
                      solver_mod.TransportKind.SURFACE_GRADIENT):
            if which is solver_mod.TransportKind.BULK:
                r = solver_mod.transport_identity_residual(
                    geom, mesh, args.t, dt,
                    lambda rr, th: 1.0 + 0.3 * np.cos(th) * rr,
                    lambda rr, th: 1.0 + 0.2 * np.sin(2 * th), which)
            else:
                r = solver_mod.transport_identity_residual(
                    geom, mesh, args.t, dt,
                    lambda th: 1.0 + 0.3 * np.cos(th),
                    lambda th: 1.0 + 0.2 * np.cos(th) + 0.1 * np.sin(2 * th), which)
            res.append(r)
        lines.append(f"level {level}: dt={dt:g} bulk={res[0]:.3e} surface={res[1]:.3e} "
                     f"gradient={res[2]:.3e}")
    out_dir = _ensure_dir(args.out)
    with open(os.path.join(out_dir, "transport.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="bulksurf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="advance a configured simulation")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("mms", help="manufactured-solution refinement study")
    p.add_argument("--case", default="sinusoidal")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--preset", choices=["fixed", "rotation"], default="fixed")
    p.add_argument("--n0", type=int, default=16)
    p.add_argument("--dt0", type=float, default=4e-3)
    p.add_argument("--t-final", type=float, default=0.04, dest="t_final")
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_mms)

    p = sub.add_parser("equilibrium", help="solve the homogeneous equilibrium")
    p.add_argument("--m1", type=float, required=True)
    p.add_argument("--m2", type=float, required=True)
    p.add_argument("--area", type=float, required=True)
    p.add_argument("--length", type=float, required=True)
    p.add_argument("--mode", choices=["paper", "rate"], default="rate")
    p.add_argument("--delta-k", type=float, default=1.0, dest="delta_k")
    p.add_argument("--delta-k-prime", type=float, default=1.0, dest="delta_k_prime")
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_equilibrium)

    p = sub.add_parser("probe", help="entropy-dissipation inequality probe")
    p.add_argument("config")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("check-assumptions", help="sampled nonlinearity checks")
    p.add_argument("--nonlinearity", default="mass_action")
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=10.0)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--delta-k", type=float, default=1.0, dest="delta_k")
    p.add_argument("--delta-k-prime", type=float, default=1.0, dest="delta_k_prime")
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_check_assumptions)

    p = sub.add_parser("eig", help="Poincare constants of the discrete operators")
    p.add_argument("--n-r", type=int, default=32, dest="n_r")
    p.add_argument("--n-theta", type=int, default=256, dest="n_theta")
    p.add_argument("--r-inner", type=float, default=1.0, dest="r_inner")
    p.add_argument("--r-outer", type=float, default=2.0, dest="r_outer")
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_eig)

    p = sub.add_parser("transport-check", help="moving-integral transport identities")
    p.add_argument("--preset", default="breathing",
                   choices=["fixed", "rotation", "breathing", "surface_wind"])
    p.add_argument("--t", type=float, default=0.7)
    p.add_argument("--dt0", type=float, default=1e-2)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--amplitude", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_transport_check)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ValidationError) as exc:
        print(f"config error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 1
    except BulkSurfError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
