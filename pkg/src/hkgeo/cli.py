"""Command-line interface: ``hkgeo {distance, geodesic, hopflax, convexity}``.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 certification
FAIL.  Every run writes one ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .convexity import certify, lambda_opt, load_density_spec
from .errors import HKError, InputError, NumericalError
from .geodesics import build_geodesic, sample
from .hopf_lax import (
    GridFunction,
    contact_set,
    default_contact_tolerance,
    hopf_lax_backward,
    hopf_lax_forward,
    transport_map,
)
from .let_solver import SolverOptions, hk_distance, solve_let
from .measures import load_measure, measure_to_dict, rescale_to_canonical
from .serialization import dump_json

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_FAIL = 0, 2, 3, 4


class _Run:
    """Collects outputs and writes the manifest of one invocation."""

    def __init__(self, command: str, args: argparse.Namespace, out_dir: Path):
        self.command = command
        self.out_dir = out_dir
        self.started = time.perf_counter()
        self.outputs: list[str] = []
        self.inputs: dict[str, str] = {}
        self.parameters = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}

    def add_input(self, path) -> None:
        data = Path(path).read_bytes()
        self.inputs[str(path)] = hashlib.sha256(data).hexdigest()

    def write(self, name: str, obj) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        path.write_text(dump_json(obj))
        self.outputs.append(str(path))
        return path

    def finish(self, status: str) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": "hkgeo.manifest",
            "version": 1,
            "command": self.command,
            "parameters": {k: (str(v) if isinstance(v, Path) else v) for k, v in self.parameters.items()},
            "inputs": self.inputs,
            "outputs": self.outputs,
            "status": status,
            "tool_version": __version__,
            "wall_time_seconds": time.perf_counter() - self.started,
        }
        (self.out_dir / "manifest.json").write_text(dump_json(manifest))


def _parse_times(text: str) -> list[float]:
    try:
        times = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"cannot parse times {text!r}") from exc
    if not times:
        raise InputError("at least one time is required")
    return times


def _solver_options(args) -> SolverOptions:
    return SolverOptions(tolerance=args.tolerance, seed=args.seed)


def _cmd_distance(args, run: _Run) -> int:
    run.add_input(args.mu0)
    run.add_input(args.mu1)
    mu0, mu1 = load_measure(args.mu0), load_measure(args.mu1)
    opts = _solver_options(args)
    c0, factor = rescale_to_canonical(args.alpha, args.beta, mu0)
    c1, _ = rescale_to_canonical(args.alpha, args.beta, mu1)
    hk2_canonical, plan, cert = solve_let(c0, c1, opts)
    hk2 = factor * hk2_canonical
    result = {
        "format": "hkgeo.distance",
        "version": 1,
        "alpha": args.alpha,
        "beta": args.beta,
        "hk": math.sqrt(max(hk2, 0.0)),
        "hk_squared": hk2,
    }
    certificate = {
        "format": "hkgeo.certificate",
        "version": 1,
        "max_complementarity_violation": cert.max_complementarity_violation,
        "max_feasibility_violation": cert.max_feasibility_violation,
        "duality_gap": cert.duality_gap,
        "primal_value": cert.primal_value,
        "dual_value": cert.dual_value,
    }
    plan_obj = {
        "format": "hkgeo.plan",
        "version": 1,
        "entries": [{"i": i, "j": j, "weight": w} for i, j, w in plan.entries],
        "sigma0": plan.sigma0,
        "sigma1": plan.sigma1,
    }
    run.write("plan.json", plan_obj)
    run.write("certificate.json", certificate)
    run.write("result.json", result)
    sys.stdout.write(dump_json(result))
    return EXIT_OK


def _cmd_geodesic(args, run: _Run) -> int:
    run.add_input(args.mu0)
    run.add_input(args.mu1)
    mu0, mu1 = load_measure(args.mu0), load_measure(args.mu1)
    times = _parse_times(args.times)
    if any(not (0.0 <= t <= 1.0) for t in times):
        raise InputError("times must lie in [0, 1]")
    curve = build_geodesic(mu0, mu1, _solver_options(args))
    rows = []
    for k, t in enumerate(times):
        mu_t = sample(curve, t)
        path = run.write(f"snapshot_{k:03d}.json", measure_to_dict(mu_t))
        rows.append({"t": t, "mass": mu_t.total_mass(), "n_atoms": mu_t.n_atoms, "file": path.name})
    # least-squares fit of the mass profile by a quadratic in t
    ts = np.array(times)
    masses = np.array([r["mass"] for r in rows])
    fit = None
    if len(times) >= 3:
        coeffs = np.polyfit(ts, masses, 2)
        fit = {"coefficients": coeffs, "max_residual": float(np.max(np.abs(np.polyval(coeffs, ts) - masses)))}
    summary = {
        "format": "hkgeo.geodesic",
        "version": 1,
        "hk_squared": curve.hk_squared,
        "n_pairs": len(curve.pairs),
        "snapshots": rows,
        "mass_fit": fit,
    }
    if args.verify:
        opts = _solver_options(args)
        hk = math.sqrt(curve.hk_squared)
        checks = []
        for s, t in [(0.0, 0.5), (0.5, 1.0), (0.25, 0.75)]:
            d = hk_distance(sample(curve, s), sample(curve, t), options=opts)
            checks.append({"s": s, "t": t, "hk": d, "expected": (t - s) * hk, "error": abs(d - (t - s) * hk)})
        summary["constant_speed"] = {
            "checks": checks,
            "max_error": max(c["error"] for c in checks),
            "passed": max(c["error"] for c in checks) <= 1e-5,
        }
    run.write("geodesic.json", summary)
    sys.stdout.write(dump_json({k: summary[k] for k in ("hk_squared", "n_pairs", "mass_fit")}))
    return EXIT_OK


def _load_grid_function(path) -> GridFunction:
    return GridFunction.from_dict(json.loads(Path(path).read_text()))


def _finite_bounds(values: np.ndarray):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return -0.5, 0.5
    return float(np.min(finite)), float(np.max(finite))


def _cmd_hopflax(args, run: _Run) -> int:
    run.add_input(args.grid)
    grid = _load_grid_function(args.grid)
    times = _parse_times(args.times)
    if args.pair is None:
        rows = []
        for k, t in enumerate(times):
            if args.direction == "forward":
                out = hopf_lax_forward(grid, t)
            else:
                out = hopf_lax_backward(grid, t)
            path = run.write(f"{args.direction}_{k:03d}.json", out.to_dict())
            rows.append({"t": t, "file": path.name})
        run.write("hopflax.json", {"format": "hkgeo.hopflax", "version": 1, "direction": args.direction,
                                    "snapshots": rows})
        return EXIT_OK
    run.add_input(args.pair)
    backward_grid = _load_grid_function(args.pair)
    lower, _ = _finite_bounds(grid.values)
    _, upper = _finite_bounds(backward_grid.values)
    rows = []
    first = None
    for k, t in enumerate(times):
        if not (0.0 < t < 1.0):
            raise InputError("pair mode needs times in (0, 1)")
        xi_t = hopf_lax_forward(grid, t)
        xibar_t = hopf_lax_backward(backward_grid, t, query=grid)
        tol = args.tolerance if args.contact_tolerance is None else args.contact_tolerance
        if args.contact_tolerance is None:
            tol = default_contact_tolerance(t, grid.spacing, lower=lower, upper=upper)
        cs = contact_set(xi_t, xibar_t, tol, t=t)
        entry = {
            "t": t,
            "tolerance": cs.tolerance,
            "contact_nodes": cs.indices().tolist(),
            "contact_positions": [grid.node(i).tolist() for i in cs.indices()],
            "pure_decay_nodes": np.argwhere(cs.minus_mask).tolist(),
            "pure_growth_nodes": np.argwhere(cs.plus_mask).tolist(),
        }
        if first is None:
            first = (t, xi_t, cs)
        else:
            s, xi_s, cs_s = first
            maps = []
            for idx in cs_s.indices():
                x = grid.node(idx)
                if not np.all(np.isfinite(xi_s.values)):
                    g = _local_gradient(xi_s, tuple(idx))
                else:
                    g = None
                try:
                    T, q = transport_map(xi_s, s, t, x, gradient=g)
                except NumericalError:
                    continue
                maps.append({"x": x.tolist(), "T": T.tolist(), "q": q})
            entry["maps_from_first_time"] = maps
        path = run.write(f"pair_{k:03d}.json", entry)
        rows.append({"t": t, "file": path.name, "n_contact": cs.count()})
    run.write("hopflax.json", {"format": "hkgeo.hopflax_pair", "version": 1, "snapshots": rows})
    return EXIT_OK


def _local_gradient(f: GridFunction, idx) -> np.ndarray:
    """Central differences at one node, one-sided where a neighbour is missing or infinite."""
    g = np.zeros(f.dimension)
    vals = f.values
    for axis in range(f.dimension):
        h = f.spacing[axis]
        up = list(idx)
        dn = list(idx)
        up[axis] += 1
        dn[axis] -= 1
        v0 = vals[idx]
        vu = vals[tuple(up)] if up[axis] < f.shape[axis] else np.inf
        vd = vals[tuple(dn)] if dn[axis] >= 0 else np.inf
        if np.isfinite(vu) and np.isfinite(vd):
            g[axis] = (vu - vd) / (2 * h)
        elif np.isfinite(vu):
            g[axis] = (vu - v0) / h
        elif np.isfinite(vd):
            g[axis] = (v0 - vd) / h
    return g


def _cmd_convexity(args, run: _Run) -> int:
    run.add_input(args.spec)
    E = load_density_spec(args.spec)
    if args.optimal:
        lam, c_star = lambda_opt(E, args.dimension)
        report = certify(E, args.dimension, lam - args.tolerance)
        payload = report.to_dict()
        payload["lambda_opt"] = lam
        payload["c_star"] = c_star
    else:
        report = certify(E, args.dimension, args.lam)
        payload = report.to_dict()
    run.write(args.out_name, payload)
    sys.stdout.write(dump_json({"verdict": payload["verdict"], "failing_condition": payload["failing_condition"],
                                "lambda": payload.get("lambda_opt", payload["lambda"])}))
    return EXIT_OK if report.overall else EXIT_FAIL


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HKGEO_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tolerance", type=float, default=1e-6, help="numerical tolerance (default 1e-6)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised steps")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker threads (default: $HKGEO_THREADS or 1)")
    common.add_argument("--out", type=Path, default=Path("hkgeo_output"), help="output directory")

    parser = argparse.ArgumentParser(prog="hkgeo", description="Hellinger-Kantorovich geometry tools")
    parser.add_argument("--version", action="version", version=f"hkgeo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distance", parents=[common], help="HK distance between two measure files")
    p.add_argument("mu0")
    p.add_argument("mu1")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=4.0)
    p.set_defaults(func=_cmd_distance)

    p = sub.add_parser("geodesic", parents=[common], help="sample the HK geodesic between two measures")
    p.add_argument("mu0")
    p.add_argument("mu1")
    p.add_argument("--times", default="0,0.25,0.5,0.75,1")
    p.add_argument("--verify", action="store_true", help="re-solve distances to check constant speed")
    p.set_defaults(func=_cmd_geodesic)

    p = sub.add_parser("hopflax", parents=[common], help="Hopf-Lax flow of a grid potential")
    p.add_argument("grid")
    p.add_argument("--direction", choices=("forward", "backward"), default="forward")
    p.add_argument("--times", default="0.25,0.5,0.75")
    p.add_argument("--pair", default=None, help="backward terminal potential; emits contact sets and maps")
    p.add_argument("--contact-tolerance", type=float, default=None,
                   help="contact equality tolerance (default: derived from the grid spacing)")
    p.set_defaults(func=_cmd_hopflax)

    p = sub.add_parser("convexity", parents=[common], help="certify geodesic lambda-convexity of E")
    p.add_argument("spec", help="density specification file (JSON or 'family key=value ...')")
    p.add_argument("--dimension", "-d", type=int, required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--lambda", dest="lam", type=float, default=0.0)
    group.add_argument("--optimal", action="store_true")
    p.add_argument("--out-name", default="report.json")
    p.set_defaults(func=_cmd_convexity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    if args.threads < 1:
        sys.stderr.write("hkgeo: --threads must be at least 1\n")
        return EXIT_INPUT
    run = _Run(args.command, args, args.out)
    try:
        code = args.func(args, run)
    except (InputError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        sys.stderr.write(f"hkgeo: input error: {exc}\n")
        run.finish("input_error")
        return EXIT_INPUT
    except NumericalError as exc:
        sys.stderr.write(f"hkgeo: numerical failure: {type(exc).__name__}: {exc}\n")
        run.finish("numerical_failure")
        return EXIT_NUMERICAL
    except HKError as exc:
        sys.stderr.write(f"hkgeo: {exc}\n")
        run.finish("error")
        return EXIT_NUMERICAL
    run.finish("ok" if code == EXIT_OK else "certification_fail")
    return code


if __name__ == "__main__":
    sys.exit(main())
