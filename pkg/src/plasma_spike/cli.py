"""Command line entry point: ``plasma-spike <subcommand> [options]``.

Every run prints one JSON report and appends it to ``<out-dir>/<hash>.jsonl``,
where ``<hash>`` is the SHA-256 of the run's manifest (subcommand, parameters
and tool version).  Reports are validated against the schemas in
``plasma_spike/schemas`` before they are written.

Exit codes: 0 success, 1 an asserted check failed, 2 usage error.

Heavy modules are imported inside the handlers so that ``--threads`` can set
the thread-pool environment before the numerical libraries load.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

from . import __version__

SUBCOMMANDS = ("profile", "greens", "kr-critical", "balance", "solve", "verify", "report")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")
UNHASHED = {"out_dir", "threads", "config", "quiet"}


class UsageError(Exception):
    pass


def _floats(text: str, name: str, count: int | None = None) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise UsageError(f"{name}: expected {count} values, got {len(vals)}")
    return vals


def _config(N, p):
    from .model_core import make_config

    if p is None:
        p = 1.0 + 0.5 * (N / (N - 2) - 1.0)
    try:
        return make_config(N, p)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _rng(args):
    import numpy as np

    return np.random.default_rng(args.seed)


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


class Checks:
    """Collects asserted comparisons; any failure makes the run exit 1."""

    def __init__(self):
        self.failures = []

    def at_most(self, name, value, limit):
        if not (value is not None and value <= limit):
            self.failures.append({"check": name, "value": value, "limit": f"<= {limit}"})

    def at_least(self, name, value, limit):
        if not (value is not None and value >= limit):
            self.failures.append({"check": name, "value": value, "limit": f">= {limit}"})

    def equal(self, name, value, expected):
        if value != expected:
            self.failures.append({"check": name, "value": value, "limit": f"== {expected}"})


# ---------------------------------------------------------------- handlers


def cmd_profile(args, checks):
    from .radial_profile import mass_closed_form, shoot

    cfg = _config(args.N, args.p)
    prof = shoot(cfg, tol=args.tol)
    out = {"N": cfg.N, "p": cfg.p, **prof.summary(), "M_p0_closed_form": mass_closed_form(prof)}
    rel = abs(out["M_p0"] - out["M_p0_closed_form"]) / out["M_p0_closed_form"]
    out["mass_relative_gap"] = rel
    checks.equal("glue_value_gap", out["glue_value_gap"], 0.0)
    checks.at_most("glue_slope_gap", out["glue_slope_gap"], 1e-8)
    checks.at_most("pohozaev_residual", out["pohozaev_residual"], 1e-6)
    checks.at_most("mass_relative_gap", rel, 1e-6)
    if args.csv:
        import numpy as np

        np.savetxt(args.csv, np.column_stack([prof.r, prof.u, prof.du]), delimiter=",",
                   header="r,u,du", comments="")
        out["csv"] = str(args.csv)
    return out


def _kernel(domain, cfg):
    from .green_kernels import half_space, unit_ball

    return unit_ball(cfg) if domain == "ball" else half_space(cfg)


def cmd_greens(args, checks):
    from .green_kernels import halfspace_convergence_check, kernel_self_check, robin_boundary_bound_check

    cfg = _config(args.N, args.p)
    rng = _rng(args)
    K = _kernel(args.domain, cfg)
    out = {"kernel": K.to_json(), "self_check": kernel_self_check(K, args.samples, rng)}
    sc = out["self_check"]
    checks.at_most("boundary_zero", sc["boundary_zero"], 1e-10)
    checks.at_most("symmetry", sc["symmetry"], 1e-10)
    checks.at_most("gradient_fd", sc["gradient_fd"], 1e-6)
    checks.at_most("rescaling", sc["rescaling"], 1e-12)
    if args.domain == "ball" and args.check in ("all", "bound"):
        rb = robin_boundary_bound_check(K, args.samples, rng)
        out["robin_bound"] = rb
        checks.equal("robin_bound_finite", rb["finite"], True)
    if args.check in ("all", "halfspace"):
        hc = halfspace_convergence_check([0.2, 0.1, 0.05, 0.025], cfg)
        out["halfspace_convergence"] = hc
        checks.equal("halfspace_convergence", hc["passed"], True)
    return out


def cmd_kr_critical(args, checks):
    import numpy as np

    from .kirchhoff_routh import find_critical, hamiltonian, hamiltonian_grad, solve_symmetric_pair

    cfg = _config(args.N, args.p)
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    w = _floats(args.weights, "--weights", args.k) if args.weights else [1.0] * args.k
    if any(x == 0 for x in w):
        raise UsageError("--weights must be nonzero")
    K = _kernel(args.domain, cfg)
    configs, diag = find_critical(K, args.k, w, restarts=args.restarts, tol=args.tol, rng=_rng(args))
    found = []
    for c in configs:
        g = float(np.max(np.abs(hamiltonian_grad(c))))
        found.append({**c.to_json(), "hamiltonian": hamiltonian(c), "grad_norm": g})
        checks.at_most("critical_grad_norm", g, args.tol)
    out = {"k": args.k, "weights": w, "kernel": K.to_json(), "configurations": found, "diagnostics": diag}
    if args.domain == "ball" and args.k == 2:
        out["symmetric_pair_roots"] = solve_symmetric_pair(K, tuple(w))
    return out


def cmd_balance(args, checks):
    from .balance_system import fuzz_certificates, minimize_residual

    if args.mode == "interior" and args.k < 2:
        raise UsageError("interior mode needs --k >= 2")
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    if args.fuzz < 0 or args.restarts < 0:
        raise UsageError("--fuzz and --restarts must be non-negative")
    rng = _rng(args)
    out = {"mode": args.mode, "k": args.k, "violations": 0, "nonpositive_bounds": 0,
           "min_certified_bound": None, "min_residual_found": None, "fuzz": None, "minimization": None}
    candidates = []
    if args.fuzz:
        fz = fuzz_certificates(args.mode, args.k, args.fuzz, args.N, rng)
        out.update(fuzz=fz, violations=fz["violations"], nonpositive_bounds=fz["nonpositive_bounds"],
                   min_certified_bound=fz["min_certified_bound"])
        candidates.append(fz["min_residual_sampled"])
        checks.equal("violations", fz["violations"], 0)
        checks.equal("nonpositive_bounds", fz["nonpositive_bounds"], 0)
    if args.restarts:
        mr = minimize_residual(args.mode, args.k, args.restarts, args.N, rng)
        out["minimization"] = mr
        candidates.append(mr["best_value"])
        if args.mode == "interior":
            checks.at_least("min_residual_found", mr["best_value"], 1e-3)
        else:
            checks.equal("positive", mr["positive"], True)
    vals = [c for c in candidates if c is not None]
    out["min_residual_found"] = min(vals) if vals else None
    return out


def _load_profile(p):
    from .radial_profile import shoot

    return shoot(_config(3, p))


def cmd_solve(args, checks):
    import numpy as np

    from . import pde_solver as ps

    if not (args.mu > 0 and math.isfinite(args.mu)):
        raise UsageError(f"--mu must be a positive number, got {args.mu}")
    if args.res not in ps.SUPPORTED_RESOLUTIONS:
        raise UsageError(f"--res must be one of {ps.SUPPORTED_RESOLUTIONS}")
    path = _floats(args.mu_path, "--mu-path") if args.mu_path else []
    seq = path + [args.mu]
    if any(m <= 0 for m in seq) or any(b <= a for a, b in zip(seq, seq[1:])):
        raise UsageError("--mu-path values must be positive and increase strictly up to --mu")
    centers = [_floats(c, "--seed-center", 3) for c in (args.seed_center or ["0,0,0"])]
    prof = _load_profile(args.p)
    grid = ps.build_grid(args.res)
    try:
        seed = ps.seed_spike(grid, np.array(centers), prof, seq[0])
    except ValueError as exc:
        hint = ""
        if "unresolvable" in str(exc):
            hint = f" (continue from a resolvable value, e.g. --mu-path {ps.max_resolvable_mu(grid, prof):.4g})"
        raise UsageError(str(exc) + hint) from None
    results = ps.continue_in_mu(seed, seq, tol=args.tol, max_iter=args.max_iter,
                                center=np.array(centers) if args.fixed_centers else None)
    last = results[-1]
    rep = ps.extract_spikes(last.field, args.sigma, prof.R0)
    dump = None
    if args.dump:
        ps.write_field(args.dump, last.field)
        dump = str(args.dump)
    steps = [{"mu": r.field.mu, "status": r.status, "residual": r.residual, "iterations": r.iterations}
             for r in results]
    out = {
        "mu": last.field.mu,
        "resolution": args.res,
        "status": last.status,
        "residual": last.residual,
        "iterations": last.iterations,
        "mu_path": seq,
        "steps": steps,
        "spikes": rep.to_json(),
        "eps_R0": last.field.epsilon * prof.R0,
        "M_p0": prof.M_p0,
        "min_value": float(last.field.values.min()),
        "dump": dump,
    }
    checks.equal("status", last.status if len(results) == len(seq) else "stopped early", "converged")
    checks.at_most("residual", last.residual, args.tol)
    checks.at_least("min_value", out["min_value"], -10 * grid.h ** 2)
    checks.equal("containment", rep.containment_ok, True)
    return out


def cmd_verify(args, checks):
    import numpy as np

    from . import asymptotics_verifier as av
    from . import pde_solver as ps
    from .green_kernels import unit_ball

    try:
        field = ps.read_field(args.field, _config(3, args.p))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read field dump: {exc}") from None
    prof = _load_profile(args.p)
    rep = ps.extract_spikes(field, args.sigma, prof.R0)
    K = unit_ball(field.config)
    h = field.h
    run_all = args.all or not (args.farfield or args.profile or args.mass or args.pohozaev)
    res = {}

    def add(name, measured, baseline=None, ok=None):
        res[name] = {"measured": measured, "baseline": baseline, "within_baseline": ok}

    vmin = float(field.values.min())
    add("nonnegativity", vmin, -10 * h ** 2, vmin >= -10 * h ** 2)
    add("spikes", {"count": len(rep.centers), **rep.to_json()})
    add("containment", rep.containment_ok, True, rep.containment_ok)
    checks.at_least("nonnegativity", vmin, -10 * h ** 2)
    checks.equal("containment", rep.containment_ok, True)
    if run_all or args.mass:
        measured, expected, Z = av.mass_quantization_check(field, rep, prof)
        rel = abs(measured - expected) / expected if expected else None
        add("mass_quantization", {"measured": measured, "expected": expected, "Z": Z, "relative_error": rel},
            0.1, None if rel is None else rel <= 0.1)
        if Z:
            add("spike_masses", av.spike_masses(field, rep, prof))
    if rep.centers and (run_all or args.farfield):
        try:
            rr = av.farfield_remainder(field, rep, prof, K, args.r)
            add("farfield_remainder", rr.to_json(), 0.1, rr.ratio <= 0.1)
        except ValueError as exc:
            add("farfield_remainder", {"skipped": str(exc)})
    if rep.centers and (run_all or args.profile):
        errs = []
        for c in rep.centers:
            try:
                errs.append(av.local_profile_error(field, c, prof, args.R_factor * prof.R0) / prof.w0_center)
            except ValueError as exc:
                errs.append(str(exc))
        numeric = [e for e in errs if isinstance(e, float)]
        add("local_profile_relative", errs, 0.05, bool(numeric) and max(numeric) <= 0.05)
    if rep.centers and (run_all or args.pohozaev):
        eps = field.epsilon
        scaled = av.GridSampler(field, scale=eps ** (2 - field.config.N))
        vals = []
        for c in rep.centers:
            r = args.r / 2
            if np.linalg.norm(c) + r + 2 * h >= 1.0:
                vals.append(None)
                continue
            P = av.pohozaev_surface(scaled, c, r, 32)
            pred = (prof.M_p0 ** 2 * field.config.C_N * (field.config.N - 2) * field.config.sphere_area
                    * K.grad_H(np.asarray(c), np.asarray(c)))
            for o in rep.centers:
                if o is not c:
                    pred = pred + (prof.M_p0 ** 2 * field.config.C_N * (field.config.N - 2)
                                   * field.config.sphere_area * K.grad_G(np.asarray(c), np.asarray(o)))
            vals.append({"center": list(map(float, c)), "radius": r, "integral": P.tolist(),
                         "green_prediction": np.asarray(pred).tolist()})
        add("pohozaev_grid", vals)
    return {"field": str(args.field), "mu": field.mu, "resolution": field.grid.n, "checks": res}


def cmd_report(args, checks):
    directory = Path(args.in_dir)
    if not directory.is_dir():
        raise UsageError(f"--in-dir {directory} is not a directory")
    rows, invalid = [], []
    for path in sorted(directory.glob("*.jsonl")):
        for n, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                rep = json.loads(line)
                validate_report(rep)
            except Exception as exc:  # noqa: BLE001 - every malformed line is reported
                invalid.append(f"{path.name}:{n}: {exc.__class__.__name__}")
                continue
            m = rep["manifest"]
            rows.append({"file": path.name, "line": n, "subcommand": m["subcommand"],
                         "config_hash": m["config_hash"], "status": rep["status"],
                         "failures": len(rep["failures"]), "wall_clock_seconds": m["wall_clock_seconds"]})
    checks.equal("invalid_reports", len(invalid), 0)
    out = {"directory": str(directory), "reports": len(rows), "invalid": invalid, "rows": rows}
    if args.format == "csv":
        buf = io.StringIO()
        fields = ["file", "line", "subcommand", "config_hash", "status", "failures", "wall_clock_seconds"]
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
        out["csv"] = buf.getvalue()
    return out


HANDLERS = {
    "profile": cmd_profile,
    "greens": cmd_greens,
    "kr-critical": cmd_kr_critical,
    "balance": cmd_balance,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "report": cmd_report,
}


# ------------------------------------------------------------- reporting


def _schema(name):
    return json.loads(resources.files("plasma_spike").joinpath("schemas", name).read_text())


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` unless ``report`` matches the published schemas."""
    import jsonschema

    jsonschema.validate(report, _schema("report.schema.json"))
    sub = report["manifest"]["subcommand"]
    name = "report-summary" if sub == "report" else sub
    jsonschema.validate(report["result"], _schema(f"{name}.schema.json"))


def manifest_hash(subcommand: str, parameters: dict) -> str:
    payload = {"subcommand": subcommand, "parameters": parameters, "tool_version": __version__}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed of the single random generator")
    common.add_argument("--threads", type=int, default=None,
                        help="cap on worker threads (falls back to PLASMA_SPIKE_THREADS)")
    common.add_argument("--out-dir", default="plasma-spike-reports", help="directory for report files")
    common.add_argument("--config", default=None, help="JSON file with default option values")
    common.add_argument("--quiet", action="store_true", help="do not print the report")

    parser = argparse.ArgumentParser(prog="plasma-spike", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    sp = sub.add_parser("profile", parents=[common], help="radial ground state and glued profile")
    sp.add_argument("--N", type=int, default=3)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--csv", default=None, help="write the stored (r, u, u') samples to this path")

    sp = sub.add_parser("greens", parents=[common], help="Green and Robin function checks")
    sp.add_argument("--domain", choices=["ball", "half-space"], default="ball")
    sp.add_argument("--N", type=int, default=3)
    sp.add_argument("--p", type=float, default=None)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--check", choices=["self", "bound", "halfspace", "all"], default="all",
                    help="which checks to run beyond the kernel self-check")

    sp = sub.add_parser("kr-critical", parents=[common], help="critical points of the Kirchhoff-Routh function")
    sp.add_argument("--domain", choices=["ball", "half-space"], default="ball")
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--weights", default=None, help="comma-separated, default all ones")
    sp.add_argument("--restarts", type=int, default=16)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--N", type=int, default=3)
    sp.add_argument("--p", type=float, default=None)

    sp = sub.add_parser("balance", parents=[common], help="force-balance certificates and minimization")
    sp.add_argument("--mode", choices=["interior", "boundary"], required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--fuzz", type=int, default=0, help="random configurations to certify")
    sp.add_argument("--restarts", type=int, default=0, help="minimization restarts")
    sp.add_argument("--N", type=int, default=3)

    sp = sub.add_parser("solve", parents=[common], help="spike solutions on the unit ball (N=3)")
    sp.add_argument("--mu", type=float, required=True)
    sp.add_argument("--res", type=int, default=129)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--seed-center", action="append", default=None,
                    help="x,y,z of a seeded spike (repeat for several)")
    sp.add_argument("--mu-path", default=None, help="increasing mu values solved before --mu")
    sp.add_argument("--fixed-centers", action="store_true",
                    help="rescale about the seed centers instead of detected maxima")
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=50)
    sp.add_argument("--dump", default=None, help="write the final field to this path")

    sp = sub.add_parser("verify", parents=[common], help="asymptotic checks on a field dump")
    sp.add_argument("--field", required=True)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--r", type=float, default=0.3, help="far-field exclusion radius")
    sp.add_argument("--R-factor", type=float, default=2.0, help="local profile ball radius in units of R0")
    sp.add_argument("--all", action="store_true")
    sp.add_argument("--farfield", action="store_true")
    sp.add_argument("--profile", action="store_true")
    sp.add_argument("--mass", action="store_true")
    sp.add_argument("--pohozaev", action="store_true")

    sp = sub.add_parser("report", parents=[common], help="summarize stored reports")
    sp.add_argument("--in-dir", default="plasma-spike-reports")
    sp.add_argument("--format", choices=["json", "csv"], default="json")
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read --config: {exc}")
        if not isinstance(overrides, dict):
            parser.error("--config must hold a JSON object")
        known = set(vars(args))
        bad = sorted(set(overrides) - known)
        if bad:
            parser.error(f"unknown keys in --config: {', '.join(bad)}")
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        subparsers.choices[args.command].set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def _apply_threads(args):
    threads = args.threads
    if threads is None and os.environ.get("PLASMA_SPIKE_THREADS"):
        try:
            threads = int(os.environ["PLASMA_SPIKE_THREADS"])
        except ValueError:
            raise UsageError("PLASMA_SPIKE_THREADS must be an integer") from None
    if threads is None:
        return None
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    for var in THREAD_VARS:
        os.environ[var] = str(threads)
    if "numba" in sys.modules:
        import numba

        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    return threads


def run(argv=None) -> tuple[int, dict | None]:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0), None
    try:
        _apply_threads(args)
        params = {k: v for k, v in sorted(vars(args).items()) if k not in ("command",) and k not in UNHASHED}
        digest = manifest_hash(args.command, params)
        checks = Checks()
        t0 = time.perf_counter()
        result = HANDLERS[args.command](args, checks)
        elapsed = time.perf_counter() - t0
    except UsageError as exc:
        print(f"plasma-spike {args.command}: error: {exc}", file=sys.stderr)
        return 2, None
    report = _jsonable({
        "manifest": {
            "subcommand": args.command,
            "parameters": params,
            "config_hash": digest,
            "tool_version": __version__,
            "wall_clock_seconds": elapsed,
        },
        "status": "fail" if checks.failures else "pass",
        "failures": checks.failures,
        "result": result,
    })
    validate_report(report)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{digest}.jsonl", "a") as fh:
        fh.write(json.dumps(report, sort_keys=True) + "\n")
    if not args.quiet:
        if args.command == "report" and args.format == "csv":
            sys.stdout.write(result["csv"])
        else:
            print(json.dumps(report, indent=2, sort_keys=True))
    return (1 if checks.failures else 0), report


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
