"""Command-line entry point: ``shallow-lake {solve,simulate,verify,sweep}``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 solver
non-convergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConvergenceError, LakeError
from .hjb import DIFFUSION_VARIANTS, Grid, SolveOptions, ValueFunction, gradient, solve
from .model import PARAM_KEYS, LakeParams
from .sde import INTEGRATORS, Benchmark, Constant, Feedback, PathConfig, mc_payoff, simulate_paths
from .verify import CheckResult, run_suite, tail_residuals

log = logging.getLogger("shallow_lake")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    params: LakeParams
    grid: dict
    solver: dict
    paths: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "params": self.params.to_dict(),
            "grid": self.grid,
            "solver": self.solver,
            "paths": self.paths,
            "extra": self.extra,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# file formats


def _fmt(x: float) -> str:
    return repr(float(x))


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_solution(path: Path, v: ValueFunction, digest: str) -> None:
    grad = gradient(v)
    lines = [
        "# shallow-lake solution",
        f"# config_hash: {digest}",
        f"# params: {json.dumps(v.params.to_dict(), sort_keys=True)}",
        f"# grid: {json.dumps({'l': v.grid.l, 'n': v.grid.n}, sort_keys=True)}",
        f"# diffusion: {v.diffusion}",
        "x,V,dV,u_star",
    ]
    for x, val, g in zip(v.nodes, v.values, grad):
        lines.append(",".join((_fmt(x), _fmt(val), _fmt(g), _fmt(-1.0 / g))))
    path.write_text("\n".join(lines) + "\n")


def read_solution(path) -> ValueFunction:
    """Load a solution CSV written by ``solve``; raises ConfigurationError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read solution file {path}: {exc}") from None
    meta, rows = {}, []
    try:
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line and not line.startswith("x,"):
                rows.append([float(tok) for tok in line.split(",")])
        params = LakeParams.from_mapping(json.loads(meta["params"]))
        grid = Grid(**json.loads(meta["grid"]))
        values = np.array(rows)[:, 1]
        return ValueFunction(grid, values, params, meta.get("diffusion", "x2"))
    except (KeyError, ValueError, IndexError, json.JSONDecodeError, LakeError) as exc:
        raise ConfigurationError(f"malformed solution file {path}: {exc}") from None


# ---------------------------------------------------------------------------
# argument handling


def _add_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value or JSON file with rho, b, c, sigma")
    for key in PARAM_KEYS:
        p.add_argument(f"--{key}", type=float, default=None)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--l", type=float, default=10.0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--method", choices=("newton", "gauss-seidel"), default="newton")
    p.add_argument("--scheme-diffusion", choices=DIFFUSION_VARIANTS, default="x2")


def _add_paths(p: argparse.ArgumentParser, t_max=None, dt=0.01) -> None:
    p.add_argument("--t-max", type=float, default=t_max)
    p.add_argument("--dt", type=float, default=dt)
    p.add_argument("--integrator", choices=INTEGRATORS, default="kernel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shallow-lake", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the discrete HJB equation")
    _add_params(p)
    _add_grid(p)

    p = sub.add_parser("simulate", help="Monte Carlo payoff of a policy")
    _add_params(p)
    _add_paths(p)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--policy", default="benchmark",
                   help="constant:U0 | benchmark | feedback:<solution.csv>")
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--dump-paths", type=int, default=0, help="write the first N paths to CSV")

    p = sub.add_parser("verify", help="run the oracle suite")
    _add_params(p)
    _add_grid(p)
    _add_paths(p)
    p.add_argument("--solution", type=Path, help="check this solution instead of solving")
    p.add_argument("--appendix-paths", type=int, default=100_000)
    p.add_argument("--policy-paths", type=int, default=10_000)
    p.add_argument("--feedback-paths", type=int, default=100_000)
    p.add_argument("--no-mc", action="store_true", help="skip Monte Carlo checks")

    p = sub.add_parser("sweep", help="solve along one parameter axis")
    _add_params(p)
    _add_grid(p)
    p.add_argument("--axis", choices=PARAM_KEYS, required=True)
    p.add_argument("--values", default="", help="comma-separated values")
    return parser


def _params_from(args) -> LakeParams:
    base = LakeParams.from_file(args.config) if args.config else LakeParams()
    overrides = {k: getattr(args, k) for k in PARAM_KEYS if getattr(args, k) is not None}
    return base.with_(**overrides) if overrides else base


def _solver_opts(args) -> SolveOptions:
    return SolveOptions(tol=args.tol, max_sweeps=args.max_sweeps, method=args.method,
                        diffusion=args.scheme_diffusion)


def _path_cfg(args, params: LakeParams) -> PathConfig:
    if args.t_max is None:
        return PathConfig.default_for(params, dt=args.dt, integrator=args.integrator, seed=args.seed)
    return PathConfig(t_max=args.t_max, dt=args.dt, integrator=args.integrator, seed=args.seed)


def parse_policy(text: str):
    kind, _, arg = text.partition(":")
    if kind == "benchmark" and not arg:
        return Benchmark()
    if kind == "constant":
        try:
            return Constant(float(arg))
        except ValueError:
            raise ConfigurationError(f"bad constant policy {text!r}") from None
    if kind == "feedback":
        if not arg:
            raise ConfigurationError("feedback policy needs a solution file: feedback:<file>")
        return Feedback(read_solution(arg))
    raise ConfigurationError(f"unknown policy {text!r}")


# ---------------------------------------------------------------------------
# commands


def _prepare_out(args, cfg: RunConfig) -> str:
    args.out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    write_json(args.out / "config.json", {"config_hash": digest, **cfg.to_dict()})
    return digest


def cmd_solve(args) -> int:
    params = _params_from(args)
    grid = Grid(args.l, args.n)
    opts = _solver_opts(args)
    cfg = RunConfig("solve", params, asdict(grid), _opts_dict(opts))
    digest = _prepare_out(args, cfg)
    try:
        v, report = solve(params, grid, opts)
    except ConvergenceError as exc:
        if exc.report is not None:
            _write_report(args.out / "report.json", exc.report, digest)
        raise
    write_solution(args.out / "solution.csv", v, digest)
    _write_report(args.out / "report.json", report, digest)
    log.info("solved in %d iterations (%.3fs), V(0) = %.10g",
             report.iterations, report.wall_time, v.values[0])
    return EXIT_OK


def _opts_dict(opts: SolveOptions) -> dict:
    return {"tol": opts.tol, "max_sweeps": opts.max_sweeps, "method": opts.method,
            "diffusion": opts.diffusion}


def _write_report(path: Path, report, digest: str) -> None:
    # wall time is logged, not written, so reruns reproduce the file byte for byte
    data = report.to_dict()
    data.pop("wall_time", None)
    write_json(path, {"config_hash": digest, **data})


def cmd_simulate(args) -> int:
    params = _params_from(args)
    policy = parse_policy(args.policy)
    if isinstance(policy, Feedback) and policy.value.params != params:
        log.warning("solution parameters %s differ from run parameters %s",
                    policy.value.params, params)
    path_cfg = _path_cfg(args, params)
    cfg = RunConfig("simulate", params, {}, {}, asdict(path_cfg),
                    {"x0": args.x0, "policy": args.policy, "paths": args.paths})
    digest = _prepare_out(args, cfg)
    est = mc_payoff(args.x0, policy, path_cfg, args.paths, params)
    write_json(args.out / "estimate.json", {"config_hash": digest, **est.to_dict()})
    if args.dump_paths > 0:
        t, xs, us, _ = simulate_paths(args.x0, policy, path_cfg, params, args.dump_paths)
        lines = [f"# config_hash: {digest}", "path,t,x,u"]
        for i in range(xs.shape[0]):
            lines.extend(f"{i},{_fmt(tk)},{_fmt(xk)},{_fmt(uk)}" for tk, xk, uk in zip(t, xs[i], us[i]))
        (args.out / "paths.csv").write_text("\n".join(lines) + "\n")
    log.info("J(%.3g) ~ %.6g +/- %.2g", args.x0, est.mean, est.std_error)
    return EXIT_OK


def cmd_verify(args) -> int:
    params = _params_from(args)
    grid = Grid(args.l, args.n)
    opts = _solver_opts(args)
    cfg = RunConfig("verify", params, asdict(grid), _opts_dict(opts),
                    {"t_max": args.t_max, "dt": args.dt, "integrator": args.integrator,
                     "seed": args.seed},
                    {"solution": str(args.solution) if args.solution else None,
                     "appendix_paths": args.appendix_paths, "policy_paths": args.policy_paths,
                     "feedback_paths": args.feedback_paths, "no_mc": args.no_mc})
    digest = _prepare_out(args, cfg)
    value = None
    results = []
    if args.solution is not None:
        try:
            value = read_solution(args.solution)
            params, grid = value.params, value.grid
        except ConfigurationError as exc:
            results = [CheckResult("solution_file", False, None, None, str(exc))]
    if not results:
        t_max = args.t_max if args.t_max is not None else min(300.0, 40.0 / params.rho)
        mc_cfg = PathConfig(t_max=t_max, dt=args.dt, integrator=args.integrator, seed=args.seed)
        results = run_suite(params, grid, opts, mc_cfg=mc_cfg, value=value,
                            appendix_paths=args.appendix_paths, policy_paths=args.policy_paths,
                            feedback_paths=args.feedback_paths, include_mc=not args.no_mc)
    payload = [r.to_dict() for r in results]
    write_json(args.out / "checks.json", {"config_hash": digest, "checks": payload})
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK if all(r.passed or r.skipped for r in results) else EXIT_CHECK


def sweep_row(params: LakeParams, grid: Grid, opts: SolveOptions) -> dict:
    v, report = solve(params, grid, opts)
    grad = gradient(v)
    row = {"V0": float(v.values[0]), "dV0": float((v.values[1] - v.values[0]) / grid.dx),
           "dV0_central": float(grad[0]), "iterations": report.iterations}
    # the expansion is only available for c = 1
    row["tail_residual"] = tail_residuals(v)[0] if params.c == 1 else None
    return row


def cmd_sweep(args) -> int:
    try:
        values = [float(tok) for tok in args.values.split(",") if tok.strip()]
    except ValueError:
        raise ConfigurationError(f"bad --values {args.values!r}") from None
    if not values:
        raise ConfigurationError("empty sweep axis")
    base = _params_from(args)
    grid = Grid(args.l, args.n)
    opts = _solver_opts(args)
    cfg = RunConfig("sweep", base, asdict(grid), _opts_dict(opts),
                    extra={"axis": args.axis, "values": values})
    digest = _prepare_out(args, cfg)
    rows = []
    for value in values:
        row = {args.axis: value, "status": "ok"}
        try:
            row.update(sweep_row(base.with_(**{args.axis: value}), grid, opts))
        except LakeError as exc:
            row.update(status="failed", error=str(exc))
        rows.append(row)
    write_json(args.out / "sweep.json", {"config_hash": digest, "rows": rows})
    cols = [args.axis, "status", "V0", "dV0", "tail_residual"]
    lines = [f"# config_hash: {digest}", ",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) if isinstance(row.get(c), float) else str(row.get(c, ""))
                              for c in cols))
    (args.out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LakeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
