"""Command-line entry point: ``propagator-uzawa {run, qp, validate, dump-operator}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import yaml

from . import outputs
from .config import ConfigError, ScenarioConfig, bundled_scenarios, load
from .constraints import InvalidScenario
from .fredholm import AssemblyError, assemble
from .kernels import build_discrete_kernel
from .oracles import InfeasibleInstance, LPCaseUnsupported, QPInstance, day_ahead_instance, solve_qp, write_solution_csv
from .pipeline import build_problem, residual_certificate, summary_metrics
from .uzawa import NumericalAbort

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 1, 2, 3
OUT_ENV = "PROPAGATOR_UZAWA_OUT"

log = logging.getLogger("propagator_uzawa")


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; exit code 2 is reserved for numerical aborts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="scenario YAML file, or the name of a bundled scenario")
    p.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    p.add_argument("--steps", type=int, help="number of time steps N")
    p.add_argument("--iters", type=int, help="Uzawa iteration budget")
    p.add_argument("--seed", type=int, help="64-bit RNG seed")
    p.add_argument("--out-dir", help=f"output directory (default: run.out_dir, then ${OUT_ENV}, then ./out/<name>)")
    p.add_argument("--threads", type=int, help="simulation worker threads, 0 = one per CPU")
    p.add_argument("--slackness-mode", choices=("sum", "max"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="propagator-uzawa", description="Constrained optimal control in a linear propagator model.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve a stochastic scenario and write CSV/JSON results")
    _add_overrides(run)

    qp = sub.add_parser("qp", help="solve a deterministic QP instance")
    qp.add_argument("--config", required=True, help="QP YAML file")
    qp.add_argument("--out-dir")

    val = sub.add_parser("validate", help="run the acceptance criteria and print a pass/fail table")
    val.add_argument("--criteria", help="comma-separated subset, e.g. 1,4,5 (default: all)")
    val.add_argument("--paths", type=int, default=1000)
    val.add_argument("--seed", type=int, default=7)
    val.add_argument("--threads", type=int, default=1)

    dump = sub.add_parser("dump-operator", help="write the Nystrom operator B and D_0 as CSV")
    dump.add_argument("--config", required=True)
    dump.add_argument("--steps", type=int)
    dump.add_argument("--out-dir")

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def resolve_config(args) -> ScenarioConfig:
    path = Path(args.config)
    if not path.exists():
        scenarios = bundled_scenarios()
        if args.config in scenarios:
            cfg = scenarios[args.config]
        else:
            raise ConfigError("--config", f"{args.config} is neither a file nor a bundled scenario {sorted(scenarios)}")
    else:
        cfg = load(path)
    sections: dict = {}
    get = lambda name: getattr(args, name, None)
    if get("steps") is not None:
        sections["grid"] = {"N": args.steps}
    if get("iters") is not None or get("slackness_mode") is not None:
        uz = {}
        if get("iters") is not None:
            uz["max_iters"] = args.iters
        if get("slackness_mode") is not None:
            uz["slackness_mode"] = args.slackness_mode
        sections["uzawa"] = uz
    run = {k: get(k) for k in ("paths", "seed", "threads") if get(k) is not None}
    if get("out_dir") is not None:
        run["out_dir"] = args.out_dir
    if run:
        sections["run"] = run
    return cfg.replace(**sections) if sections else cfg


def output_dir(args, cfg: ScenarioConfig | None, name: str) -> Path:
    if getattr(args, "out_dir", None):
        return Path(args.out_dir)
    if cfg is not None and cfg.run.out_dir:
        return Path(cfg.run.out_dir)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV]) / name
    return Path("out") / name


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    start = time.perf_counter()
    problem = build_problem(cfg)
    solver = problem.solver()
    out = output_dir(args, cfg, cfg.name)
    try:
        result = solver.run()
    except NumericalAbort as exc:
        if exc.diagnostics is not None:
            out.mkdir(parents=True, exist_ok=True)
            outputs.write_diagnostics(out / "diagnostics.csv", exc.diagnostics)
            print(f"partial diagnostics written to {out / 'diagnostics.csv'}", file=sys.stderr)
        raise
    metrics = summary_metrics(problem, result, residual_certificate(solver, result))
    outputs.write_run(out, problem, result, metrics)
    print(
        f"{cfg.name}: {result.iterations} iterations, converged={result.converged}, "
        f"max violation {metrics['max_violation']:.3e}, mean PnL {metrics['mean_pnl']:.6g} "
        f"({time.perf_counter() - start:.1f}s) -> {out}"
    )
    return EXIT_OK


def load_qp(path: Path) -> tuple[str, QPInstance]:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", "QP configuration must be a mapping")
    allowed = {"name", "instance", "day_ahead", "step", "X0", "X_terminal", "u_min", "u_max", "X_min", "X_max"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown key (allowed: {sorted(allowed)})")
    name = str(data.get("name", path.stem))
    try:
        if "day_ahead" in data:
            return name, day_ahead_instance(**(data["day_ahead"] or {}))
        if "instance" not in data or "step" not in data:
            raise ConfigError("instance", "need either 'day_ahead' or both 'instance' (CSV path) and 'step'")
        csv_path = (path.parent / data["instance"]).resolve()
        bounds = {k: float(data[k]) for k in ("u_min", "u_max", "X_min", "X_max") if k in data}
        terminal = data.get("X_terminal", 0.0)
        inst = QPInstance.from_csv(
            csv_path, float(data["step"]), float(data.get("X0", 0.0)),
            None if terminal is None else float(terminal), **bounds,
        )
    except (OSError, TypeError) as exc:
        raise ConfigError("instance", str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, (ConfigError, InfeasibleInstance)):
            raise
        raise ConfigError("instance", str(exc)) from None
    return name, inst


def cmd_qp(args) -> int:
    name, inst = load_qp(Path(args.config))
    sol = solve_qp(inst)
    out = output_dir(args, None, name)
    out.mkdir(parents=True, exist_ok=True)
    write_solution_csv(out / "solution.csv", inst, sol)
    print(f"{name}: objective {sol.objective:.12g}, KKT residual {sol.kkt_residual:.1e}, "
          f"{sol.iterations} active-set iterations -> {out / 'solution.csv'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import Suite, table

    numbers = None
    if args.criteria:
        try:
            numbers = sorted({int(x) for x in args.criteria.split(",")})
        except ValueError:
            raise ConfigError("--criteria", f"expected comma-separated integers, got {args.criteria!r}") from None
        bad = [k for k in numbers if not 1 <= k <= 9]
        if bad:
            raise ConfigError("--criteria", f"criteria are numbered 1..9, got {bad}")
    results = Suite(paths=args.paths, seed=args.seed, threads=args.threads).run_all(numbers)
    print(table(results))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f", failing: {failed}" if failed else ""))
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_dump(args) -> int:
    cfg = resolve_config(args)
    op = assemble(build_discrete_kernel(cfg.kernel, cfg.grid))
    out = output_dir(args, cfg, f"{cfg.name}-operator")
    for path in outputs.write_operator(out, op):
        print(path)
    return EXIT_OK


def cmd_list(args) -> int:
    for name, cfg in bundled_scenarios().items():
        print(f"{name:20s} {cfg.scenario.kind.value:13s} N={cfg.grid.n_steps} paths={cfg.run.paths} "
              f"iters={cfg.uzawa.max_iters}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "qp": cmd_qp, "validate": cmd_validate, "dump-operator": cmd_dump, "list": cmd_list}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidScenario, InfeasibleInstance, LPCaseUnsupported) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, AssemblyError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
