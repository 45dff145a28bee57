"""Run artefacts: CSV tables at full float precision and a JSON summary.

All numbers are written with 17 significant digits so a fixed seed
reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import math
import subprocess
from pathlib import Path

import numpy as np

from .fredholm import NystromOperator
from .pipeline import Problem
from .uzawa import Diagnostics, UzawaResult

_F = "%.17g"


def _fmt(v) -> str:
    return _F % v


def _write_table(path: Path, header: list[str], lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for line in lines:
            fh.write(line + "\n")


def write_controls(path: Path, problem: Problem, result: UzawaResult) -> None:
    """One row per (path, node); rate columns are blank at the terminal node."""
    nodes = problem.grid.nodes
    n = problem.grid.n_steps
    ens = problem.ensemble
    alpha = ens.alpha
    inner = ",".join(["%d", _F, _F, _F, _F, _F, _F])
    last = "%d," + _F + ",," + _F + ",,," + _F

    def lines():
        for m in range(ens.n_paths):
            u, X, Z, a, S = result.control[m], result.inventory[m], result.impact[m], alpha[m], ens.price[m]
            for k in range(n):
                yield inner % (m, nodes[k], u[k], X[k], Z[k], a[k], S[k])
            yield last % (m, nodes[n], X[n], S[n])

    _write_table(path, ["path", "time", "u", "X", "Z", "alpha", "S"], lines())


def write_multipliers(path: Path, problem: Problem, result: UzawaResult) -> None:
    """Rate multipliers live on ``t_0..t_{N-1}``, inventory ones on ``t_1..t_N``."""
    nodes = problem.grid.nodes
    n = problem.grid.n_steps
    st = result.state
    first = "%d," + _F + "," + _F + "," + _F + ",,"
    inner = ",".join(["%d"] + [_F] * 5)
    last = "%d," + _F + ",,," + _F + "," + _F

    def lines():
        for m in range(st.lam.shape[1]):
            l1, l2, l3, l4 = st.lam[:, m]
            yield first % (m, nodes[0], l1[0], l2[0])
            for k in range(1, n):
                yield inner % (m, nodes[k], l1[k], l2[k], l3[k - 1], l4[k - 1])
            yield last % (m, nodes[n], l3[n - 1], l4[n - 1])

    _write_table(path, ["path", "time", "l1", "l2", "l3", "l4"], lines())


def write_diagnostics(path: Path, d: Diagnostics) -> None:

    def lines():
        for it in range(len(d)):
            vals = [*d.slackness[it], d.max_violation[it], d.mean_pnl[it]]
            yield ",".join([str(it + 1), *map(_fmt, vals), str(d.fallbacks[it]), _fmt(d.max_condition[it])])

    header = ["iter", "S1", "S2", "S3", "S4", "max_violation", "mean_pnl", "fallbacks", "max_condition"]
    _write_table(path, header, lines())


def write_matrix(path: Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=float)
    header = [f"c{j}" for j in range(matrix.shape[1])]
    _write_table(path, header, (",".join(map(_fmt, row)) for row in matrix))


def write_operator(out_dir: Path, op: NystromOperator) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "B.csv", out_dir / "D0.csv"]
    write_matrix(paths[0], op.coupling)
    write_matrix(paths[1], op.D0)
    return paths


def source_version() -> str:
    """``git describe`` of the source tree, or ``"unknown"`` outside a checkout."""
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return proc.stdout.strip() if proc.returncode == 0 and proc.stdout.strip() else "unknown"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_summary(path: Path, problem: Problem, metrics: dict) -> None:
    cfg = problem.config
    doc = {
        "scenario": cfg.name,
        "seed": cfg.run.seed,
        "paths": cfg.run.paths,
        "source_version": source_version(),
        "metrics": metrics,
        "config": cfg.to_dict(),
    }
    Path(path).write_text(json.dumps(_json_safe(doc), indent=2) + "\n", encoding="utf-8")


def write_run(out_dir: Path, problem: Problem, result: UzawaResult, metrics: dict) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {name: out_dir / name for name in ("controls.csv", "multipliers.csv", "diagnostics.csv", "summary.json")}
    write_controls(files["controls.csv"], problem, result)
    write_multipliers(files["multipliers.csv"], problem, result)
    write_diagnostics(files["diagnostics.csv"], result.diagnostics)
    write_summary(files["summary.json"], problem, metrics)
    return list(files.values())
