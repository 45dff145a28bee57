"""Scenario configuration files (YAML).

Every section maps onto the owning module's validated dataclass, so loading a
file re-runs all parameter checks. Unknown keys are rejected at every level.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .constraints import BIG_M, BIG_M_PRIME, ScenarioKind
from .kernels import KernelSpec, TimeGrid
from .lsmc import LSMCConfig
from .signals import SignalParams
from .uzawa import UzawaConfig

MIN_PATHS = 100


class ConfigError(ValueError):
    """A configuration value failed validation; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    X0: float
    S_ref: float | None = None
    u_max: float | None = None
    X_max: float | None = None
    u_bound: float | None = None
    big_M: float = BIG_M
    big_M_prime: float = BIG_M_PRIME


@dataclass(frozen=True)
class RunSpec:
    paths: int = 1000
    seed: int = 0
    out_dir: str | None = None
    threads: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    grid: TimeGrid
    kernel: KernelSpec
    signal: SignalParams
    scenario: ScenarioSpec
    uzawa: UzawaConfig
    lsmc: LSMCConfig
    run: RunSpec = field(default_factory=RunSpec)

    def to_dict(self) -> dict:
        plain = lambda obj: {k: _plain(v) for k, v in dataclasses.asdict(obj).items()}
        return {
            "name": self.name,
            "grid": {"T": self.grid.horizon, "N": self.grid.n_steps},
            "kernel": self.kernel.to_dict(),
            "signal": plain(self.signal),
            "scenario": plain(self.scenario),
            "uzawa": plain(self.uzawa),
            "lsmc": plain(self.lsmc),
            "run": plain(self.run),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, **sections) -> "ScenarioConfig":
        """Copy with per-section overrides, e.g. ``replace(run={"paths": 500})``."""
        data = self.to_dict()
        for section, values in sections.items():
            if isinstance(values, dict) and section != "kernel":  # kernel keys depend on its type
                data[section] = {**data[section], **values}
            else:
                data[section] = values
        return from_dict(data)


def _plain(value):
    if isinstance(value, ScenarioKind):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def _section(data: dict, name: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    raw = data.get(name, {})
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(name, f"expected a mapping, got {type(raw).__name__}")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", f"unknown key (allowed: {sorted(allowed)})")
    missing = set(required) - set(raw)
    if missing:
        raise ConfigError(f"{name}.{sorted(missing)[0]}", "required key missing")
    return dict(raw)


def _build(section: str, factory, kwargs: dict):
    try:
        return factory(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        # module validators already prefix messages with "section.field"
        key = msg.split(" ", 1)[0] if msg.startswith(f"{section}.") else section
        raise ConfigError(key, msg) from None


def _number(section: str, key: str, value, kind=float):
    if isinstance(value, bool):
        raise ConfigError(f"{section}.{key}", f"expected a number, got {value!r}")
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}", f"expected a number, got {value!r}") from None
    if kind is int and out != value:
        raise ConfigError(f"{section}.{key}", f"expected an integer, got {value!r}")
    return out


def from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    top = {"name", "grid", "kernel", "signal", "scenario", "uzawa", "lsmc", "run"}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown top-level key (allowed: {sorted(top)})")

    g = _section(data, "grid", {"T", "N"}, {"N"})
    N = _number("grid", "N", g["N"], int)
    if N < 2:
        raise ConfigError("grid.N", f"must be >= 2, got {N}")
    grid = _build("grid", TimeGrid, {"horizon": _number("grid", "T", g.get("T", 1.0)), "n_steps": N})

    k = data.get("kernel")
    if not isinstance(k, dict) or "type" not in k:
        raise ConfigError("kernel.type", "required key missing")
    kernel = _build("kernel", KernelSpec.from_dict, {"data": k})

    s = _section(data, "signal", {f.name for f in dataclasses.fields(SignalParams)})
    signal = _build("signal", SignalParams, {key: _number("signal", key, v) for key, v in s.items()})

    sc = _section(data, "scenario", {f.name for f in dataclasses.fields(ScenarioSpec)}, {"kind", "X0"})
    try:
        kind = ScenarioKind(sc.pop("kind"))
    except ValueError:
        raise ConfigError("scenario.kind", f"must be one of {[k.value for k in ScenarioKind]}") from None
    if kind is ScenarioKind.CUSTOM:
        raise ConfigError("scenario.kind", "custom constraint arrays cannot be given in a config file")
    sc = {key: None if v is None else _number("scenario", key, v) for key, v in sc.items()}
    scenario = ScenarioSpec(kind=kind, **sc)
    _check_scenario(scenario, signal)

    uz_fields = {f.name for f in dataclasses.fields(UzawaConfig)}
    u = _section(data, "uzawa", uz_fields)
    for key in ("delta", "beta", "eps_bar", "feas_tol"):
        if key in u and u[key] is not None:
            u[key] = _number("uzawa", key, u[key])
    if "max_iters" in u:
        u["max_iters"] = _number("uzawa", "max_iters", u["max_iters"], int)
    uzawa = _build("uzawa", UzawaConfig, u)

    ls = _section(data, "lsmc", {f.name for f in dataclasses.fields(LSMCConfig)})
    if "degree" in ls:
        ls["degree"] = _number("lsmc", "degree", ls["degree"], int)
    if "ridge" in ls:
        ls["ridge"] = _number("lsmc", "ridge", ls["ridge"])
    if "features" in ls:
        if not isinstance(ls["features"], (list, tuple)):
            raise ConfigError("lsmc.features", "expected a list")
        ls["features"] = tuple(ls["features"])
    lsmc = _build("lsmc", LSMCConfig, ls)

    r = _section(data, "run", {f.name for f in dataclasses.fields(RunSpec)})
    for key in ("paths", "seed", "threads"):
        if key in r:
            r[key] = _number("run", key, r[key], int)
    run = RunSpec(**r)
    if run.paths < MIN_PATHS:
        raise ConfigError("run.paths", f"must be >= {MIN_PATHS} for regression estimates, got {run.paths}")
    if run.threads < 0:
        raise ConfigError("run.threads", f"must be >= 0 (0 = auto), got {run.threads}")
    if not 0 <= run.seed < 2**64:
        raise ConfigError("run.seed", f"must be a 64-bit unsigned integer, got {run.seed}")

    return ScenarioConfig(str(data.get("name", "scenario")), grid, kernel, signal, scenario, uzawa, lsmc, run)


def _check_scenario(sc: ScenarioSpec, signal: SignalParams) -> None:
    if sc.kind is ScenarioKind.STOP_TRADING:
        if sc.S_ref is None:
            raise ConfigError("scenario.S_ref", "required for stop_trading")
        if not sc.S_ref < signal.S0:
            raise ConfigError("scenario.S_ref", f"must be below signal.S0={signal.S0}, got {sc.S_ref}")
    if sc.kind is ScenarioKind.BATTERY:
        for key in ("u_max", "X_max"):
            value = getattr(sc, key)
            if value is None or not value > 0:
                raise ConfigError(f"scenario.{key}", f"battery needs a positive value, got {value}")
        if not 0 <= sc.X0 <= sc.X_max:
            raise ConfigError("scenario.X0", f"must lie in [0, X_max={sc.X_max}], got {sc.X0}")
    if sc.kind is ScenarioKind.RATE_ONLY and sc.u_bound is not None and not sc.u_bound > 0:
        raise ConfigError("scenario.u_bound", f"must be > 0, got {sc.u_bound}")
    if not sc.big_M > 0 or not sc.big_M_prime > 0:
        raise ConfigError("scenario.big_M", "big-M bounds must be positive")


def loads(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return from_dict(data)


def load(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return loads(text)


def bundled_scenarios() -> dict[str, ScenarioConfig]:
    """The shipped scenario files keyed by name (file stem)."""
    root = resources.files("propagator_uzawa") / "scenarios"
    out = {}
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".yaml"):
            out[entry.name[: -len(".yaml")]] = loads(entry.read_text(encoding="utf-8"))
    return out


def bundled(name: str) -> ScenarioConfig:
    scenarios = bundled_scenarios()
    if name not in scenarios:
        raise KeyError(f"no bundled scenario {name!r}; available: {sorted(scenarios)}")
    return scenarios[name]
