import math

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from propagator_uzawa.config import ConfigError, bundled, bundled_scenarios, from_dict, load, loads
from propagator_uzawa.constraints import ScenarioKind

NAMES = sorted(bundled_scenarios())


def test_bundled_set():
    assert NAMES == ["battery", "no-buy", "no-short", "sanity-exponential", "sanity-powerlaw", "stop-trading"]


@pytest.mark.parametrize("name", NAMES)
def test_round_trip(name, tmp_path):
    cfg = bundled(name)
    assert cfg.name == name
    assert loads(cfg.to_yaml()) == cfg
    path = tmp_path / "cfg.yaml"
    path.write_text(cfg.to_yaml())
    assert load(path) == cfg


def test_bundled_parameters():
    battery = bundled("battery")
    assert battery.scenario.u_max == 120 and battery.scenario.X_max == 20
    assert (battery.uzawa.delta, battery.uzawa.beta) == (0.2, 1e-3)
    assert (battery.signal.theta, battery.signal.w, battery.signal.kappa) == (1e5, 20.0, 50.0)
    ns = bundled("no-short")
    assert (ns.uzawa.delta, ns.uzawa.beta, ns.uzawa.max_iters) == (0.1, 5e-4, 10000)
    st_ = bundled("stop-trading")
    assert st_.scenario.S_ref == 80 and st_.signal.sigma == 2
    assert st_.kernel.to_dict() == {"type": "power_law", "c": 2.0, "alpha": 0.6}
    sanity = bundled("sanity-exponential")
    assert (sanity.uzawa.delta, sanity.uzawa.beta) == (3.0, 0.6)
    assert sanity.kernel.to_dict() == {"type": "exponential", "c": 5.0, "rho": 1.0}
    assert math.isclose(sanity.signal.phi, math.pi / 2)


def _raw(name="sanity-exponential"):
    return yaml.safe_load(bundled(name).to_yaml())


@pytest.mark.parametrize(
    "section, key",
    [(None, "extra"), ("grid", "M"), ("signal", "mu"), ("uzawa", "alpha"), ("lsmc", "order"), ("run", "workers")],
)
def test_unknown_keys(section, key):
    data = _raw()
    (data if section is None else data[section])[key] = 1
    with pytest.raises(ConfigError) as info:
        from_dict(data)
    assert key in info.value.field


@pytest.mark.parametrize(
    "section, key, value, field",
    [
        ("grid", "N", 0, "grid.N"),
        ("grid", "N", 2.5, "grid.N"),
        ("run", "paths", 50, "run.paths"),
        ("run", "threads", -1, "run.threads"),
        ("uzawa", "delta", -1.0, "uzawa.delta"),
        ("uzawa", "eps_bar", "small", "uzawa.eps_bar"),
        ("signal", "kappa", 0.0, "signal"),
        ("kernel", "rho", -1.0, "kernel"),
        ("scenario", "kind", "custom", "scenario.kind"),
        ("scenario", "kind", "hedge", "scenario.kind"),
    ],
)
def test_invalid_values(section, key, value, field):
    data = _raw()
    data[section][key] = value
    with pytest.raises(ConfigError) as info:
        from_dict(data)
    assert info.value.field.startswith(field)


def test_scenario_cross_checks():
    data = _raw("stop-trading")
    data["scenario"]["S_ref"] = 120.0
    with pytest.raises(ConfigError, match="S_ref"):
        from_dict(data)
    data = _raw("battery")
    data["scenario"]["X0"] = 25.0
    with pytest.raises(ConfigError, match="X0"):
        from_dict(data)


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        loads("grid: [1, 2")
    with pytest.raises(ConfigError):
        loads("- a\n- b\n")


def test_replace_overrides_sections():
    cfg = bundled("sanity-exponential").replace(run={"paths": 500}, kernel={"type": "zero"})
    assert cfg.run.paths == 500 and cfg.run.seed == 7
    assert cfg.kernel.is_zero
    assert cfg.scenario.kind is ScenarioKind.SANITY


@given(
    N=st.integers(2, 400),
    paths=st.integers(100, 10**6),
    seed=st.integers(0, 2**64 - 1),
    delta=st.floats(1e-6, 1e3),
    beta=st.floats(0, 2),
    degree=st.integers(0, 4),
)
def test_overrides_round_trip(N, paths, seed, delta, beta, degree):
    cfg = bundled("no-short").replace(
        grid={"N": N}, run={"paths": paths, "seed": seed}, uzawa={"delta": delta, "beta": beta}, lsmc={"degree": degree}
    )
    assert loads(cfg.to_yaml()) == cfg
