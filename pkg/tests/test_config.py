import pytest

from wienerlab.capacity import CapacitySettings
from wienerlab.config import Config, ConfigError, parse_bool, parse_floats
from wienerlab.pde import SolverSettings

BASE = """[run]
kind = verify

[domain]
kind = union
dim = 2
grid_n = 64
invert = yes
shapes = ball 0.5 0 0.5; cube -0.5 0.25 0.1

[solver]
dt0 = 0.002
dt_max = 0.01
"""


def test_domain_descriptor_parsing():
    cfg = Config.from_text(BASE)
    d = cfg.domain()
    assert d["grid_n"] == 64 and d["invert"] is True
    assert d["shapes"] == [{"shape": "ball", "center": [0.5, 0.0], "size": 0.5},
                           {"shape": "cube", "center": [-0.5, 0.25], "size": 0.1}]


def test_solver_settings_override():
    s = Config.from_text(BASE).solver()
    assert isinstance(s, SolverSettings) and s.dt0 == 0.002 and s.dt_max == 0.01
    assert s.tol == SolverSettings().tol


def test_capacity_defaults_when_absent():
    assert Config.from_text(BASE).capacity() == CapacitySettings()


def test_keys_are_case_sensitive():
    cfg = Config.from_text("[run]\nkind = capacity\n[condenser]\nr = 0.25\nR = 0.75\n")
    assert cfg.get("condenser", "r", float) == 0.25
    assert cfg.get("condenser", "R", float) == 0.75


def test_unknown_kind_names_field_and_line():
    with pytest.raises(ConfigError, match=r"<string>:2: \[run\] kind"):
        Config.from_text("[run]\nkind = bogus\n")


def test_bad_value_names_field_and_line():
    cfg = Config.from_text(BASE + "x = 1\n[structure]\np = four-thirds\n")
    with pytest.raises(ConfigError, match=r":\d+: \[structure\] p: cannot parse"):
        cfg.get("structure", "p", float)


def test_unknown_solver_field_rejected():
    cfg = Config.from_text(BASE + "warp = 9\n")
    with pytest.raises(ConfigError, match=r"\[solver\] warp"):
        cfg.solver()


def test_missing_section():
    cfg = Config.from_text("[run]\nkind = solve\n")
    with pytest.raises(ConfigError, match="missing section"):
        cfg.domain()


def test_syntax_error():
    with pytest.raises(ConfigError):
        Config.from_text("[run\nkind = solve\n")


def test_small_parsers():
    assert parse_floats("1, 2 3") == [1.0, 2.0, 3.0]
    assert parse_bool("On") is True and parse_bool("no") is False
    with pytest.raises(ValueError):
        parse_bool("maybe")


def test_snapshot_roundtrip():
    snap = Config.from_text(BASE).snapshot()
    assert snap["domain"]["grid_n"] == "64"
