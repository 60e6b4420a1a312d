import json

import pytest

from fcltlab import config
from fcltlab.config import (
    RunConfig,
    is_builtin_model,
    parse_model_spec,
    parse_n_list,
    parse_observable_spec,
)
from fcltlab.errors import ConfigError


@pytest.mark.parametrize("text,expected", [
    ("two-state", ("two-state", ())),
    ("birth-death(3)", ("birth-death", (3,))),
    ("random-reversible(30, 7)", ("random-reversible", (30, 7))),
    ("random-reversible(30)", ("random-reversible", (30,))),
    (" cycle( 5 ) ", ("cycle", (5,))),
])
def test_parse_model_spec(text, expected):
    assert parse_model_spec(text) == expected


@pytest.mark.parametrize("text", [
    "ring(3)", "birth-death", "birth-death(3, 4)", "cycle(x)", "birth-death(0)", "cycle(1)",
    "random-reversible(1, 5)",
])
def test_parse_model_spec_errors(text):
    with pytest.raises(ConfigError):
        parse_model_spec(text)


def test_is_builtin_model():
    assert is_builtin_model("birth-death(4)")
    assert not is_builtin_model("models/chain.json")


def test_parse_observable_spec(tmp_path):
    assert parse_observable_spec("parity") == ("name", "parity")
    assert parse_observable_spec("1,0,-1") == ("values", (1.0, 0.0, -1.0))
    path = tmp_path / "f.json"
    path.write_text("[1, 2]")
    assert parse_observable_spec(str(path)) == ("file", path)
    with pytest.raises(ConfigError):
        parse_observable_spec("cosine")
    with pytest.raises(ConfigError):
        parse_observable_spec("1,a")


def test_parse_n_list():
    assert parse_n_list("100,1000") == (100, 1000)
    assert parse_n_list([10, 20]) == (10, 20)
    with pytest.raises(ConfigError):
        parse_n_list("")
    with pytest.raises(ConfigError):
        parse_n_list("1000,100")
    with pytest.raises(ConfigError):
        parse_n_list("0,10")


def test_run_config_defaults():
    cfg = RunConfig.from_sources(None, {})
    assert cfg.model is None
    assert cfg.n_list == config.N_LIST
    assert cfg.seed == config.SEED


def test_run_config_flags_override_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 1, "replicates": 200, "n_list": [10, 100], "f": [1, 0, -1]}))
    cfg = RunConfig.from_sources(str(path), {"seed": 9, "replicates": None})
    assert cfg.seed == 9
    assert cfg.replicates == 200
    assert cfg.n_list == (10, 100)
    assert cfg.f == "1,0,-1"


def test_run_config_unknown_key(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"sead": 1}))
    with pytest.raises(ConfigError, match="sead"):
        RunConfig.from_sources(str(path), {})


@pytest.mark.parametrize("overrides", [
    {"replicates": 0},
    {"workers": 0},
    {"tol": -1.0},
    {"t_points": 1},
    {"model": "no-such-file.json"},
    {"f": "no-such-observable"},
    {"suite_max_states": 1},
])
def test_run_config_validation(overrides):
    with pytest.raises(ConfigError):
        RunConfig.from_sources(None, overrides)


def test_tolerance_override():
    assert config.tolerance("frep") == config.TOL_SOLVE
    config.override_tolerance(1e-30)
    assert config.tolerance("frep") == 1e-30
    assert config.TOL_SOLVE == 1e-10
    config.override_tolerance(None)
    assert config.tolerance("yosida") == 1e-5
