import pytest
import yaml

from klbias.config import OUTPUT_ENV, PRESETS, from_dict, load_config, parse_override, preset
from klbias.exceptions import ConfigError


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate_and_round_trip(name):
    cfg = preset(name, env={})
    again = from_dict(yaml.safe_load(cfg.dumps()), env={})
    assert again == cfg
    assert again.scientific_hash() == cfg.scientific_hash()


def test_defaults():
    cfg = from_dict({}, env={})
    assert cfg.system.kind == "toy" and cfg.beta == 10.0 and cfg.temper is None
    assert cfg.descent.p == 0.6 and cfg.greedy.tol_delta == 0.01
    assert cfg.output.points_for(1) == 201 and cfg.output.points_for(3) == 41


@pytest.mark.parametrize("override, path", [
    ("descent.p=0.5", "descent.p"),
    ("descent.p=1.2", "descent.p"),
    ("descent.zeta=1.0", "descent.zeta"),
    ("smc.n=1", "smc.n"),
    ("beta=-1", "beta"),
    ("mala.dt_q=0", "mala.dt_q"),
    ("greedy.gain_estimator=other", "greedy.gain_estimator"),
    ("system.kind=argon", "system.kind"),
    ("system.lj.cv=rg", "system.lj.cv"),
    ("system.wca.box=-3", "system.wca.box"),
    ("seed=-2", "seed"),
])
def test_constrained_fields_report_their_path(override, path):
    with pytest.raises(ConfigError) as info:
        from_dict({}, [override], env={})
    assert info.value.path == path


@pytest.mark.parametrize("data, path", [
    ({"descnt": {}}, "descnt"),
    ({"descent": {"lamda": 1}}, "descent.lamda"),
    ({"greedy": {"vocab": {"grid": 3}}}, "greedy.vocab.grid"),
])
def test_unknown_keys_rejected(data, path):
    with pytest.raises(ConfigError) as info:
        from_dict(data, env={})
    assert info.value.path == path


def test_type_errors():
    with pytest.raises(ConfigError, match="smc.n"):
        from_dict({"smc": {"n": "many"}}, env={})
    with pytest.raises(ConfigError, match="reproducible"):
        from_dict({"reproducible": "yes"}, env={})
    with pytest.raises(ConfigError, match="descent"):
        from_dict({"descent": 3}, env={})


def test_overrides_parse_yaml_values():
    assert parse_override("descent.lam0=1e-3") == ("descent.lam0", 1e-3)
    assert parse_override("domain.lower=[0, 1]") == ("domain.lower", [0, 1])
    assert parse_override("output.grid_points=null") == ("output.grid_points", None)
    with pytest.raises(ConfigError):
        parse_override("novalue")
    cfg = from_dict({}, ["descent.lam0=0.25", "domain.lower=[-0.4]"], env={})
    assert cfg.descent.lam0 == 0.25 and cfg.domain.lower == (-0.4,)


def test_temper_consistency():
    with pytest.raises(ConfigError, match="temper.start"):
        from_dict({"beta": 5.0, "temper": {"start": 4.0, "end": 8.0}}, env={})
    with pytest.raises(ConfigError, match="spring_mu"):
        from_dict({"system": {"kind": "wca"}, "domain": {"lower": [1.0], "upper": [2.0]},
                   "temper": {"start": 1.0, "end": 8.0, "kind": "mu"}}, env={})


def test_environment_sets_output_dir():
    assert from_dict({}, env={OUTPUT_ENV: "/tmp/elsewhere"}).output.dir == "/tmp/elsewhere"
    assert from_dict({}, ["output.dir=x"], env={}).output.dir == "x"


def test_file_layering(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("preset: toy\nsmc:\n  n: 321\n")
    cfg = load_config(path, overrides=["seed=4"], env={})
    assert cfg.smc.n == 321 and cfg.seed == 4 and cfg.greedy.k_max == PRESETS["toy"]["greedy"]["k_max"]
    bad = tmp_path / "bad.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(bad, env={})
    with pytest.raises(ConfigError, match="preset"):
        load_config(preset="nonesuch", env={})


def test_hash_ignores_output_settings():
    a = from_dict({}, ["output.dir=a", "workers=1"], env={})
    b = from_dict({}, ["output.dir=b", "workers=3"], env={})
    c = from_dict({}, ["beta=11"], env={})
    assert a.scientific_hash() == b.scientific_hash() != c.scientific_hash()
