import json

import pytest

from config import DEFAULTS, PRESETS, get_config, material_from_config, parse_config, resolve
from dynamics import Variant
from errors import ConfigError


def _write(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2), encoding="utf8")
    return path


def test_defaults_without_a_source():
    raw = resolve()
    assert raw["level"] == 5
    assert raw["chi"] == 0.5
    assert raw["preset"] is None
    assert set(raw) == set(DEFAULTS)


def test_preset_values_are_merged():
    raw = resolve(preset="fig2")
    for key, value in PRESETS["fig2"].items():
        assert raw[key] == value
    assert raw["preset"] == "fig2"


@pytest.mark.parametrize("name, canonical", [
    ("fig1", "fig1"), ("fig2", "fig2"), ("stiff", "fig1"), ("soft-permeable", "fig2"),
])
def test_preset_names_parse_into_scenarios(name, canonical):
    scenario = parse_config(overrides={"preset": name, "variant": "inviscid-impermeable", "level": 2})
    assert scenario.preset == canonical
    assert scenario.raw["s"] == PRESETS[canonical]["s"]
    assert scenario.params.r == PRESETS[canonical]["r"]
    assert scenario.variant is Variant.INVISCID_IMPERMEABLE


def test_file_keys_beat_the_preset_and_overrides_beat_the_file(tmp_path):
    path = _write(tmp_path, {"preset": "fig1", "s": 2.5, "level": 3})
    raw = resolve(path, {"level": 4, "dt": None})
    assert raw["s"] == 2.5
    assert raw["r"] == PRESETS["fig1"]["r"]
    assert raw["level"] == 4
    assert raw["dt"] == DEFAULTS["dt"]


def test_unknown_key_reports_key_and_line(tmp_path):
    path = _write(tmp_path, {"level": 3, "viscosity": 2.0})
    with pytest.raises(ConfigError) as info:
        resolve(path)
    assert info.value.key == "viscosity"
    assert info.value.line == 3
    assert info.value.exit_code == 2


def test_invalid_json_reports_the_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "level": 3,\n  "dt": ,\n}\n', encoding="utf8")
    with pytest.raises(ConfigError) as info:
        resolve(path)
    assert info.value.line == 3


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        resolve(tmp_path / "absent.json")


def test_unknown_preset():
    with pytest.raises(ConfigError) as info:
        resolve(preset="fig9")
    assert info.value.key == "preset"


@pytest.mark.parametrize("key, value", [("level", 2.5), ("dt", "fast"), ("n_steps", True)])
def test_values_are_type_checked(key, value):
    with pytest.raises(ConfigError) as info:
        resolve({key: value})
    assert info.value.key == key


def test_integer_valued_floats_are_accepted():
    assert resolve({"level": 3.0})["level"] == 3


def test_variant_is_required_for_a_scenario(unit_config_json):
    with pytest.raises(ConfigError) as info:
        parse_config(unit_config_json)
    assert info.value.key == "variant"
    assert parse_config(unit_config_json, require_variant=False).variant is None


def test_scenario_from_dimensional_inputs(unit_config_json, unit_params):
    scenario = parse_config({**unit_config_json, "variant": "viscous-permeable", "level": 2})
    assert scenario.variant is Variant.VISCOUS_PERMEABLE
    assert scenario.level == 2
    params = scenario.params
    assert params.mu_E == pytest.approx(1.0)
    assert params.eta1 == pytest.approx(1.0)
    assert params.mu1 == pytest.approx(1.0)
    assert params.eta2 == pytest.approx(0.1)
    assert params.beta_drag == pytest.approx(1.0)
    for name in ("a", "b", "c", "alpha", "s", "q_exp", "r", "phi_I"):
        assert getattr(params, name) == pytest.approx(getattr(unit_params, name))
    assert scenario.raw["variant"] == "viscous-permeable"


def test_flory_defaults_follow_chain_lengths():
    params, scales = material_from_config(resolve({"N1": 50.0, "chi": 0.8}))
    assert params.a == pytest.approx(0.02)
    assert params.b == pytest.approx(1.0)
    assert params.c == pytest.approx(0.4)
    assert scales.stress == DEFAULTS["mu_E"]
    assert params.mu_E == pytest.approx(1.0)
    assert params.fh_scale == pytest.approx(DEFAULTS["fh_scale"] / DEFAULTS["mu_E"])


def test_invalid_material_becomes_a_config_error():
    with pytest.raises(ConfigError):
        material_from_config(resolve({"mu_E": -1.0}))


def test_scenario_validation_is_keyed(unit_config_json):
    with pytest.raises(ConfigError) as info:
        parse_config({**unit_config_json, "variant": "inviscid-permeable", "dt": -0.1})
    assert info.value.key == "dt"


def test_environment_settings(monkeypatch):
    settings = get_config()
    assert settings.CONSOLE_ONLY
    assert 1 <= settings.THREADS <= 2
    assert get_config("production").DEBUG is False
    with pytest.raises(ConfigError):
        get_config("staging")
    monkeypatch.setenv("GELSIM_THREADS", "0")
    with pytest.raises(ConfigError) as info:
        get_config("production")
    assert info.value.key == "GELSIM_THREADS"
