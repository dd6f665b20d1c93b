import dataclasses

import pytest

from offsite_ucr.config_io import (default_config, emit_config, known_keys, load_config,
                                   parse_config)
from offsite_ucr.errors import ConfigError
from offsite_ucr.harness import emit_defaults


def test_emitted_defaults_round_trip(tmp_path):
    path = tmp_path / "defaults.cfg"
    text = emit_defaults(str(path))
    assert path.read_text() == text
    assert load_config(path) == default_config()
    assert emit_config(parse_config(text)) == text


def test_non_default_config_round_trips():
    cfg = default_config().with_values(user_count=7, power_max=2.5, bits_per_layer=1e6,
                                       dinkelbach_tol=1e-7, resample_infeasible=False)
    assert parse_config(emit_config(cfg)) == cfg


def test_published_values():
    s = default_config().system
    u = default_config().user
    assert s.noise_psd_server == pytest.approx(10 ** -20.4, rel=1e-12)
    assert s.noise_psd_eve == pytest.approx(10 ** -20.4, rel=1e-12)
    assert u.user_capacitance == 1e-27 and s.server_capacitance == 1e-27
    assert u.freq_max == 7e9 and s.server_freq_max == 100e9
    assert u.power_max == 0.2
    assert s.total_param_size == 14e6
    assert s.cost_weight_time == 0.5 and s.cost_weight_energy == 0.5


def test_emitted_file_marks_artifact_choices():
    text = emit_config()
    assert "artifact choice" in text
    line = next(l for l in text.splitlines() if l.startswith("user_capacitance"))
    assert "artifact choice" not in line
    assert "1e-27" in line


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nuser_count = 3   # three users\npower_max=0.5\n")
    assert cfg.system.user_count == 3 and cfg.user.power_max == 0.5


def test_every_field_is_a_key():
    keys = set(known_keys())
    for name in ("user_count", "server_freq_max", "freq_max", "power_max",
                 "dinkelbach_tol", "resample_infeasible"):
        assert name in keys
    assert "distance_to_server" not in keys


def test_unknown_key_names_line_and_key():
    with pytest.raises(ConfigError, match=r"cfg:2: unknown key 'bogus'"):
        parse_config("user_count = 2\nbogus = 1\n", "cfg")


def test_bad_value_names_line_and_key():
    with pytest.raises(ConfigError, match=r"cfg:1: bad value for 'power_max'"):
        parse_config("power_max = lots\n", "cfg")


def test_missing_equals():
    with pytest.raises(ConfigError, match=r"cfg:1"):
        parse_config("user_count 3\n", "cfg")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("user_count = 3\nuser_count = 4\n", "cfg")


def test_integer_keys_reject_fractions():
    with pytest.raises(ConfigError):
        parse_config("user_count = 2.5\n")
    assert parse_config("user_count = 1e1\n").system.user_count == 10


def test_semantic_validation_surfaces_as_config_error():
    with pytest.raises(ConfigError):
        parse_config("cost_weight_time = 0.9\n")


def test_none_clears_optional():
    cfg = parse_config("bits_per_layer = none\n")
    assert cfg.system.bits_per_layer is None


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_with_values_rejects_unknown():
    with pytest.raises(ConfigError):
        default_config().with_values(nonsense=1)


def test_overrides_do_not_touch_defaults():
    base = default_config()
    changed = base.with_values(total_param_size=7e6)
    assert changed.system.payload_bits_per_unit_phi == pytest.approx(7e6 * 16)
    assert base.system.payload_bits_per_unit_phi == pytest.approx(14e6 * 16)
    assert dataclasses.replace(base.system) == base.system
