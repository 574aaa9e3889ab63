import pytest

from config import Config, ConfigError, check_keys, get_float, get_int, load_kv_file


def test_load_kv_file_reads_dotted_keys(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# comment\nroad.kind=arc\nroad.radius=500\n")
    assert load_kv_file(path) == {"road.kind": "arc", "road.radius": "500"}


def test_load_kv_file_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_kv_file(tmp_path / "nope.env")


def test_empty_value_names_key(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("pid.kp=\n")
    with pytest.raises(ConfigError) as err:
        load_kv_file(path)
    assert err.value.key == "pid.kp"


def test_check_keys_rejects_unknown():
    with pytest.raises(ConfigError) as err:
        check_keys({"road.kind": "arc", "road.radiuss": "500"}, {"road.kind", "road.radius"})
    assert err.value.key == "road.radiuss"
    assert "road.radiuss" in str(err.value)


def test_check_keys_prefix_only_checks_matching_keys():
    check_keys({"pid.kp": "1", "other": "x"}, {"pid.kp"}, prefix="pid.")


def test_typed_getters():
    values = {"a": "1.5", "n": "3", "bad": "x"}
    assert get_float(values, "a") == 1.5
    assert get_int(values, "n") == 3
    assert get_float(values, "missing", 2.0) == 2.0
    with pytest.raises(ConfigError, match="bad"):
        get_float(values, "bad")
    with pytest.raises(ConfigError, match="missing"):
        get_int(values, "missing")


def test_validate_rejects_bad_workers(monkeypatch):
    monkeypatch.setattr(Config, "WORKERS", "0")
    with pytest.raises(ConfigError) as err:
        Config.validate()
    assert err.value.key == "SAFEIL_WORKERS"


def test_validate_defaults():
    assert Config.validate() is True
    assert Config.seed() >= 0
