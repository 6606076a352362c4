import json

import pytest

from py_embedder.config import ConfigurationError, ServiceConfig, load_service_config


def test_defaults():
    config = ServiceConfig(model="some/model")
    assert config.max_tokens == 512
    assert config.pooling == "cls"
    assert config.device == "cpu"
    assert config.port == 8100


@pytest.mark.parametrize(
    "kwargs",
    [
        {"model": ""},
        {"model": "m", "max_tokens": 7},
        {"model": "m", "pooling": "max"},
        {"model": "m", "port": -1},
        {"model": "m", "port": 70000},
    ],
)
def test_invalid_field_values(kwargs):
    with pytest.raises(ConfigurationError):
        ServiceConfig(**kwargs)


def test_yaml_file(tmp_path):
    path = tmp_path / "service.yaml"
    path.write_text("model: org/encoder\nmax_tokens: 128\npooling: mean\n", encoding="utf-8")
    config = load_service_config(path, env={})
    assert config == ServiceConfig(model="org/encoder", max_tokens=128, pooling="mean")


def test_json_file(tmp_path):
    path = tmp_path / "service.json"
    path.write_text(json.dumps({"model": "org/encoder", "port": 9000}), encoding="utf-8")
    config = load_service_config(path, env={})
    assert config.model == "org/encoder"
    assert config.port == 9000


def test_env_only_and_overrides(tmp_path):
    env = {
        "PYEMBEDDER_MODEL": "env/model",
        "PYEMBEDDER_MAX_TOKENS": "256",
        "PYEMBEDDER_POOLING": "mean",
    }
    config = load_service_config(None, env=env)
    assert config == ServiceConfig(model="env/model", max_tokens=256, pooling="mean")

    # env wins over the file
    path = tmp_path / "service.yaml"
    path.write_text("model: file/model\nmax_tokens: 64\n", encoding="utf-8")
    overridden = load_service_config(path, env=env)
    assert overridden.model == "env/model"
    assert overridden.max_tokens == 256


def test_file_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_service_config(tmp_path / "nope.yaml", env={})
    bad = tmp_path / "bad.json"
    bad.write_text("{oops", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="cannot parse"):
        load_service_config(bad, env={})
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("just a string\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_service_config(scalar, env={})


def test_unknown_keys_and_missing_model(tmp_path):
    path = tmp_path / "service.yaml"
    path.write_text("model: m\ngpu_count: 4\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="gpu_count"):
        load_service_config(path, env={})
    with pytest.raises(ConfigurationError, match="no model configured"):
        load_service_config(None, env={})


def test_non_integer_override_rejected():
    with pytest.raises(ConfigurationError, match="max_tokens"):
        load_service_config(None, env={"PYEMBEDDER_MODEL": "m", "PYEMBEDDER_MAX_TOKENS": "many"})
