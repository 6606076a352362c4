"""Service configuration: one YAML or JSON file, overridable per field from
the environment (PYEMBEDDER_MODEL, PYEMBEDDER_MAX_TOKENS, ...)."""

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

import yaml

POOLING_MODES = ("cls", "mean")
ENV_PREFIX = "PYEMBEDDER_"


class ConfigurationError(Exception):
    """The service cannot start with the given configuration."""


@dataclass(frozen=True)
class ServiceConfig:
    """Everything the service needs to come up.

    ``model`` is a local checkpoint directory or a hub identifier; the served
    vector dimension is always the model's hidden size. ``max_tokens`` bounds
    the rendered input including special tokens (it is additionally clamped
    to the model's position limit at load time). ``pooling`` picks the vector
    read-out: the hidden state at the leading special token, or the
    mask-weighted mean over all positions.
    """

    model: str
    max_tokens: int = 512
    pooling: str = "cls"
    device: str = "cpu"
    port: int = 8100

    def __post_init__(self) -> None:
        if not self.model:
            raise ConfigurationError("model identifier must be non-empty")
        if self.max_tokens < 8:
            raise ConfigurationError(f"max_tokens must be at least 8, got {self.max_tokens}")
        if self.pooling not in POOLING_MODES:
            raise ConfigurationError(
                f"unknown pooling {self.pooling!r} (expected one of {', '.join(POOLING_MODES)})"
            )
        if not 0 <= self.port < 65536:
            raise ConfigurationError(f"port out of range: {self.port}")


_INT_FIELDS = {"max_tokens", "port"}


def load_service_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
) -> ServiceConfig:
    """Read the config file (if any), then apply environment overrides.

    YAML and JSON are both accepted; a missing file is an error, a missing
    path just means env-only configuration.
    """
    env = os.environ if env is None else env
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            if path.suffix == ".json":
                raw = json.loads(text)
            else:
                raw = yaml.safe_load(text) or {}
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config {path} must be a mapping")

    known = {f.name for f in fields(ServiceConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")

    for name in known:
        value = env.get(ENV_PREFIX + name.upper())
        if value is not None:
            raw[name] = value
    for name in _INT_FIELDS & set(raw):
        try:
            raw[name] = int(raw[name])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{name} must be an integer, got {raw[name]!r}") from exc

    if "model" not in raw:
        raise ConfigurationError(
            f"no model configured (set 'model' in the config file or {ENV_PREFIX}MODEL)"
        )
    return ServiceConfig(**{k: v for k, v in raw.items() if k in known})
