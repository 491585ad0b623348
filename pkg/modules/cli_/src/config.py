"""Run configuration: merged module schemas, YAML file and flag overrides."""

from copy import deepcopy
from functools import cache
from pathlib import Path
from typing import Any, Iterator, Mapping

from cellophane import cfg, data
from jsonschema import Draft7Validator, validators
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

MODULES = ("diffcore", "srnet", "latlab", "speedmodel", "nastrain", "dataeval", "cli_")
MODULES_ROOT = Path(__file__).parents[2]
ENV_VAR = "SRNAS_CONFIG"


class ConfigError(ValueError):
    """Unreadable or invalid run configuration."""


def as_plain(value: Any) -> Any:
    """Nested dicts and lists in place of containers."""
    if isinstance(value, (Mapping, data.Container)):
        return {key: as_plain(item) for key, item in value.items()}
    if isinstance(value, list):
        return [as_plain(item) for item in value]
    return value


def _fill_defaults(validator_class: type) -> type:
    validate_properties = validator_class.VALIDATORS["properties"]

    def properties(validator: Any, props: Mapping, instance: Any, schema: Mapping) -> Iterator:
        if isinstance(instance, dict):
            for name, sub in props.items():
                if "default" in sub:
                    instance.setdefault(name, deepcopy(sub["default"]))
                elif sub.get("type") == "object":
                    instance.setdefault(name, {})
        yield from validate_properties(validator, props, instance, schema)

    return validators.extend(validator_class, {"properties": properties})


_Validator = _fill_defaults(Draft7Validator)


@cache
def merged_schema() -> dict[str, Any]:
    """One schema whose top-level properties are those of every module."""
    schema = cfg.Schema.from_file(path=[MODULES_ROOT / module / "schema.yaml" for module in MODULES])
    return as_plain(schema) | {"additionalProperties": False}


def read_config_file(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file {path} does not exist")
    try:
        content = YAML(typ="safe").load(path.read_text())
    except YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError(f"{path} must hold a mapping, got {type(content).__name__}")
    return content


def load_config(path: Path | None = None, overrides: Mapping[str, Any] | None = None) -> data.Container:
    """
    Schema defaults, then the YAML file at ``path``, then ``overrides`` (dotted
    keys, ``None`` values ignored), validated against the merged schema.
    """
    config = read_config_file(path)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        *parents, leaf = key.split(".")
        node = config
        for part in parents:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[leaf] = value
    errors = sorted(_Validator(merged_schema()).iter_errors(config), key=lambda error: list(error.absolute_path))
    if errors:
        error = errors[0]
        where = ".".join(str(part) for part in error.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {error.message}")
    return data.Container(config)
