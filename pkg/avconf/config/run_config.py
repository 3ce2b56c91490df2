"""
Run configuration: one file that resolves into model, training, decoding and task settings.

The ``[model]`` section picks a preset (``base = desk`` or ``base = full``) and a
``kind``; every other key, and the ``[model.*]`` subsections, override the preset field
by field. The resolved configuration is echoed into the output directory of every run.
"""

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from avconf.backend.config import ModelConfig, ModelKind
from avconf.config.parser import ParsedConfig, parse, parse_file
from avconf.core.errors import ConfigError
from avconf.training.evaluation import DecodeConfig
from avconf.training.toy import ToyTaskSpec
from avconf.training.trainer import TrainConfig

RESOLVED_NAME = "resolved_config.json"
SECTIONS = ("model", "train", "decode", "task")


class RunConfig(BaseModel):
    """Everything one CLI run needs."""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model: ModelConfig
    train: TrainConfig = Field(default_factory=TrainConfig)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    task: ToyTaskSpec = Field(default_factory=ToyTaskSpec)
    seed: int = 0
    threads: Optional[int] = Field(None, ge=1)
    out_dir: str = "runs/default"

    @model_validator(mode="after")
    def _check_vocab(self) -> "RunConfig":
        if self.task.vocab_size != self.model.vocab_size:
            raise ValueError(
                f"task vocab_size {self.task.vocab_size} != model vocab_size "
                f"{self.model.vocab_size}"
            )
        return self

    def config_hash(self) -> str:
        """SHA-256 of the resolved JSON (sorted keys)."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)

    def write_resolved(self, out_dir: Optional[Union[str, Path]] = None) -> str:
        """Write ``resolved_config.json`` into the output directory; returns the config hash."""
        directory = Path(out_dir or self.out_dir)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / RESOLVED_NAME).write_text(self.to_json() + "\n")
        return self.config_hash()

    @classmethod
    def default(cls, kind: ModelKind = "audio_visual", **overrides) -> "RunConfig":
        """Desk-scale run of the given model kind."""
        model = ModelConfig.desk(kind)
        return cls(model=model, task=ToyTaskSpec(vocab_size=model.vocab_size), **overrides)


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _preset(base: Literal["desk", "full"], kind: ModelKind, vocab_size: Optional[int]):
    presets = {"desk": ModelConfig.desk, "full": ModelConfig.full}
    if base not in presets:
        raise ValueError(f"unknown model base {base!r}; choose desk or full")
    if vocab_size is None:
        return presets[base](kind)
    return presets[base](kind, vocab_size=vocab_size)


def _resolve(parsed: ParsedConfig) -> Dict[str, Any]:
    data = copy.deepcopy(parsed.data)
    model = dict(data.get("model", {}))
    base = model.pop("base", "desk")
    kind = model.pop("kind", "audio_visual")
    try:
        preset = _preset(base, kind, model.get("vocab_size"))
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e), line=parsed.line_of(("model", "base"))) from e
    data["model"] = _merge(preset.model_dump(), model)

    for section in ("train", "task"):
        data.setdefault(section, {})
    for key in ("seed", "threads"):
        if key in data:
            data["train"].setdefault(key, data[key])
    data["task"].setdefault("vocab_size", data["model"]["vocab_size"])
    return data


def _config_error(error: ValidationError, parsed: ParsedConfig) -> ConfigError:
    first = error.errors()[0]
    path = tuple(str(part) for part in first["loc"])
    where = ".".join(path) or "config"
    return ConfigError(
        f"{parsed.source}: {where}: {first['msg']}", line=parsed.line_of(path)
    )


def from_parsed(parsed: ParsedConfig) -> RunConfig:
    """
    Validate parsed text into a ``RunConfig``.

    Raises:
        ConfigError: unknown key or invalid value, naming its source line
    """
    unknown = [k for k, v in parsed.data.items() if isinstance(v, dict) and k not in SECTIONS]
    if unknown:
        raise ConfigError(
            f"{parsed.source}: unknown section [{unknown[0]}]", line=parsed.line_of((unknown[0],))
        )
    data = _resolve(parsed)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise _config_error(e, parsed) from e


def loads(text: str, source: str = "<string>") -> RunConfig:
    return from_parsed(parse(text, source))


def load(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a config file.

    Raises:
        ConfigError: missing file, syntax error or invalid value
    """
    return from_parsed(parse_file(path))
