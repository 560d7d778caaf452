import hashlib
import json
import os
import types
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Literal, Optional, TypeAliasType, Union, get_args, get_origin, get_type_hints

from dotenv import load_dotenv

from calibrec.exceptions.exceptions import InvalidConfigError
from calibrec.model.config import ModelConfig
from calibrec.training.config import TrainingConfig

REPORT_ROOT_VARIABLE = "CALIBREC_REPORT_ROOT"
DEFAULT_REPORT_ROOT = "reports"
RESOLVED_CONFIG = "resolved_config.json"

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}
_NULL = {"null", "none"}


def report_root() -> Path:
    """`CALIBREC_REPORT_ROOT` from the environment or a `.env` file, else `./reports`."""
    load_dotenv()
    return Path(os.getenv(REPORT_ROOT_VARIABLE) or DEFAULT_REPORT_ROOT)


@dataclass
class RunConfig(TrainingConfig, ModelConfig):
    """
    Everything one command needs: the model architecture, the optimization
    settings and the paths.

    Args:
        data_dir: Directory written by `calibrec preprocess`.
        checkpoint_dir: Where training writes its checkpoint; defaults to the run directory.
        report_dir: Root of the per-run report directories; defaults to `report_root()`.
    """

    data_dir: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    report_dir: Optional[str] = None

    def violations(self) -> list[tuple[str, str]]:
        return super().violations() + self.training_violations()

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{name: getattr(self, name) for name in ModelConfig.field_names()})

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(**{f.name: getattr(self, f.name) for f in fields(TrainingConfig)})

    def require_data_dir(self) -> Path:
        if self.data_dir is None:
            raise InvalidConfigError(type(self).__name__, [("data_dir", "is required by this command")])
        return Path(self.data_dir)

    def resolved_report_root(self) -> Path:
        return Path(self.report_dir) if self.report_dir else report_root()

    def run_id(self, command: str, **context: Any) -> str:
        """Stable across reruns of the same command with the same resolved config and `context`."""
        payload = {"config": self.to_dict(), "context": context}
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode("utf-8"))
        return f"{command}-{digest.hexdigest()[:12]}"

    def run_dir(self, command: str, **context: Any) -> Path:
        return self.resolved_report_root() / self.run_id(command, **context)

    def write_snapshot(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RESOLVED_CONFIG
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read_file(cls, path: str | Path) -> dict[str, Any]:
        path = Path(path)
        if not path.is_file():
            raise InvalidConfigError(cls.__name__, [("config", f"{path} does not exist")])
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise InvalidConfigError(cls.__name__, [("config", f"{path} is not valid JSON: {error}")]) from error
        return data

    @classmethod
    def field_hints(cls) -> dict[str, Any]:
        hints = get_type_hints(cls)
        return {name: hints[name] for name in cls.field_names()}


def _unwrap(hint: Any) -> tuple[Any, bool]:
    """Strips type aliases and Optional; returns the inner hint and whether None is allowed."""
    while isinstance(hint, TypeAliasType):
        hint = hint.__value__

    if get_origin(hint) in (Union, types.UnionType):
        args = [arg for arg in get_args(hint) if arg is not type(None)]
        optional = len(args) < len(get_args(hint))
        inner, _ = _unwrap(args[0])
        return inner, optional
    return hint, False


def coerce(name: str, raw: str, hint: Any) -> Any:
    """Parses the command-line text of one config field according to its type."""
    hint, optional = _unwrap(hint)
    text = raw.strip()

    if optional and text.lower() in _NULL:
        return None

    try:
        if get_origin(hint) is Literal:
            choices = get_args(hint)
            value = int(text) if all(isinstance(choice, int) for choice in choices) else text
            if value not in choices:
                raise ValueError(f"expected one of {list(choices)}")
            return value
        if get_origin(hint) is list:
            (item,) = get_args(hint)
            return [item(part) for part in text.split(",") if part.strip()]
        if hint is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError("expected true or false")
        return hint(text)
    except ValueError as error:
        raise InvalidConfigError(RunConfig.__name__, [(name, f"cannot parse {raw!r}: {error}")]) from error


def coerce_overrides(raw: dict[str, str]) -> dict[str, Any]:
    hints = RunConfig.field_hints()
    values, problems = {}, []
    for name, text in raw.items():
        try:
            values[name] = coerce(name, text, hints[name])
        except InvalidConfigError as error:
            problems.extend(error.violations)
    if problems:
        raise InvalidConfigError(RunConfig.__name__, problems)
    return values


def resolve_config(
    config_path: Optional[str | Path],
    raw_overrides: dict[str, str],
    base: Optional[dict[str, Any]] = None,
) -> RunConfig:
    """Layers `base`, the JSON file and the command-line overrides, then validates the whole."""
    file_values = RunConfig.read_file(config_path) if config_path is not None else {}
    return RunConfig.from_dict({**(base or {}), **file_values, **coerce_overrides(raw_overrides)})
