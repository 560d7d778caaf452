from abc import ABC
from pathlib import Path
from textwrap import dedent
from typing import Iterable, Optional


class CalibrecError(ABC, Exception):
    """Root of every error raised by this package.

    Subclasses group errors by the exit code the command line reports for them.
    """

    exit_code: int = 1

    def __init__(self, errmsg: str, source: Optional[str] = None) -> None:
        prepend = "" if source is None else f"SOURCE: `{source}`\n"
        super().__init__(f"{prepend}{self._prettify(errmsg)}".strip())

    @staticmethod
    def _prettify(errmsg: str) -> str:
        return dedent(errmsg)


class DataError(CalibrecError):
    """
    To be raised when input data cannot be turned into sequences.
    Class used just for grouping.
    """

    exit_code = 2


class MissingInputError(DataError):
    def __init__(self, path: str | Path) -> None:
        errmsg = f"""
        Input file `{path}` does not exist.
        """
        super().__init__(errmsg)


class MalformedLineError(DataError):
    """To be raised when a line of an interaction file cannot be parsed."""

    def __init__(self, path: str | Path, line_number: int, reason: str) -> None:
        self.line_number = line_number
        errmsg = f"""
        Malformed line {line_number}: {reason}
        """
        super().__init__(errmsg, str(path))


class NoInteractionsError(DataError):
    def __init__(self, path: str | Path) -> None:
        super().__init__("no interactions", str(path))


class EmptyAfterKCoreError(DataError):
    def __init__(self, min_count: int) -> None:
        errmsg = f"""
        empty after k-core (min_count={min_count}): every user or item fell
        below the threshold.
        """
        super().__init__(errmsg)


class ItemIdOutOfRangeError(DataError):
    def __init__(self, max_id: int, vocabulary_size: int) -> None:
        errmsg = f"""
        Item id {max_id} is out of range for an item table with
        {vocabulary_size} rows (padding row included).
        """
        super().__init__(errmsg)


class ConfigurationError(CalibrecError):
    """
    To be raised when a configuration cannot be resolved.
    Class used just for grouping.
    """

    exit_code = 1


class UnknownConfigKeysError(ConfigurationError):
    def __init__(self, config_name: str, unknown_keys: Iterable[str]) -> None:
        self.keys = sorted(unknown_keys)
        errmsg = f"""
        Unknown keys for {config_name}: {", ".join(self.keys)}
        """
        super().__init__(errmsg)


class InvalidConfigError(ConfigurationError):
    def __init__(self, config_name: str, violations: Iterable[tuple[str, str]]) -> None:
        self.violations = list(violations)
        self.keys = [key for key, _ in self.violations]
        errmsg = f"Invalid values for {config_name}. Offending keys are the following:\n" + "\n".join(
            f"{key}: {reason}" for key, reason in self.violations
        )
        super().__init__(errmsg)


class NumericalError(CalibrecError):
    """
    To be raised when a numerical contract is violated.
    Class used just for grouping.
    """

    exit_code = 3


class NonFiniteLossError(NumericalError):
    def __init__(self, step: int, losses: dict[str, float], dump_path: Optional[Path]) -> None:
        self.dump_path = dump_path
        dumped = "" if dump_path is None else f"Diagnostics written to {dump_path}."
        errmsg = f"""
        Non-finite loss at step {step}: {losses}. {dumped}
        """
        super().__init__(errmsg)


class GradientCheckError(NumericalError):
    def __init__(self, errors: dict[str, float], tolerance: float) -> None:
        self.errors = errors
        offending = "\n".join(f"{name}: {error:.3e}" for name, error in errors.items())
        errmsg = f"Gradient check failed (tolerance {tolerance:.1e}) for:\n{offending}"
        super().__init__(errmsg)


class ModelError(CalibrecError):
    """
    To be raised when the model is used in a way its configuration forbids.
    Class used just for grouping.
    """

    exit_code = 1


class BranchUnavailableError(ModelError):
    def __init__(self, branch: str, reason: str) -> None:
        errmsg = f"""
        Branch `{branch}` is unavailable: {reason}
        """
        super().__init__(errmsg)


class CheckpointError(ModelError):
    def __init__(self, path: str | Path, reason: str) -> None:
        super().__init__(reason, str(path))
