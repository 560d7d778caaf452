from calibrec.cli.main import build_parser, main
from calibrec.cli.run_config import RunConfig, resolve_config

__all__ = ["RunConfig", "build_parser", "main", "resolve_config"]
