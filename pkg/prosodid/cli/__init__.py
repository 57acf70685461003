# Command-line interface
from prosodid.cli.commands import run
from prosodid.cli.parser import build_parser

__all__ = ["run", "build_parser"]
