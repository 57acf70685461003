import sys
from typing import List, Optional

from prosodid.cli.commands import run
from prosodid.cli.parser import build_parser
from prosodid.core.logging import setup_logging


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("DEBUG" if args.verbose else None)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
