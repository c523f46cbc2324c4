import argparse
import logging
import sys
from typing import List, Optional

# config loads .env before anything reads the environment
from src import config
from src.commands.pipeline_commands import add_commands, report_error, run_command
from src.exceptions import UsageError


class CommandParser(argparse.ArgumentParser):
    """Argument errors use the same one-line record as runtime errors"""

    def error(self, message: str):
        sys.exit(report_error(UsageError(f"{self.prog}: {message}")))


def build_parser() -> CommandParser:
    parser = CommandParser(
        prog="anchorpose",
        description="Anchor-based multi-person 2D/3D pose estimation on synthetic scenes",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--log-level", type=str.upper, default=config.LOG_LEVEL.upper(),
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    add_commands(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return run_command(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
