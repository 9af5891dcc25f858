import argparse
import logging
import sys
from typing import List, Optional

from pythonjsonlogger import jsonlogger

from app.cli import commands
from app.config import settings
from app.errors import ConfigurationError, PreconditionError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    """Raised instead of argparse's own exit so usage errors map to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(level: Optional[str] = None) -> None:
    """Install the JSON root handler once."""
    root = logging.getLogger()
    if not any(getattr(h, "_brightvae", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(jsonlogger.JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        handler._brightvae = True
        root.addHandler(handler)
    root.setLevel(level or settings.log_level)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="brightvae", description=f"{settings.app_name} {settings.app_version}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synth", help="Write a synthetic paired low-light dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-pairs", type=int, default=0)
    p.add_argument("--force", action="store_true", help="Write into a non-empty output directory")
    p.set_defaults(handler=commands.cmd_make_synth)

    p = sub.add_parser("train", help="Train a model from a YAML run config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="Checkpoint to continue from")
    p.add_argument("--layout", choices=["generic", "endo4ie"], default="generic")
    p.set_defaults(handler=commands.cmd_train)

    p = sub.add_parser("eval", help="Score a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--layout", choices=["generic", "endo4ie"], default="generic")
    p.set_defaults(handler=commands.cmd_eval)

    p = sub.add_parser("enhance", help="Enhance a single image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=commands.cmd_enhance)

    p = sub.add_parser("ablate", help="Run the component grid or the loss sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", choices=["components", "losses"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layout", choices=["generic", "endo4ie"], default="generic")
    p.set_defaults(handler=commands.cmd_ablate)

    p = sub.add_parser("report", help="Render plots from finished runs")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=commands.cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.log_level)
    try:
        args.handler(args)
    except (ConfigurationError, PreconditionError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except Exception as e:
        logger.error("Command failed", extra={"error": str(e)}, exc_info=True)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
