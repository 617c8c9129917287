import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError as SchemaError

# Flat imports (core.*, commands.*) resolve against this directory
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from commands import bench, compose, continual, evaluate, generate, spectra, sweep, train
from commands.base import load_config, revalidate, schema_error
from core.config import load_settings, settings
from core.errors import ConfigError, PromptAlgebraError
from core.outputs import OutputLayout, config_hash

# Load environment variables
load_dotenv()

logger = logging.getLogger("promptalgebra")

COMMANDS = {module.NAME: module for module in (generate, spectra, train, compose, evaluate, sweep, continual, bench)}

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="promptalgebra",
        description="Prompt tuning, eigenspace projection and prompt algebra on a differentiable scoring model",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  promptalgebra gen --out runs/demo
  promptalgebra spectra --config configs/spectra.json --out runs/demo
  promptalgebra train --config configs/train_object.json --out runs/demo --seed 3
  promptalgebra eval --config configs/eval.json --out runs/demo
        """,
    )
    parser.add_argument("--version", action="version", version=f"{settings.app_name} {settings.app_version}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, module in COMMANDS.items():
        sub = subparsers.add_parser(name, help=module.HELP)
        sub.add_argument("--config", type=str, required=module.CONFIG_REQUIRED, help="JSON run config")
        sub.add_argument("--out", type=str, default="out", help="output directory (default: out)")
        sub.add_argument("--seed", type=int, default=None, help="override the seed(s) in the config")
        sub.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return parser.parse_args(argv)


def configure_logging(quiet: bool):
    level = logging.WARNING if quiet else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        force=True,
    )


def run_command(args: argparse.Namespace) -> dict:
    module = COMMANDS[args.command]
    config = load_config(args.config, module.Config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be nonnegative, got {args.seed}", key="seed")
        config = revalidate(config, **module.seed_update(config, args.seed))

    run_hash = config_hash({"command": module.NAME, "config": config.model_dump(mode="json")})
    layout = OutputLayout(args.out, run_hash)
    logger.info(f"Running '{module.NAME}' (config_hash={run_hash}) into {args.out}")
    summary = module.run(config, layout)
    summary["config_hash"] = run_hash
    return summary


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK

    load_settings()
    configure_logging(args.quiet)

    try:
        summary = run_command(args)
    except PromptAlgebraError as e:
        logger.error(f"{args.command} failed: {e.message}")
        print(e.one_line(), file=sys.stderr)
        return e.exit_code
    except SchemaError as e:
        error = schema_error(e)
        logger.error(f"{args.command} failed: {error.message}")
        print(error.one_line(), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        message = str(e).replace('"', "'")
        print(f'error={type(e).__name__} code={EXIT_IO} message="{message}"', file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        message = str(e).replace("\n", " ").replace('"', "'")
        print(f'error={type(e).__name__} code={EXIT_RUNTIME} message="{message}"', file=sys.stderr)
        return EXIT_RUNTIME

    if not args.quiet:
        print(json.dumps(summary, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
