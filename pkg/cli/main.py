"""
Command-line entry point.

    python -m cli.main gen-data --out data.txt --sequences 50 --label-fraction 0.012 --seed 7
    python -m cli.main train --data data.txt --out model.txt --lambda 0.1 --variant triplet
    python -m cli.main sweep --preset label-fraction --out fractions.csv --jobs 4

Exit codes: 0 success, 1 I/O or file format error, 2 usage error, 3 domain error.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

# Add the parent directory to the Python path
sys.path.append(str(Path(__file__).resolve().parent.parent))

import config
from cli.commands import COMMANDS, execute_command, options_to_strings, resolve_options
from tc_core.errors import (
    CameraFormatError, CheckpointFormatError, ConfigConflictError, DatasetParseError, DomainError,
    ShapeMismatchError, TempoContError,
)
from tc_core.models import RunManifest
from utils.formatting import atomic_write_text, read_key_values

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3

ARG_TYPES = {"int": int, "float": float, "str": str, "path": str, "int_list": str, "float_list": str}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempocont", description="Semi-supervised heading regression toolkit")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sub = subparsers.add_parser(cmd["name"], help=cmd["description"], description=cmd["description"])
        sub.add_argument("--config", help="key=value file or run manifest JSON; flags override it")
        sub.add_argument("--log-level", help="logging level (default: TEMPOCONT_LOG_LEVEL or INFO)")
        for opt in cmd["parameters"]:
            if opt["type"] == "bool":
                sub.add_argument(opt["flag"], dest=opt["key"], action="store_true", default=None, help=opt["help"])
            else:
                sub.add_argument(opt["flag"], dest=opt["key"], type=ARG_TYPES[opt["type"]], default=None,
                                 choices=opt.get("choices"), help=opt["help"])
    return parser


def load_config_file(path: str, command: str) -> Dict[str, str]:
    """key=value file, or a manifest JSON whose resolved config is replayed."""
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as f:
            manifest = RunManifest.model_validate(json.load(f))
        if manifest.command != command:
            logger.warning(f"Replaying a '{manifest.command}' manifest for command '{command}'")
        return dict(manifest.config)
    return read_key_values(path)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, DomainError):
        return EXIT_DOMAIN
    if isinstance(exc, (DatasetParseError, CheckpointFormatError, CameraFormatError, ShapeMismatchError)):
        return EXIT_IO
    if isinstance(exc, (ConfigConflictError, ValueError)):
        return EXIT_USAGE
    return EXIT_IO


def write_manifest(command: str, options: Dict, result: Dict, duration_s: float) -> Optional[str]:
    """Write <first output>.manifest.json; commands without output files get none."""
    if not result["outputs"]:
        return None
    manifest = RunManifest(
        command=command,
        config=options_to_strings(options),
        seeds=result["seeds"],
        inputs=result["inputs"],
        outputs=result["outputs"],
        duration_s=duration_s,
        format_versions={
            "dataset": config.DATASET_FORMAT,
            "checkpoint": config.CHECKPOINT_FORMAT,
            "manifest": config.MANIFEST_FORMAT,
        },
    )
    path = f"{result['outputs'][0]}.manifest.json"
    atomic_write_text(path, manifest.model_dump_json(indent=2) + "\n")
    return path


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    level = (args.log_level or config.EnvSettings().log_level).upper()
    if not isinstance(logging.getLevelName(level), int):
        print(f"error: unknown log level {level!r}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    start = time.perf_counter()
    try:
        file_config = load_config_file(args.config, args.command) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "log_level")}
        options = resolve_options(args.command, flags, file_config)
        result = execute_command(args.command, options)
        write_manifest(args.command, options, result, time.perf_counter() - start)
    except (TempoContError, ValueError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return code

    for line in result["stdout"]:
        print(line)
    logger.info(f"{args.command} finished in {time.perf_counter() - start:.2f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
