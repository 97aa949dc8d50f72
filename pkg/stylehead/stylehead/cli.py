'''
Command line front end: `stylehead <subcommand> ...` or `python -m stylehead <subcommand> ...`.

Exit codes: 0 on success, 1 on a usage or validation error, 2 on an I/O error.
'''
from __future__ import annotations
import argparse
import logging
import sys
from typing import Dict, Optional, Sequence, Tuple

from pydantic import ValidationError

from . import pipeline
from .errors import DatasetIOError, StyleHeadError
from .run_config import RunConfig, load_run_config

logger = logging.getLogger("stylehead")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        # --key=value overrides must never be taken for abbreviated options
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    # argparse exits with 2 on bad usage, which is reserved for I/O errors here
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError("{}: error: {}".format(self.prog, message))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file of run settings")
    common.add_argument("--seed", type=int, help="seed of every random source")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--verbose", action="store_true", help="log at DEBUG level")

    parser = _Parser(prog="stylehead", description="style-aware audio-driven talking heads",
                     epilog="any --key=value flag overrides the run setting of the same name")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth-data", parents=[common], help="write a synthetic dataset")

    for name in ("train-apc", "train-motion", "train-generator"):
        p = sub.add_parser(name, parents=[common], help="train a pipeline stage")
        p.add_argument("manifest", help="dataset manifest")
        p.add_argument("--checkpoint", help="directory of earlier stages (default: --out)")

    p = sub.add_parser("build-isp", parents=[common], help="intermediate style patterns of an image")
    p.add_argument("image", help="source image (PNG)")
    p.add_argument("style_landmarks", help="landmark file of the style video")
    p.add_argument("style_frames", help="frame directory of the style video")
    p.add_argument("--checkpoint")

    p = sub.add_parser("transfer", parents=[common], help="fine-tune the motion generator to a style")
    p.add_argument("reference_landmarks", help="landmark file of the style video")
    p.add_argument("audio", help="audio track of the style video (WAV)")
    p.add_argument("--checkpoint")

    p = sub.add_parser("animate", parents=[common], help="audio + image -> frames and landmarks")
    p.add_argument("audio")
    p.add_argument("image")
    p.add_argument("checkpoint", help="checkpoint directory")

    p = sub.add_parser("evaluate", parents=[common], help="metric report of two landmark files")
    p.add_argument("reference")
    p.add_argument("generated")
    p.add_argument("--frames", help="directory of generated frames, enables CPBD")
    return parser


def split_overrides(extra: Sequence[str]) -> Dict[str, str]:
    '''
    --key=value flags left over by argparse; anything else is a usage error.
    '''
    overrides = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise UsageError("unrecognized argument: {}".format(item))
        key, value = item[2:].split("=", 1)
        overrides[key] = value
    return overrides


def parse(argv: Sequence[str]) -> Tuple[argparse.Namespace, RunConfig]:
    args, extra = build_parser().parse_known_args(list(argv))
    overrides = split_overrides(extra)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return args, load_run_config(args.config, overrides)


def run(args: argparse.Namespace, cfg: RunConfig):
    pipeline.prepare(cfg)
    command = args.command
    if command == "synth-data":
        return pipeline.synth_data(cfg, args.out)
    if command == "train-apc":
        return pipeline.train_apc_stage(cfg, args.manifest, args.out)
    if command == "train-motion":
        return pipeline.train_motion_stage(cfg, args.manifest, args.out, args.checkpoint)
    if command == "train-generator":
        return pipeline.train_generator_stage(cfg, args.manifest, args.out)
    if command == "build-isp":
        return pipeline.build_isp_stage(cfg, args.image, args.style_landmarks, args.style_frames, args.out,
                                        args.checkpoint)
    if command == "transfer":
        return pipeline.transfer_stage(cfg, args.reference_landmarks, args.audio, args.out, args.checkpoint)
    if command == "animate":
        return pipeline.animate_stage(cfg, args.audio, args.image, args.checkpoint, args.out)
    if command == "evaluate":
        report = pipeline.evaluate_stage(cfg, args.reference, args.generated, args.out, args.frames)
        print(report.to_json())
        return report
    raise UsageError("unknown subcommand '{}'".format(command))


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args, cfg = parse(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except DatasetIOError as e:
        print("stylehead: {}".format(e), file=sys.stderr)
        return EXIT_IO
    except (StyleHeadError, ValidationError) as e:
        print("stylehead: invalid configuration: {}".format(e), file=sys.stderr)
        return EXIT_INVALID

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run(args, cfg)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    # I/O first: DatasetIOError is also a StyleHeadError
    except (DatasetIOError, OSError) as e:
        logger.debug("failed", exc_info=True)
        print("stylehead: {}".format(e), file=sys.stderr)
        return EXIT_IO
    except (StyleHeadError, ValidationError) as e:
        logger.debug("failed", exc_info=True)
        print("stylehead: {}".format(e), file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(cli_dispatch())
