"""
Command-line interface for ctrestore.

One subcommand per experiment. Every subcommand reads an optional INI run
file and accepts --seed, --out and --threads overrides on top of it.
Exit codes: 0 success, 2 invalid input or data, 1 anything unexpected.
"""

import argparse
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional

from app.core.config import resolve_threads
from app.core.errors import CTRestoreError
from app.core.parallel import set_workers
from app.pipeline import commands
from app.pipeline.config import ExperimentConfig, describe, load_config
from app.utils.logger import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2

COMMANDS: Dict[str, str] = {
    "generate": "simulate phantoms and low/high exposure reconstructions",
    "train": "train the restoration network on the generated dataset",
    "eval": "denoise the test split and report before/after metrics",
    "transfer-study": "scratch vs warm-start training over growing target sets",
    "loss-study": "compare MSE and SSIM training losses",
    "closed-loop": "validate on rescanned network outputs with known truth",
    "recon-study": "compare FBP, SIRT and CGLS reconstructions",
}

# subcommands that read a trained weights file
WEIGHTS_COMMANDS = ("eval", "closed-loop")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrestore",
        description="Low-exposure CT simulation, reconstruction and learned restoration.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, default=None, help="INI run file (defaults: desk preset)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", type=Path, default=None, help="run directory override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (0 = available parallelism)")
        p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
        if name in WEIGHTS_COMMANDS:
            p.add_argument("--weights", type=Path, default=None,
                           help="NNWT file (default: <out>/train/weights.nnwt)")
    return parser


def _dispatch(name: str, cfg: ExperimentConfig, args: argparse.Namespace) -> Path:
    handlers: Dict[str, Callable[[], Path]] = {
        "generate": lambda: commands.cmd_generate(cfg),
        "train": lambda: commands.cmd_train(cfg),
        "eval": lambda: commands.cmd_eval(cfg, args.weights),
        "transfer-study": lambda: commands.cmd_transfer_study(cfg),
        "loss-study": lambda: commands.cmd_loss_study(cfg),
        "closed-loop": lambda: commands.cmd_closed_loop(cfg, args.weights),
        "recon-study": lambda: commands.cmd_recon_study(cfg),
    }
    return handlers[name]()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        if args.seed is not None and args.seed < 0:
            raise CTRestoreError(f"--seed must be non-negative, got {args.seed}")
        if args.threads is not None and args.threads < 0:
            raise CTRestoreError(f"--threads must be non-negative, got {args.threads}")
        cfg = load_config(args.config).with_overrides(
            seed=args.seed,
            out=str(args.out) if args.out is not None else None,
            threads=args.threads,
        )
        workers = set_workers(resolve_threads(cfg.run.threads))

        logger.info("─" * 50)
        logger.info(f"ctrestore {args.command}  seed={cfg.seed}  config={cfg.config_hash()}  threads={workers}")
        for line in describe(cfg):
            logger.debug(f"  {line}")
        logger.info("─" * 50)

        result = _dispatch(args.command, cfg, args)
    except CTRestoreError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_INVALID
    except Exception as e:
        logger.error(f"{args.command} crashed: {e}", exc_info=True)
        return EXIT_UNEXPECTED

    logger.info(f"✅ {args.command} done: {result}")
    return EXIT_OK
