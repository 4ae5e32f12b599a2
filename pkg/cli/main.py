"""
Command-line entry point

    python -m cli.main <command> [options]

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).parent.parent))

from pydantic import ValidationError

from cli.commands import COMMANDS
from cli.schemas import CliConfig
from core import __version__
from core.exceptions import CkanSrError, ConfigurationError, ShapeError
from core.utils.logger import get_logger, log_settings, setup_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key = value settings file (default: none)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting, e.g. ckan.chunk_pixels=1024 (repeatable)")
    common.add_argument("--log-file", default=None, help="also log to this file (default: none)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="ckan-sr",
        description="CKAN super-resolution: data, training, inference, evaluation and checks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synth", parents=[common], formatter_class=defaults,
                       help="write a procedural image dataset and its manifest")
    p.add_argument("--n", type=int, default=8, help="number of images")
    p.add_argument("--size", type=int, default=128, help="image width and height")
    p.add_argument("--seed", type=int, default=None, help="dataset seed (default: train.seed)")
    p.add_argument("--split", default="train", help="split tag stored in the manifest")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("degrade", parents=[common], formatter_class=defaults,
                       help="write LR counterparts for every image of a manifest")
    p.add_argument("--manifest", required=True, help="HR manifest file or directory")
    p.add_argument("--scale", type=int, default=None, help="factor (default: generator.upscale_factor)")
    p.add_argument("--blur", type=float, default=None, help="Gaussian blur sigma (default: data.blur_sigma)")
    p.add_argument("--sigma", type=float, default=None, help="noise sigma (default: data.noise_sigma)")
    p.add_argument("--seed", type=int, default=None, help="noise seed (default: data.noise_seed)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("pretrain", parents=[common], formatter_class=defaults,
                       help="supervised pretraining on the content loss")
    p.add_argument("--manifest", required=True, help="training manifest")
    p.add_argument("--val", default=None, help="validation manifest (default: training set)")
    p.add_argument("--out", default=None, help="checkpoint directory (default: train.checkpoint_dir)")
    p.add_argument("--resume", default=None, help="last.ckpt of an interrupted run")

    p = sub.add_parser("gan", parents=[common], formatter_class=defaults,
                       help="adversarial fine-tuning from a pretrained checkpoint")
    p.add_argument("--from", dest="init", default=None, help="pretrained checkpoint (required)")
    p.add_argument("--manifest", required=True, help="training manifest")
    p.add_argument("--val", default=None, help="validation manifest (default: training set)")
    p.add_argument("--out", default=None, help="checkpoint directory (default: train.checkpoint_dir)")
    p.add_argument("--resume", default=None, help="last.ckpt of an interrupted adversarial run")

    p = sub.add_parser("infer", parents=[common], formatter_class=defaults,
                       help="upscale images with a trained generator")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint")
    p.add_argument("--input", nargs="*", default=None, help="LR image files or directories")
    p.add_argument("--manifest", default=None, help="manifest; LR is read or degraded per entry")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--chunk-pixels", type=int, default=None,
                   help="patch columns per band (default: ckan.chunk_pixels)")
    p.add_argument("--baseline", action="store_true", help="also write bicubic upsampling")

    p = sub.add_parser("eval", parents=[common], formatter_class=defaults,
                       help="metrics of SR outputs against the HR images of a manifest")
    p.add_argument("--manifest", required=True, help="HR manifest")
    p.add_argument("--sr", action="append", default=None, help="directory of SR outputs (repeatable)")
    p.add_argument("--name", action="append", default=None, help="model name per --sr (repeatable)")
    p.add_argument("--bicubic", action="store_true", help="add the bicubic baseline row")
    p.add_argument("--out", required=True, help="directory for CSV files and summary.md")

    p = sub.add_parser("bench", parents=[common], formatter_class=defaults,
                       help="measure operation counts and patch-buffer peaks of the CKAN operator")
    p.add_argument("--sizes", default="8,12,16", help="comma-separated square input sizes")
    p.add_argument("--chunks", default="1,4,16,32,64,1024", help="comma-separated chunk_pixels")
    p.add_argument("--kernels", default="1,3", help="comma-separated kernel sizes")
    p.add_argument("--channels", default="2,4", help="comma-separated channel counts")
    p.add_argument("--modes", default="linear,kan", help="projector kinds")
    p.add_argument("--batch", type=int, default=1, help="batch size")
    p.add_argument("--out", default="bench", help="output directory")

    p = sub.add_parser("selftest", parents=[common], formatter_class=defaults,
                       help="run the reference-implementation checks")
    p.add_argument("--filter", default=None, help="only oracles whose name or tag contains this")
    p.add_argument("--seed", type=int, default=0, help="oracle seed")
    p.add_argument("--break-fold", action="store_true",
                   help="inject a wrong fold to confirm the fold check fails")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logger(None, args.log_file)
    try:
        cfg = CliConfig.load(args.config, args.set)
        log_settings(logger, cfg.effective())
        return COMMANDS[args.command](args, cfg)
    except (ConfigurationError, ShapeError, ValidationError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except (CkanSrError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
