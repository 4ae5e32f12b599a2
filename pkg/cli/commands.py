"""
Command handlers

Each handler takes the parsed arguments and the validated CliConfig and
returns a process exit code. Errors propagate to cli.main, which maps them
to exit codes.
"""
import argparse
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from cli.schemas import CliConfig
from core.exceptions import ConfigurationError, DataError
from core.models.generator import Generator, generator_forward
from core.nn.tensor import no_grad
from core.oracles import OracleContext, run_oracles
from core.pipeline import TrainingPipeline
from core.services.bench_service import BenchService
from core.services.checkpoint_service import CheckpointService, restore_parameters
from core.services.data_service import (
    DatasetManifest, DatasetService, ImageBuffer, bicubic_resample, gaussian_blur_kernel,
    load_image, save_image,
)
from core.services.metrics_service import MetricReport, comparison_table, evaluate_set
from core.utils.logger import get_logger

logger = get_logger(__name__)

IMAGE_SUFFIXES = (".ppm", ".png")


def _blur_kernel(sigma: float):
    return gaussian_blur_kernel(sigma) if sigma > 0 else None


def _progress(progress: float, message: str) -> None:
    logger.debug(f"{progress:.1%} - {message}")


def _train_config(args: argparse.Namespace, cfg: CliConfig, stage: str):
    update = {"stage": stage}
    if getattr(args, "out", None):
        update["checkpoint_dir"] = str(args.out)
    return cfg.train.model_copy(update=update)


# ------------------------------------------------------------------ data

def cmd_synth(args: argparse.Namespace, cfg: CliConfig) -> int:
    seed = cfg.train.seed if args.seed is None else args.seed
    manifest = DatasetService.synth_dataset(
        args.n, args.size, seed, args.out, split=args.split,
        scale=cfg.generator.upscale_factor,
    )
    print(f"Wrote {len(manifest)} images to {args.out}")
    return 0


def cmd_degrade(args: argparse.Namespace, cfg: CliConfig) -> int:
    manifest = DatasetManifest.load(args.manifest)
    scale = args.scale or cfg.generator.upscale_factor
    blur = cfg.data.blur_sigma if args.blur is None else args.blur
    noise = cfg.data.noise_sigma if args.sigma is None else args.sigma
    seed = cfg.data.noise_seed if args.seed is None else args.seed
    result = DatasetService.degrade_manifest(
        manifest, args.out, scale, blur_kernel=_blur_kernel(blur), noise_sigma=noise, seed=seed,
    )
    print(f"Degraded {len(result)} images by x{scale} into {args.out}")
    return 0


# -------------------------------------------------------------- training

def _optional_manifest(path) -> Optional[DatasetManifest]:
    return DatasetManifest.load(path) if path else None


def cmd_pretrain(args: argparse.Namespace, cfg: CliConfig) -> int:
    pipeline = TrainingPipeline(_train_config(args, cfg, "pretrain"), cfg.generator, cfg.ckan, cfg.data)
    result = pipeline.pretrain(
        DatasetManifest.load(args.manifest), _optional_manifest(args.val),
        resume=args.resume, progress_callback=_progress,
    )
    print(f"Pretraining finished: last={result.last_checkpoint} best={result.best_checkpoint}")
    return 0


def cmd_gan(args: argparse.Namespace, cfg: CliConfig) -> int:
    source = args.resume or args.init
    if not source:
        raise ConfigurationError("gan needs --from <pretrained checkpoint> (or --resume)")
    ckpt = CheckpointService.load(source)
    ckan = ckpt.ckan.model_copy(update={"chunk_pixels": cfg.ckan.chunk_pixels})
    pipeline = TrainingPipeline(_train_config(args, cfg, "adversarial"), ckpt.generator_config,
                                ckan, cfg.data)
    result = pipeline.adversarial_train(
        ckpt, DatasetManifest.load(args.manifest), _optional_manifest(args.val),
        resume=ckpt if args.resume else None, progress_callback=_progress,
    )
    print(f"Adversarial training finished: last={result.last_checkpoint} best={result.best_checkpoint}")
    return 0


# ------------------------------------------------------------- inference

def load_generator(path, chunk_pixels: Optional[int] = None) -> Generator:
    """Generator with the configuration and parameters stored in a checkpoint"""
    ckpt = CheckpointService.load(path)
    ckan = ckpt.ckan
    if chunk_pixels is not None:
        ckan = ckan.model_copy(update={"chunk_pixels": chunk_pixels})
    generator = Generator(ckpt.generator_config, ckan)
    restore_parameters(generator, ckpt.generator, "generator")
    return generator


def upscale(generator: Generator, lr: ImageBuffer) -> ImageBuffer:
    with no_grad():
        return ImageBuffer.from_array(generator_forward(lr.to_tensor(), generator).data)


def _collect_inputs(paths: Sequence[str]) -> List[Path]:
    files: List[Path] = []
    for item in paths:
        path = Path(item)
        if path.is_dir():
            files.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
        else:
            files.append(path)
    return files


def _lr_inputs(args: argparse.Namespace, cfg: CliConfig) -> List[Tuple[str, ImageBuffer]]:
    if args.manifest:
        manifest = DatasetManifest.load(args.manifest)
        pairs = manifest.load_pairs(blur_kernel=_blur_kernel(cfg.data.blur_sigma),
                                    noise_sigma=cfg.data.noise_sigma, seed=cfg.data.noise_seed)
        return [(name, lr) for name, _, lr in pairs]
    if not args.input:
        raise ConfigurationError("infer needs --input files/directories or --manifest")
    return [(path.stem, load_image(path)) for path in _collect_inputs(args.input)]


def cmd_infer(args: argparse.Namespace, cfg: CliConfig) -> int:
    chunk = args.chunk_pixels or cfg.ckan.chunk_pixels
    generator = load_generator(args.checkpoint, chunk)
    inputs = _lr_inputs(args, cfg)
    out_dir = Path(args.out)
    logger.info(f"Upscaling {len(inputs)} images x{generator.scale} (chunk_pixels {chunk})")
    for name, lr in inputs:
        sr = upscale(generator, lr)
        save_image(out_dir / f"{name}.ppm", sr)
        if args.baseline:
            baseline = bicubic_resample(lr, lr.width * generator.scale, lr.height * generator.scale)
            save_image(out_dir / "bicubic" / f"{name}.ppm", baseline)
        logger.info(f"{name}: {lr.width}x{lr.height} -> {sr.width}x{sr.height}")
    print(f"Wrote {len(inputs)} images to {out_dir}")
    return 0


# ------------------------------------------------------------ evaluation

def _find_output(directory: Path, name: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        candidate = directory / f"{name}{suffix}"
        if candidate.is_file():
            return candidate
    raise DataError(f"No output for {name!r} in {directory}")


def _model_names(args: argparse.Namespace) -> List[str]:
    names, dirs = list(args.name or []), list(args.sr or [])
    if names and len(names) != len(dirs):
        raise ConfigurationError(f"{len(names)} --name values for {len(dirs)} --sr directories")
    return names or [Path(d).name for d in dirs]


def cmd_eval(args: argparse.Namespace, cfg: CliConfig) -> int:
    manifest = DatasetManifest.load(args.manifest)
    if not args.sr and not args.bicubic:
        raise ConfigurationError("eval needs at least one --sr directory or --bicubic")
    pairs = manifest.load_pairs(blur_kernel=_blur_kernel(cfg.data.blur_sigma),
                                noise_sigma=cfg.data.noise_sigma, seed=cfg.data.noise_seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports: Dict[str, MetricReport] = {}

    if args.bicubic:
        triples = [(name, hr, bicubic_resample(lr, hr.width, hr.height)) for name, hr, lr in pairs]
        reports["bicubic"] = evaluate_set(triples)
    for name, directory in zip(_model_names(args), args.sr or []):
        triples = [(stem, hr, load_image(_find_output(Path(directory), stem))) for stem, hr, _ in pairs]
        reports[name] = evaluate_set(triples)

    for name, report in reports.items():
        report.to_csv(out_dir / f"metrics_{name}.csv")
    table = comparison_table(reports)
    (out_dir / "summary.md").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


# ------------------------------------------------------------- benchmark

def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigurationError(f"Expected comma-separated integers, got {text!r}") from e


def cmd_bench(args: argparse.Namespace, cfg: CliConfig) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    report = BenchService.sweep(
        _int_list(args.sizes), _int_list(args.chunks), _int_list(args.kernels),
        _int_list(args.channels), modes=modes, batch=args.batch, seed=cfg.train.seed,
    )
    out_dir = Path(args.out)
    report.to_csv(out_dir / "bench.csv")
    summary = report.summary()
    summary["passed"] = report.passed()
    (out_dir / "bench_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 0 if summary["passed"] else 1


# --------------------------------------------------------------- selftest

def format_results(results) -> str:
    width = max((len(r.name) for r in results), default=4)
    lines = [f"{'oracle':<{width}}  result  {'value':>10}  {'tol':>7}  seconds"]
    for r in results:
        lines.append(
            f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.value:>10.3e}  "
            f"{r.tolerance:>7.0e}  {r.seconds:7.3f}"
        )
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} passed")
    return "\n".join(lines)


def cmd_selftest(args: argparse.Namespace, cfg: CliConfig) -> int:
    ctx = OracleContext(seed=args.seed, break_fold=args.break_fold)
    results = run_oracles(args.filter, ctx)
    if not results:
        raise ConfigurationError(f"No oracle matches filter {args.filter!r}")
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "synth": cmd_synth,
    "degrade": cmd_degrade,
    "pretrain": cmd_pretrain,
    "gan": cmd_gan,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "selftest": cmd_selftest,
}
