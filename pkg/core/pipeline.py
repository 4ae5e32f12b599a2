"""
Two-stage training pipeline: supervised pretraining, then adversarial fine-tuning
"""
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

import config
from core.exceptions import (
    CheckpointError, CheckpointIncompatibleError, ConfigurationError, NonFiniteError,
    TrainingDivergedError,
)
from core.models.discriminator import Discriminator, discriminator_forward
from core.models.generator import Generator, generator_forward
from core.models.settings import (
    CkanSettings, DataSettings, GeneratorConfig, LossWeights, TrainConfig, config_hash,
)
from core.nn.module import Module
from core.nn.optim import Adam
from core.nn.tensor import Tensor, backward, no_grad
from core.services.checkpoint_service import Checkpoint, CheckpointService, restore_parameters
from core.services.data_service import (
    DatasetManifest, ImageBuffer, bicubic_resample, extract_patch_pairs, gaussian_blur_kernel,
    load_image,
)
from core.services.loss_service import PerceptualExtractor, discriminator_loss, generator_loss
from core.services.metrics_service import evaluate_set, psnr, to_luminance
from core.utils.logger import JsonlWriter, get_logger

logger = get_logger(__name__)

ProgressCallback = Callable[[float, str], None]

LOG_KEYS = ("stage", "epoch", "step", "l_g", "l_d", "l_pix", "l_perc", "l_adv",
            "psnr_y", "msssim_y", "perc_dist")

NEW_BEST = "new_best"
KEEP = "keep"


@dataclass
class EarlyStopState:
    """Perception-guided acceptance with a PSNR guard"""
    baseline_psnr: float
    best_perc: float = math.inf
    best_checkpoint: Optional[str] = None


def early_stop_update(state: EarlyStopState, epoch_metrics: Mapping[str, float],
                      guard_delta: float = config.PSNR_GUARD_DELTA) -> str:
    """
    Accept a new best iff perc_dist improves and PSNR-Y stays within the guard

    Returns:
        "new_best" (state updated) or "keep"
    """
    perc = epoch_metrics["perc_dist"]
    psnr_y = epoch_metrics["psnr_y"]
    if perc < state.best_perc and psnr_y >= state.baseline_psnr - guard_delta:
        state.best_perc = perc
        return NEW_BEST
    return KEEP


@dataclass
class TrainingResult:
    last_checkpoint: Path
    best_checkpoint: Optional[Path]
    history: List[Dict] = field(default_factory=list)


def _record(**values) -> Dict:
    record = {key: None for key in LOG_KEYS}
    record.update(values)
    return record


class TrainingPipeline:
    """Trains one generator (and, in the adversarial stage, a discriminator)"""

    def __init__(self, train: TrainConfig, generator: Optional[GeneratorConfig] = None,
                 ckan: Optional[CkanSettings] = None, data: Optional[DataSettings] = None,
                 extractor: Optional[PerceptualExtractor] = None):
        self.train = train
        self.generator_config = generator or GeneratorConfig()
        self.ckan = ckan or CkanSettings()
        self.data = data or DataSettings()
        self.scale = self.generator_config.upscale_factor
        if train.patch_size % self.scale:
            raise ConfigurationError(
                f"patch_size {train.patch_size} is not divisible by scale {self.scale}"
            )
        self.checkpoint_dir = Path(train.checkpoint_dir)
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        self.generator = Generator(self.generator_config, self.ckan)
        self.extractor = extractor or PerceptualExtractor()
        self.blur_kernel = (gaussian_blur_kernel(self.data.blur_sigma)
                            if self.data.blur_sigma > 0 else None)
        self._bicubic_psnr: Optional[float] = None
        logger.info(f"Pipeline initialized: {self.generator.num_parameters()} generator parameters")

    # ------------------------------------------------------------------ data

    def _load(self, manifest: DatasetManifest) -> List[Tuple[str, ImageBuffer, Optional[ImageBuffer]]]:
        manifest.validate()
        return [
            (Path(hr).stem, load_image(hr), load_image(lr) if lr is not None else None)
            for hr, lr in manifest.entries
        ]

    def _sample(self, images, rng: np.random.Generator) -> Tuple[Tensor, Tensor]:
        """One aligned (hr, lr) patch pair as (1, 3, P, P) / (1, 3, P/s, P/s) tensors"""
        index = int(rng.integers(len(images)))
        patch_seed = int(rng.integers(2 ** 31 - 1))
        _, hr, lr = images[index]
        size, s = self.train.patch_size, self.scale
        pair = extract_patch_pairs(hr, s, size, 1, patch_seed, blur_kernel=self.blur_kernel,
                                   noise_sigma=self.data.noise_sigma)[0]
        lr_patch = pair.lr_patch
        if lr is not None:
            lr_patch = lr.crop(pair.x // s, pair.y // s, size // s, size // s)
        return pair.hr_patch.to_tensor(), lr_patch.to_tensor()

    def _validation_pairs(self, manifest: DatasetManifest):
        return manifest.load_pairs(blur_kernel=self.blur_kernel,
                                   noise_sigma=self.data.noise_sigma, seed=self.data.noise_seed)

    def validate(self, pairs) -> Dict[str, float]:
        """Mean PSNR-Y, MS-SSIM-Y and perc_dist of the generator on (name, hr, lr) pairs"""
        outputs = []
        with no_grad():
            for name, hr, lr in pairs:
                sr = generator_forward(lr.to_tensor(), self.generator)
                outputs.append((name, hr, ImageBuffer.from_array(sr.data)))
        report = evaluate_set(outputs, self.extractor)
        return report.to_dict()

    def bicubic_psnr(self, pairs) -> float:
        """Mean PSNR-Y of plain bicubic upsampling, computed once per run"""
        if self._bicubic_psnr is None:
            values = [
                psnr(to_luminance(hr), to_luminance(bicubic_resample(lr, hr.width, hr.height)))
                for _, hr, lr in pairs
            ]
            self._bicubic_psnr = float(np.mean(values))
        return self._bicubic_psnr

    # -------------------------------------------------------------- helpers

    @staticmethod
    def _check_gradients(module: Module, group: str) -> None:
        for name, param in module.named_parameters():
            if param.grad is not None and not np.isfinite(param.grad).all():
                raise TrainingDivergedError(
                    f"Non-finite gradient in {group}.{name}", group=f"{group}.{name}"
                )

    @staticmethod
    def _guarded(group: str, fn):
        try:
            return fn()
        except TrainingDivergedError:
            raise
        except NonFiniteError as e:
            raise TrainingDivergedError(f"Non-finite values in {group}: {e}", group=group) from e

    def _checkpoint(self, stage: str, epoch: int, stage_start: int, best: Dict,
                    adam_g: Adam, discriminator: Optional[Discriminator] = None,
                    adam_d: Optional[Adam] = None) -> Checkpoint:
        return Checkpoint(
            generator_config=self.generator_config,
            ckan=self.ckan,
            generator=[p.data.copy() for p in self.generator.parameters()],
            stage=stage,
            epoch=epoch,
            stage_start_epoch=stage_start,
            best=dict(best),
            discriminator=None if discriminator is None else [p.data.copy() for p in discriminator.parameters()],
            adam_g=adam_g.state,
            adam_d=None if adam_d is None else adam_d.state,
            extra={"train": self.train.model_dump(mode="json")},
        )

    def _load_checkpoint(self, source) -> Checkpoint:
        """Read a checkpoint file, or check the config hash of an already loaded one"""
        expected = config_hash(self.generator_config, self.ckan)
        if isinstance(source, Checkpoint):
            if source.config_hash != expected:
                raise CheckpointIncompatibleError(
                    f"Checkpoint {source.source} was written for a different generator configuration"
                )
            return source
        return CheckpointService.load(source, expected_hash=expected)

    def _new_adam_g(self) -> Adam:
        return Adam(self.generator.parameters(), self.train.lr_g, self.train.betas, self.train.eps)

    # ------------------------------------------------------------ pretrain

    def pretrain(self, manifest: DatasetManifest, val_manifest: Optional[DatasetManifest] = None,
                 resume=None, progress_callback: Optional[ProgressCallback] = None) -> TrainingResult:
        """
        Supervised pretraining on the content loss

        Args:
            manifest: Training images
            val_manifest: Validation images (defaults to the training set)
            resume: Optional last.ckpt of an interrupted pretraining run
            progress_callback: Optional callback(progress, message)

        Returns:
            TrainingResult with last/best checkpoints and per-epoch records
        """
        cfg = self.train
        weights = cfg.pretrain_loss.model_copy(update={"lambda_adv": 0.0})
        adam_g = self._new_adam_g()
        start_epoch = 0
        best = {"best_psnr": -math.inf}

        if resume is not None:
            ckpt = self._load_checkpoint(resume)
            if ckpt.stage != "pretrain":
                raise CheckpointError(f"{ckpt.source or resume} is not a pretraining checkpoint")
            restore_parameters(self.generator, ckpt.generator, "generator")
            if ckpt.adam_g is not None:
                adam_g.state = ckpt.adam_g
            start_epoch = ckpt.epoch
            best.update(ckpt.best)
            logger.info(f"Resuming pretraining at epoch {start_epoch} from {ckpt.source or resume}")

        return self._run(
            "pretrain", manifest, val_manifest, start_epoch, cfg.epochs, 0,
            weights, adam_g, None, None, best, resume is not None, progress_callback,
        )

    # --------------------------------------------------------- adversarial

    def adversarial_train(self, pretrain_ckpt, manifest: DatasetManifest,
                          val_manifest: Optional[DatasetManifest] = None, resume=None,
                          progress_callback: Optional[ProgressCallback] = None) -> TrainingResult:
        """
        Adversarial fine-tuning from a pretrained generator

        The generator keeps its optimizer state from pretraining. Epoch
        numbering continues from the checkpoint, so per-epoch sampling
        matches a continued pretraining run.
        Both checkpoints may be given as a path or as a loaded Checkpoint.
        """
        cfg = self.train
        source = resume if resume is not None else pretrain_ckpt
        ckpt = self._load_checkpoint(source)
        label = ckpt.source or source
        restore_parameters(self.generator, ckpt.generator, "generator")
        adam_g = self._new_adam_g()
        if ckpt.adam_g is not None:
            adam_g.state = ckpt.adam_g

        discriminator = Discriminator(seed=cfg.seed)
        adam_d = Adam(discriminator.parameters(), cfg.lr_d, cfg.betas, cfg.eps)

        if resume is not None:
            if ckpt.stage != "adversarial" or ckpt.discriminator is None:
                raise CheckpointError(f"{label} is not an adversarial checkpoint")
            restore_parameters(discriminator, ckpt.discriminator, "discriminator")
            if ckpt.adam_d is not None:
                adam_d.state = ckpt.adam_d
            stage_start = ckpt.stage_start_epoch
            best = dict(ckpt.best)
            logger.info(f"Resuming adversarial training at epoch {ckpt.epoch} from {label}")
        else:
            stage_start = ckpt.epoch
            val_pairs = self._validation_pairs(val_manifest or manifest)
            pretrained = self.validate(val_pairs)
            best = {"baseline_psnr": pretrained["psnr_y"], "best_perc": pretrained["perc_dist"]}
            logger.info(
                f"Pretrained baseline: PSNR-Y {pretrained['psnr_y']:.4f} dB, "
                f"perc {pretrained['perc_dist']:.6f}"
            )

        return self._run(
            "adversarial", manifest, val_manifest, ckpt.epoch, stage_start + cfg.epochs, stage_start,
            cfg.loss, adam_g, discriminator, adam_d, best, resume is not None, progress_callback,
        )

    # ---------------------------------------------------------------- loop

    def _run(self, stage: str, manifest: DatasetManifest, val_manifest: Optional[DatasetManifest],
             start_epoch: int, end_epoch: int, stage_start: int, weights: LossWeights,
             adam_g: Adam, discriminator: Optional[Discriminator], adam_d: Optional[Adam],
             best: Dict, resumed: bool, progress_callback: Optional[ProgressCallback]) -> TrainingResult:
        cfg = self.train
        start_time = time.time()
        last_path = self.checkpoint_dir / config.LAST_CHECKPOINT
        best_path = self.checkpoint_dir / config.BEST_CHECKPOINT
        history: List[Dict] = []

        try:
            logger.info("=" * 50)
            logger.info(f"Starting {stage} stage")
            logger.info(f"Epochs: {start_epoch} -> {end_epoch}")
            logger.info(f"Patches per epoch: {cfg.patches_per_epoch} of {cfg.patch_size}px")
            logger.info(f"Loss weights: {weights.model_dump()}")
            logger.info("=" * 50)

            if val_manifest is None:
                logger.warning("No validation manifest given, validating on the training set")
            images = self._load(manifest)
            val_pairs = self._validation_pairs(val_manifest or manifest)
            bicubic = self.bicubic_psnr(val_pairs)
            logger.info(f"Bicubic baseline PSNR-Y: {bicubic:.4f} dB")
            early = None
            if stage == "adversarial":
                early = EarlyStopState(baseline_psnr=best["baseline_psnr"],
                                       best_perc=best.get("best_perc", math.inf))

            log_path = self.checkpoint_dir / config.TRAIN_LOG
            with JsonlWriter(log_path, append=resumed) as log:
                total_epochs = max(1, end_epoch - start_epoch)
                for epoch in range(start_epoch, end_epoch):
                    rng = np.random.default_rng([cfg.seed, epoch])
                    step_losses = []
                    d_losses = []
                    for step in range(cfg.patches_per_epoch):
                        hr, lr = self._sample(images, rng)
                        record = self._train_step(stage, hr, lr, weights, adam_g,
                                                  discriminator, adam_d)
                        record.update(stage=stage, epoch=epoch, step=step)
                        log.write(record)
                        step_losses.append(record["l_g"])
                        if record["l_d"] is not None:
                            d_losses.append(record["l_d"])
                        if progress_callback:
                            done = (epoch - start_epoch + (step + 1) / cfg.patches_per_epoch) / total_epochs
                            progress_callback(done, f"{stage} epoch {epoch} step {step + 1}/{cfg.patches_per_epoch}")

                    metrics = self.validate(val_pairs)
                    summary = _record(
                        stage=stage, epoch=epoch,
                        l_g=float(np.mean(step_losses)),
                        l_d=float(np.mean(d_losses)) if d_losses else None,
                        psnr_y=metrics["psnr_y"], msssim_y=metrics["msssim_y"],
                        perc_dist=metrics["perc_dist"],
                    )
                    summary["bicubic_psnr_y"] = bicubic
                    summary["baseline_psnr_y"] = best.get("baseline_psnr")

                    improved = False
                    if stage == "pretrain":
                        if metrics["psnr_y"] > best["best_psnr"]:
                            best["best_psnr"] = metrics["psnr_y"]
                            improved = True
                    else:
                        if d_losses and max(d_losses) < config.DISCRIMINATOR_COLLAPSE_LOSS:
                            logger.warning(
                                f"Discriminator collapse: L_D < {config.DISCRIMINATOR_COLLAPSE_LOSS} "
                                f"for all of epoch {epoch}"
                            )
                        decision = early_stop_update(early, metrics, cfg.psnr_guard_delta)
                        summary["early_stop"] = decision
                        best["best_perc"] = early.best_perc
                        improved = decision == NEW_BEST
                    log.write(summary)
                    history.append(summary)
                    logger.info(
                        f"[{stage}] epoch {epoch}: L_G {summary['l_g']:.6f}, "
                        f"PSNR-Y {metrics['psnr_y']:.4f} dB (bicubic {bicubic:.4f}), "
                        f"perc {metrics['perc_dist']:.6f}"
                    )

                    ckpt = self._checkpoint(stage, epoch + 1, stage_start, best, adam_g,
                                            discriminator, adam_d)
                    if improved:
                        CheckpointService.save(best_path, ckpt)
                        if early is not None:
                            early.best_checkpoint = str(best_path)
                    CheckpointService.save(last_path, ckpt)

            elapsed = time.time() - start_time
            logger.info("=" * 50)
            logger.info(f"{stage} stage completed in {elapsed:.2f}s")
            logger.info(f"Last checkpoint: {last_path}")
            logger.info("=" * 50)
            return TrainingResult(last_path, best_path if best_path.exists() else None, history)

        except Exception as e:
            logger.error(f"{stage} stage failed: {e}", exc_info=True)
            raise

    def _train_step(self, stage: str, hr: Tensor, lr: Tensor, weights: LossWeights,
                    adam_g: Adam, discriminator: Optional[Discriminator],
                    adam_d: Optional[Adam]) -> Dict:
        fake = self._guarded("generator", lambda: generator_forward(lr, self.generator))
        l_d = None

        if discriminator is not None:
            discriminator.zero_grad()
            d_loss = self._guarded("discriminator", lambda: discriminator_loss(
                discriminator_forward(hr, discriminator),
                discriminator_forward(fake.detach(), discriminator),
            ))
            backward(d_loss)
            self._check_gradients(discriminator, "discriminator")
            adam_d.step()
            l_d = d_loss.item()

        self.generator.zero_grad()
        logits_fake = None
        if discriminator is not None and weights.lambda_adv > 0:
            logits_fake = self._guarded("discriminator",
                                        lambda: discriminator_forward(fake, discriminator))
        g_loss, breakdown = self._guarded("generator", lambda: generator_loss(
            hr, fake, logits_fake, weights, self.extractor
        ))
        backward(g_loss)
        self._check_gradients(self.generator, "generator")
        adam_g.step()

        return _record(l_g=breakdown.total, l_d=l_d, l_pix=breakdown.l_pix,
                       l_perc=breakdown.l_perc, l_adv=breakdown.l_adv)
