"""
Validated settings for models, losses and training
"""
import hashlib
import json
from typing import Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config


class Settings(BaseModel):
    """Base for every settings section: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class CkanSettings(Settings):
    """Spline grid, KAN width and memory budget of every CKAN layer"""
    chunk_pixels: int = Field(default=config.CHUNK_PIXELS, ge=1,
                              description="Patch columns materialized at once")
    spline_degree: int = Field(default=config.SPLINE_DEGREE, ge=1)
    spline_num_basis: int = Field(default=config.SPLINE_NUM_BASIS, ge=2)
    grid_range: Tuple[float, float] = Field(default=config.SPLINE_GRID_RANGE)
    hidden_width: int = Field(default=0, ge=0, description="KAN hidden width, 0 means K")

    @model_validator(mode="after")
    def check_grid(self):
        if self.spline_num_basis < self.spline_degree + 1:
            raise ValueError("spline_num_basis must be >= spline_degree + 1")
        if not self.grid_range[0] < self.grid_range[1]:
            raise ValueError(f"grid_range {self.grid_range} is empty")
        return self


class GeneratorConfig(Settings):
    """Generator topology"""
    base_channels: int = Field(default=config.BASE_CHANNELS, ge=1)
    num_residual_blocks: int = Field(default=config.NUM_RESIDUAL_BLOCKS, ge=1)
    upscale_factor: int = Field(default=config.UPSCALE_FACTOR, ge=2)
    ckan_blocks: bool = Field(default=True, description="CKAN residual blocks, plain conv if false")
    seed: int = Field(default=config.SEED, description="Parameter initialization seed")

    @field_validator("upscale_factor")
    @classmethod
    def power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"upscale_factor must be a power of 2, got {value}")
        return value


def config_hash(generator: GeneratorConfig, ckan: CkanSettings) -> bytes:
    """sha256 over the canonical JSON of everything that shapes the parameters"""
    payload = {
        "generator": generator.model_dump(mode="json"),
        "ckan": ckan.model_dump(mode="json", exclude={"chunk_pixels"}),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


class LossWeights(Settings):
    """L_G = lambda_adv L_adv + lambda_perc L_perc + lambda_pix L_pix"""
    lambda_adv: float = Field(default=config.LAMBDA_ADV, ge=0.0)
    lambda_perc: float = Field(default=config.LAMBDA_PERC, ge=0.0)
    lambda_pix: float = Field(default=config.LAMBDA_PIX, ge=0.0)

    @model_validator(mode="after")
    def check_positive(self):
        if max(self.lambda_adv, self.lambda_perc, self.lambda_pix) <= 0.0:
            raise ValueError("At least one loss weight must be positive")
        return self

    @classmethod
    def pretraining(cls) -> "LossWeights":
        return cls(lambda_adv=0.0, lambda_perc=config.PRETRAIN_LAMBDA_PERC,
                   lambda_pix=config.PRETRAIN_LAMBDA_PIX)


class DataSettings(Settings):
    """Degradation applied when a manifest entry has no LR file"""
    blur_sigma: float = Field(default=0.0, ge=0.0, description="Gaussian blur before resampling")
    noise_sigma: float = Field(default=0.0, ge=0.0, description="Additive Gaussian noise")
    noise_seed: int = Field(default=config.SEED)


class TrainConfig(Settings):
    """Schedule, optimizer and loss weights of both training stages"""
    stage: Literal["pretrain", "adversarial"] = "pretrain"
    epochs: int = Field(default=config.EPOCHS, ge=1)
    patches_per_epoch: int = Field(default=config.PATCHES_PER_EPOCH, ge=1)
    patch_size: int = Field(default=config.PATCH_SIZE, ge=1)
    lr_g: float = Field(default=config.LEARNING_RATE_G, gt=0.0)
    lr_d: float = Field(default=config.LEARNING_RATE_D, gt=0.0)
    betas: Tuple[float, float] = Field(default=config.ADAM_BETAS)
    eps: float = Field(default=config.ADAM_EPS, gt=0.0)
    seed: int = Field(default=config.SEED)
    checkpoint_dir: str = Field(default="checkpoints")
    psnr_guard_delta: float = Field(default=config.PSNR_GUARD_DELTA, ge=0.0)
    loss: LossWeights = Field(default_factory=LossWeights)
    pretrain_loss: LossWeights = Field(default_factory=LossWeights.pretraining)

    @field_validator("betas")
    @classmethod
    def check_betas(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError(f"betas must lie in [0, 1), got {value}")
        return value

    @property
    def stage_loss(self) -> LossWeights:
        return self.pretrain_loss if self.stage == "pretrain" else self.loss
