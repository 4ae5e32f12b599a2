"""
Training objectives: pixel, perceptual and adversarial terms
"""
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np

import config
from core.exceptions import ConfigurationError, GeometryError, ShapeError
from core.models.settings import LossWeights
from core.nn.layers import Conv2d
from core.nn.module import Module
from core.nn.tensor import Tensor, absolute, leaky_relu, mean, softplus


class PerceptualExtractor(Module):
    """
    Frozen 3-stage conv pyramid (stride 2, channels 8/16/32) with seeded weights

    Stands in for a pretrained feature network: identical seeds give
    identical features, and no parameter ever receives a gradient.
    """

    def __init__(self, seed: int = config.EXTRACTOR_SEED,
                 channels: Sequence[int] = config.EXTRACTOR_CHANNELS,
                 layer_weights: Optional[Sequence[float]] = None):
        rng = np.random.default_rng(seed)
        widths = [3] + list(channels)
        self.stages: List[Conv2d] = [
            Conv2d(c_in, c_out, kernel=3, stride=2, rng=rng)
            for c_in, c_out in zip(widths[:-1], widths[1:])
        ]
        for stage in self.stages:
            stage.bias.data[:] = rng.normal(0.0, 0.1, size=stage.bias.shape)
        self.layer_weights = tuple(layer_weights or [1.0] * len(self.stages))
        self.min_size = config.EXTRACTOR_MIN_SIZE
        self.freeze()

    def features(self, img: Tensor) -> List[Tensor]:
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"Extractor expects (B, 3, H, W), got {img.shape}")
        if min(img.shape[2:]) < self.min_size:
            raise GeometryError(
                f"Image {img.shape[2]}x{img.shape[3]} is below the extractor minimum {self.min_size}"
            )
        maps = []
        x = img
        for stage in self.stages:
            x = leaky_relu(stage(x), config.LEAKY_SLOPE)
            maps.append(x)
        return maps

    def forward(self, img: Tensor) -> List[Tensor]:
        return self.features(img)


_default_extractor: Optional[PerceptualExtractor] = None


def default_extractor() -> PerceptualExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = PerceptualExtractor()
    return _default_extractor


def _check_pair(hr: Tensor, sr: Tensor) -> None:
    if hr.shape != sr.shape:
        raise ShapeError(f"Image shapes differ: {hr.shape} vs {sr.shape}")


def pixel_loss(hr: Tensor, sr: Tensor) -> Tensor:
    """Mean absolute difference"""
    _check_pair(hr, sr)
    return mean(absolute(hr - sr))


def perceptual_loss(hr: Tensor, sr: Tensor, ex: Optional[PerceptualExtractor] = None) -> Tensor:
    """sum_l w_l * mean squared feature difference at stage l"""
    _check_pair(hr, sr)
    ex = ex or default_extractor()
    total = None
    for weight, f_hr, f_sr in zip(ex.layer_weights, ex.features(hr), ex.features(sr)):
        diff = f_hr - f_sr
        term = mean(diff * diff) * weight
        total = term if total is None else total + term
    return total


def adversarial_loss_g(logits_fake: Tensor) -> Tensor:
    """BCE against target 1 in the logit domain: mean softplus(-z)"""
    return mean(softplus(-logits_fake))


def discriminator_loss(logits_real: Tensor, logits_fake: Tensor) -> Tensor:
    """mean softplus(-z_real) + mean softplus(z_fake)"""
    return mean(softplus(-logits_real)) + mean(softplus(logits_fake))


@dataclass
class LossBreakdown:
    """Unweighted terms and the weighted content/adversarial parts of L_G"""
    l_pix: float
    l_perc: float
    l_adv: Optional[float]
    content: float
    adversarial: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def generator_loss(hr: Tensor, sr: Tensor, logits_fake: Optional[Tensor], w: LossWeights,
                   ex: Optional[PerceptualExtractor] = None) -> Tuple[Tensor, LossBreakdown]:
    """
    L_G = lambda_adv L_adv + lambda_perc L_perc + lambda_pix L_pix

    Terms with weight zero stay out of the graph, so lambda_adv = 0 gives
    exactly the content loss.
    """
    l_pix = pixel_loss(hr, sr)
    l_perc = perceptual_loss(hr, sr, ex)
    l_adv = adversarial_loss_g(logits_fake) if logits_fake is not None else None
    if w.lambda_adv > 0 and l_adv is None:
        raise ConfigurationError("A positive lambda_adv needs discriminator logits")

    content_terms = []
    if w.lambda_perc > 0:
        content_terms.append(l_perc * w.lambda_perc)
    if w.lambda_pix > 0:
        content_terms.append(l_pix * w.lambda_pix)
    terms = list(content_terms)
    if w.lambda_adv > 0:
        terms.append(l_adv * w.lambda_adv)

    total = terms[0]
    for term in terms[1:]:
        total = total + term

    content = float(sum(t.item() for t in content_terms))
    breakdown = LossBreakdown(
        l_pix=l_pix.item(),
        l_perc=l_perc.item(),
        l_adv=None if l_adv is None else l_adv.item(),
        content=content,
        adversarial=w.lambda_adv * l_adv.item() if w.lambda_adv > 0 else 0.0,
        total=total.item(),
    )
    return total, breakdown


def content_loss(hr: Tensor, sr: Tensor, ex: Optional[PerceptualExtractor] = None,
                 weights: Optional[LossWeights] = None) -> Tensor:
    """Pretraining objective: generator_loss without the adversarial term"""
    weights = weights or LossWeights.pretraining()
    if weights.lambda_adv:
        weights = weights.model_copy(update={"lambda_adv": 0.0})
    total, _ = generator_loss(hr, sr, None, weights, ex)
    return total
