"""
Tests for the pixel, perceptual and adversarial objectives
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError

from core.exceptions import ConfigurationError, GeometryError, ShapeError
from core.models.settings import LossWeights
from core.nn.tensor import Tensor
from core.oracles import run_oracles
from core.services.loss_service import (
    PerceptualExtractor, adversarial_loss_g, content_loss, discriminator_loss, generator_loss,
    perceptual_loss, pixel_loss,
)


@pytest.fixture
def images(rng):
    hr = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)))
    sr = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)), requires_grad=True)
    return hr, sr


class TestPixelAndPerceptual:
    def test_pixel_loss_is_mean_absolute(self, images):
        hr, sr = images
        assert pixel_loss(hr, sr).item() == pytest.approx(np.abs(hr.data - sr.data).mean())

    def test_shape_mismatch(self, images):
        hr, _ = images
        with pytest.raises(ShapeError):
            pixel_loss(hr, Tensor(np.zeros((1, 3, 8, 8))))

    def test_perceptual_zero_for_identical(self, images):
        hr, _ = images
        assert perceptual_loss(hr, Tensor(hr.data)).item() == 0.0

    def test_perceptual_positive(self, images):
        hr, sr = images
        assert perceptual_loss(hr, sr).item() > 0.0

    def test_extractor_is_frozen_and_seeded(self, images):
        hr, _ = images
        first, second = PerceptualExtractor(seed=11), PerceptualExtractor(seed=11)
        assert all(not p.requires_grad for p in first.parameters())
        for a, b in zip(first.features(hr), second.features(hr)):
            np.testing.assert_array_equal(a.data, b.data)
        assert [f.shape[1] for f in first.features(hr)] == [8, 16, 32]

    def test_extractor_minimum_size(self):
        with pytest.raises(GeometryError):
            PerceptualExtractor().features(Tensor(np.zeros((1, 3, 6, 6))))

    def test_gradient_reaches_only_the_image(self, images):
        hr, sr = images
        ex = PerceptualExtractor()
        perceptual_loss(hr, sr, ex).backward()
        assert sr.grad is not None and np.abs(sr.grad).sum() > 0
        assert all(p.grad is None for p in ex.parameters())


class TestAdversarial:
    def test_generator_term_at_zero(self):
        assert adversarial_loss_g(Tensor(np.zeros((4, 1)))).item() == pytest.approx(math.log(2.0))

    def test_discriminator_term_at_zero(self):
        zeros = Tensor(np.zeros((2, 1)))
        assert discriminator_loss(zeros, zeros).item() == pytest.approx(2.0 * math.log(2.0))

    def test_confident_logits_stay_finite(self):
        real = Tensor(np.full((2, 1), 800.0))
        fake = Tensor(np.full((2, 1), -800.0))
        assert discriminator_loss(real, fake).item() == pytest.approx(0.0, abs=1e-300)
        assert adversarial_loss_g(fake).item() == pytest.approx(800.0)

    def test_softplus_oracle(self):
        (result,) = run_oracles("adversarial-softplus")
        assert result.passed


class TestGeneratorLoss:
    def test_weighted_sum(self, images):
        hr, sr = images
        logits = Tensor(np.array([[0.3]]))
        w = LossWeights(lambda_adv=0.5, lambda_perc=2.0, lambda_pix=3.0)
        total, parts = generator_loss(hr, sr, logits, w)
        expected = 0.5 * parts.l_adv + 2.0 * parts.l_perc + 3.0 * parts.l_pix
        assert total.item() == pytest.approx(expected)
        assert parts.adversarial == pytest.approx(0.5 * parts.l_adv)
        assert parts.content == pytest.approx(2.0 * parts.l_perc + 3.0 * parts.l_pix)
        assert parts.total == pytest.approx(total.item())

    def test_zero_adversarial_weight_is_content_loss(self, images):
        hr, sr = images
        w = LossWeights(lambda_adv=0.0, lambda_perc=0.01, lambda_pix=1.0)
        total, parts = generator_loss(hr, sr, None, w)
        assert parts.l_adv is None
        assert parts.adversarial == 0.0
        assert total.item() == pytest.approx(content_loss(hr, sr, weights=w).item())

    def test_adversarial_weight_needs_logits(self, images):
        hr, sr = images
        with pytest.raises(ConfigurationError):
            generator_loss(hr, sr, None, LossWeights())

    def test_content_loss_drops_adversarial_weight(self, images):
        hr, sr = images
        w = LossWeights(lambda_adv=1.0, lambda_perc=1.0, lambda_pix=1.0)
        plain = LossWeights(lambda_adv=0.0, lambda_perc=1.0, lambda_pix=1.0)
        assert content_loss(hr, sr, weights=w).item() == pytest.approx(
            content_loss(hr, sr, weights=plain).item()
        )

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ValidationError):
            LossWeights(lambda_adv=0.0, lambda_perc=0.0, lambda_pix=0.0)

    def test_breakdown_serializes(self, images):
        hr, sr = images
        _, parts = generator_loss(hr, sr, None, LossWeights.pretraining())
        assert set(parts.to_dict()) == {"l_pix", "l_perc", "l_adv", "content", "adversarial", "total"}
