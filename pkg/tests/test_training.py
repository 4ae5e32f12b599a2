"""
Tests for the optimizer, early stopping and both training stages
"""
import math

import numpy as np
import pytest

import config
from core.exceptions import (
    CheckpointError, CheckpointIncompatibleError, ConfigurationError, NonFiniteError, ShapeError,
    TrainingDivergedError,
)
from core.models.discriminator import Discriminator, discriminator_forward
from core.models.generator import generator_forward
from core.models.settings import CkanSettings, LossWeights
from core.nn.module import Parameter
from core.nn.optim import Adam, AdamState, adam_step
from core.nn.tensor import Tensor, backward, no_grad
from core.pipeline import KEEP, LOG_KEYS, NEW_BEST, EarlyStopState, TrainingPipeline, early_stop_update
from core.services.checkpoint_service import CheckpointService
from core.services.data_service import ImageBuffer, bicubic_resample
from core.services.loss_service import content_loss, discriminator_loss
from core.utils.logger import JsonlWriter


def make_pipeline(train_config, tiny_generator_config, tiny_ckan, directory, **overrides):
    cfg = train_config(checkpoint_dir=str(directory), **overrides)
    return TrainingPipeline(cfg, tiny_generator_config, tiny_ckan)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        param = Parameter(np.array([1.0, -2.0]))
        state = AdamState.zeros_like([param])
        adam_step([param], [np.array([0.5, -3.0])], state, lr=0.1, eps=0.0)
        # bias-corrected first step is lr * sign(grad)
        np.testing.assert_allclose(param.data, [0.9, -1.9])
        assert state.step == 1

    def test_missing_gradient_counts_as_zero(self):
        param = Parameter(np.ones(3))
        optimizer = Adam([param], lr=0.1)
        optimizer.step()
        np.testing.assert_array_equal(param.data, np.ones(3))

    def test_length_mismatch(self):
        param = Parameter(np.ones(2))
        with pytest.raises(ShapeError):
            adam_step([param], [], AdamState.zeros_like([param]))


class TestEarlyStop:
    def test_accepts_better_perception_within_guard(self):
        state = EarlyStopState(baseline_psnr=25.0, best_perc=0.5)
        assert early_stop_update(state, {"perc_dist": 0.4, "psnr_y": 24.6}, guard_delta=0.5) == NEW_BEST
        assert state.best_perc == 0.4

    def test_rejects_psnr_drop(self):
        state = EarlyStopState(baseline_psnr=25.0, best_perc=0.5)
        assert early_stop_update(state, {"perc_dist": 0.1, "psnr_y": 24.0}, guard_delta=0.5) == KEEP
        assert state.best_perc == 0.5

    def test_rejects_worse_perception(self):
        state = EarlyStopState(baseline_psnr=25.0, best_perc=0.5)
        assert early_stop_update(state, {"perc_dist": 0.5, "psnr_y": 30.0}) == KEEP

    def test_first_epoch_against_infinity(self):
        state = EarlyStopState(baseline_psnr=25.0)
        assert state.best_perc == math.inf
        assert early_stop_update(state, {"perc_dist": 3.0, "psnr_y": 25.0}) == NEW_BEST


class TestPipelineSetup:
    def test_patch_size_must_divide_scale(self, train_config, tiny_generator_config, tiny_ckan, tmp_path):
        with pytest.raises(ConfigurationError):
            make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path, patch_size=15)

    def test_non_finite_becomes_divergence(self):
        def explode():
            raise NonFiniteError("nan in tanh")

        with pytest.raises(TrainingDivergedError) as info:
            TrainingPipeline._guarded("generator", explode)
        assert info.value.group == "generator"


class TestPretrain:
    def test_writes_checkpoints_and_log(self, train_config, tiny_generator_config, tiny_ckan,
                                        dataset, tmp_path):
        pipeline = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "run")
        progress = []
        result = pipeline.pretrain(dataset, progress_callback=lambda p, m: progress.append(p))

        assert result.last_checkpoint == tmp_path / "run" / config.LAST_CHECKPOINT
        assert result.best_checkpoint == tmp_path / "run" / config.BEST_CHECKPOINT
        assert progress[-1] == pytest.approx(1.0)

        records = JsonlWriter.read(tmp_path / "run" / config.TRAIN_LOG)
        assert len(records) == 3
        for record in records:
            assert set(LOG_KEYS) <= set(record)
            assert record["stage"] == "pretrain" and record["l_adv"] is None
        assert [r["step"] for r in records[:2]] == [0, 1]
        assert records[-1]["psnr_y"] == result.history[0]["psnr_y"]
        assert records[-1]["bicubic_psnr_y"] > 0

        ckpt = CheckpointService.load(result.last_checkpoint)
        assert (ckpt.stage, ckpt.epoch, ckpt.adam_g.step) == ("pretrain", 1, 2)

    def test_deterministic(self, train_config, tiny_generator_config, tiny_ckan, dataset, tmp_path):
        runs = []
        for name in ("a", "b"):
            pipeline = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / name)
            runs.append(pipeline.pretrain(dataset))
        first, second = (CheckpointService.load(r.last_checkpoint) for r in runs)
        for a, b in zip(first.generator, second.generator):
            np.testing.assert_array_equal(a, b)
        assert runs[0].history[0]["l_g"] == runs[1].history[0]["l_g"]

    def test_resume_matches_uninterrupted_run(self, train_config, tiny_generator_config, tiny_ckan,
                                              dataset, tmp_path):
        straight = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "straight",
                                 epochs=2).pretrain(dataset)

        first = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "split",
                              epochs=1).pretrain(dataset)
        resumed = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "split",
                                epochs=2).pretrain(dataset, resume=first.last_checkpoint)

        a = CheckpointService.load(straight.last_checkpoint)
        b = CheckpointService.load(resumed.last_checkpoint)
        assert a.epoch == b.epoch == 2
        assert a.adam_g.step == b.adam_g.step
        for x, y in zip(a.generator, b.generator):
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
        assert [r["epoch"] for r in resumed.history] == [1]
        assert len(JsonlWriter.read(tmp_path / "split" / config.TRAIN_LOG)) == 6

    def test_resume_rejects_other_configuration(self, train_config, tiny_generator_config, tiny_ckan,
                                                dataset, tmp_path):
        first = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "a").pretrain(dataset)
        wider = CkanSettings(chunk_pixels=64, spline_num_basis=6, hidden_width=4)
        with pytest.raises(CheckpointIncompatibleError):
            make_pipeline(train_config, tiny_generator_config, wider, tmp_path / "b").pretrain(
                dataset, resume=first.last_checkpoint
            )


class TestAdversarial:
    @pytest.fixture
    def pretrained(self, train_config, tiny_generator_config, tiny_ckan, dataset, tmp_path):
        return make_pipeline(train_config, tiny_generator_config, tiny_ckan,
                             tmp_path / "pre").pretrain(dataset).last_checkpoint

    def test_continues_epoch_numbering(self, train_config, tiny_generator_config, tiny_ckan,
                                       dataset, pretrained, tmp_path):
        pipeline = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "gan")
        result = pipeline.adversarial_train(pretrained, dataset)

        assert [r["epoch"] for r in result.history] == [1]
        assert result.history[0]["early_stop"] in (NEW_BEST, KEEP)
        assert math.isfinite(result.history[0]["baseline_psnr_y"])

        ckpt = CheckpointService.load(result.last_checkpoint)
        assert (ckpt.stage, ckpt.epoch, ckpt.stage_start_epoch) == ("adversarial", 2, 1)
        assert ckpt.discriminator is not None and ckpt.adam_d.step == 2
        # generator optimizer state carries over from pretraining
        assert ckpt.adam_g.step == 4

        steps = [r for r in JsonlWriter.read(tmp_path / "gan" / config.TRAIN_LOG) if r["step"] is not None]
        assert all(r["l_d"] is not None and r["l_adv"] is not None for r in steps)

    def test_resume_requires_adversarial_checkpoint(self, train_config, tiny_generator_config,
                                                    tiny_ckan, dataset, pretrained, tmp_path):
        pipeline = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "gan")
        with pytest.raises(CheckpointError):
            pipeline.adversarial_train(pretrained, dataset, resume=pretrained)

    def test_pretrain_rejects_adversarial_checkpoint(self, train_config, tiny_generator_config,
                                                     tiny_ckan, dataset, pretrained, tmp_path):
        gan = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "gan")
        last = gan.adversarial_train(pretrained, dataset).last_checkpoint
        with pytest.raises(CheckpointError):
            make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "again").pretrain(
                dataset, resume=last
            )

    def test_without_adversarial_weight_matches_continued_pretraining(
            self, train_config, tiny_generator_config, tiny_ckan, dataset, pretrained, tmp_path):
        continued = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "continued",
                                  epochs=2).pretrain(dataset, resume=pretrained)
        gan = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "gan",
                            loss=LossWeights.pretraining()).adversarial_train(pretrained, dataset)

        a = CheckpointService.load(continued.last_checkpoint)
        b = CheckpointService.load(gan.last_checkpoint)
        assert a.epoch == b.epoch == 2
        assert a.adam_g.step == b.adam_g.step == 4
        for x, y in zip(a.generator, b.generator):
            np.testing.assert_array_equal(x, y)
        for x, y in zip(a.adam_g.m + a.adam_g.v, b.adam_g.m + b.adam_g.v):
            np.testing.assert_array_equal(x, y)
        assert continued.history[0]["l_g"] == gan.history[0]["l_g"]
        assert continued.history[0]["psnr_y"] == gan.history[0]["psnr_y"]


    def test_accepts_loaded_checkpoint(self, train_config, tiny_generator_config, tiny_ckan,
                                       dataset, pretrained, tmp_path):
        ckpt = CheckpointService.load(pretrained)
        assert ckpt.source == str(pretrained)
        result = make_pipeline(train_config, tiny_generator_config, tiny_ckan,
                               tmp_path / "gan").adversarial_train(ckpt, dataset)
        assert CheckpointService.load(result.last_checkpoint).epoch == 2

    def test_loaded_checkpoint_is_hash_checked(self, train_config, tiny_generator_config,
                                               dataset, pretrained, tmp_path):
        wider = CkanSettings(chunk_pixels=64, spline_num_basis=6, hidden_width=4)
        pipeline = make_pipeline(train_config, tiny_generator_config, wider, tmp_path / "gan")
        with pytest.raises(CheckpointIncompatibleError):
            pipeline.adversarial_train(CheckpointService.load(pretrained), dataset)

class TestTrainingDynamics:
    def test_one_pretraining_step_lowers_content_loss(self, train_config, tiny_generator_config,
                                                      tiny_ckan, dataset, tmp_path):
        pipeline = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "step",
                                 lr_g=1e-4)
        hr, lr = pipeline._sample(pipeline._load(dataset), np.random.default_rng(0))
        weights = pipeline.train.pretrain_loss

        def evaluate():
            with no_grad():
                sr = generator_forward(lr, pipeline.generator)
                return content_loss(hr, sr, pipeline.extractor, weights).item()

        before = evaluate()
        record = pipeline._train_step("pretrain", hr, lr, weights, pipeline._new_adam_g(), None, None)
        assert record["l_g"] == pytest.approx(before)
        assert evaluate() < before

    def test_discriminator_learns_to_reject_bicubic(self, train_config, tiny_generator_config,
                                                    tiny_ckan, dataset, tmp_path):
        pipeline = make_pipeline(train_config, tiny_generator_config, tiny_ckan, tmp_path / "d",
                                 patches_per_epoch=4)
        images = pipeline._load(dataset)
        rng = np.random.default_rng([pipeline.train.seed, 0])
        pairs = [pipeline._sample(images, rng) for _ in range(pipeline.train.patches_per_epoch)]
        size = pipeline.train.patch_size
        hr = Tensor(np.concatenate([h.data for h, _ in pairs]))
        fake = Tensor(np.stack([
            bicubic_resample(ImageBuffer.from_array(low.data), size, size).pixels for _, low in pairs
        ]))

        d = Discriminator(seed=pipeline.train.seed)
        adam_d = Adam(d.parameters(), 1e-4)

        def loss():
            return discriminator_loss(discriminator_forward(hr, d), discriminator_forward(fake, d))

        with no_grad():
            before = loss().item()
        for _ in pairs:
            d.zero_grad()
            backward(loss())
            adam_d.step()
        with no_grad():
            after = loss().item()
        assert after < before
