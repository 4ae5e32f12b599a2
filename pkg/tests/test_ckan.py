"""
Tests for the CKAN operator: unfold, projection, fold, chunking and cost model
"""
import numpy as np
import pytest

from core.exceptions import ConfigurationError, GeometryError, ShapeError
from core.nn.ckan import (
    CkanConfig, LinearProjector, PatchMatrix, ckan_forward, ckan_forward_chunked, cost_model,
    fold_spatial, output_dims, project_patches, unfold, unfold_columns,
)
from core.nn.instrumentation import BUFFER_LIVE, BUFFER_PEAK, counting
from core.nn.kan import KanNetwork
from core.nn.layers import CkanConv2d, Conv2d
from core.nn.tensor import Tensor, no_grad, total
from core.oracles import OracleContext, naive_conv2d, naive_unfold, run_oracles


def linear_config(rng, c_in=2, c_out=3, **geometry):
    kernel = geometry.get("kernel", 3)
    patch_dim = c_in * kernel * kernel
    return CkanConfig(c_in, c_out, projector=LinearProjector(rng.standard_normal((c_out, patch_dim))),
                      **geometry)


class TestGeometry:
    @pytest.mark.parametrize("size,kernel,stride,padding,dilation,expected", [
        (5, 3, 1, 0, 1, 3),
        (5, 3, 1, 1, 1, 5),
        (5, 3, 2, 1, 1, 3),
        (7, 3, 1, 0, 2, 3),
        (4, 1, 1, 0, 1, 4),
    ])
    def test_output_dims(self, size, kernel, stride, padding, dilation, expected):
        cfg = CkanConfig(2, 1, kernel=kernel, stride=stride, padding=padding, dilation=dilation)
        h_out, w_out, count, patch_dim = output_dims(size, size, cfg)
        assert (h_out, w_out, count, patch_dim) == (expected, expected, expected ** 2, 2 * kernel ** 2)

    def test_input_too_small(self):
        with pytest.raises(GeometryError):
            output_dims(2, 2, CkanConfig(1, 1, kernel=3))

    @pytest.mark.parametrize("kwargs", [
        dict(c_in=0, c_out=1),
        dict(c_in=1, c_out=1, stride=0),
        dict(c_in=1, c_out=1, padding=-1),
        dict(c_in=1, c_out=1, chunk_pixels=0),
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            CkanConfig(**kwargs)

    def test_projector_width_checked(self, rng):
        with pytest.raises(ShapeError):
            CkanConfig(2, 3, kernel=3, projector=LinearProjector(rng.standard_normal((3, 9))))

    def test_rectangular_kernel(self):
        cfg = CkanConfig(1, 2, kernel=(1, 3), padding=(0, 1))
        assert cfg.kernel == (1, 3)
        assert output_dims(4, 6, cfg) == (4, 6, 24, 3)


class TestUnfold:
    def test_column_ordering(self):
        x = np.arange(2 * 3 * 3, dtype=float).reshape(1, 2, 3, 3)
        cfg = CkanConfig(2, 1, kernel=2)
        patches = unfold(Tensor(x), cfg)
        assert patches.data.shape == (1, 8, 4)
        # first location: channel 0 rows then channel 1 rows, kernel row-major
        np.testing.assert_array_equal(patches.data.data[0, :, 0], [0, 1, 3, 4, 9, 10, 12, 13])
        # last location is the bottom-right window
        np.testing.assert_array_equal(patches.data.data[0, :, 3], [4, 5, 7, 8, 13, 14, 16, 17])

    def test_matches_gather_with_padding(self, rng):
        cfg = CkanConfig(3, 1, kernel=3, stride=2, padding=1, dilation=1)
        x = rng.standard_normal((2, 3, 6, 5))
        np.testing.assert_array_equal(unfold(Tensor(x), cfg).data.data, naive_unfold(x, cfg))

    def test_column_range(self, rng):
        cfg = CkanConfig(1, 1, kernel=3, padding=1)
        x = Tensor(rng.standard_normal((1, 1, 4, 4)))
        part = unfold_columns(x, cfg, 5, 9)
        np.testing.assert_array_equal(part.data.data, unfold(x, cfg).data.data[:, :, 5:9])
        assert part.num_columns == 4
        with pytest.raises(GeometryError):
            unfold_columns(x, cfg, 10, 20)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            unfold(Tensor(rng.standard_normal((1, 2, 4, 4))), CkanConfig(3, 1, kernel=3))

    def test_unfold_gradient_scatters(self):
        cfg = CkanConfig(1, 1, kernel=3, padding=1)
        x = Tensor(np.zeros((1, 1, 3, 3)), requires_grad=True)
        total(unfold(x, cfg).data).backward()
        # every pixel is counted once per window that covers it
        np.testing.assert_array_equal(x.grad[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


class TestFold:
    def test_row_major_placement(self):
        z = Tensor(np.arange(6.0).reshape(1, 1, 6))
        np.testing.assert_array_equal(fold_spatial(z, 2, 3).data[0, 0], [[0, 1, 2], [3, 4, 5]])

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            fold_spatial(Tensor(np.zeros((1, 1, 5))), 2, 3)


class TestForward:
    def test_linear_projector_is_convolution(self, rng):
        cfg = linear_config(rng, kernel=3, stride=2, padding=1, dilation=1)
        x = rng.standard_normal((2, 2, 7, 6))
        with no_grad():
            got = ckan_forward(Tensor(x), cfg).data
        np.testing.assert_allclose(got, naive_conv2d(x, cfg.projector.weight.data, cfg), atol=1e-12)

    def test_missing_projector(self, rng):
        cfg = CkanConfig(1, 1, kernel=1)
        with pytest.raises(ConfigurationError):
            project_patches(unfold(Tensor(rng.standard_normal((1, 1, 2, 2))), cfg), cfg)

    @pytest.mark.parametrize("chunk", [1, 3, 29, 30, 31, 1000])
    def test_chunking_does_not_change_output(self, rng, chunk):
        projector = KanNetwork.build([18, 5, 3], rng=rng)
        projector.layers[0].alpha.data[...] = rng.normal(0.0, 0.3, projector.layers[0].alpha.shape)
        cfg = CkanConfig(2, 3, kernel=3, padding=1, projector=projector)
        x = Tensor(rng.uniform(-1, 1, size=(1, 2, 5, 6)))
        with no_grad():
            full = ckan_forward(x, cfg).data
            cfg.chunk_pixels = chunk
            chunked = ckan_forward_chunked(x, cfg).data
        np.testing.assert_allclose(chunked, full, atol=1e-12)

    @pytest.mark.parametrize("axis", [2, 3])
    def test_shifted_input_shifts_output(self, rng, axis):
        cfg = linear_config(rng, kernel=3, stride=1, padding=0)
        x = rng.standard_normal((1, 2, 6, 7))
        with no_grad():
            out = ckan_forward(Tensor(x), cfg).data
            shifted = ckan_forward(Tensor(np.roll(x, 1, axis=axis)), cfg).data
        # windows touching the wrapped row or column are excluded
        np.testing.assert_allclose(np.take(shifted, np.arange(1, out.shape[axis]), axis=axis),
                                   np.take(out, np.arange(0, out.shape[axis] - 1), axis=axis),
                                   atol=1e-12)

    def test_patch_columns_are_independent(self, rng):
        projector = KanNetwork.build([18, 5, 3], rng=rng)
        projector.layers[0].alpha.data[...] = rng.normal(0.0, 0.3, projector.layers[0].alpha.shape)
        cfg = CkanConfig(2, 3, kernel=3, padding=1, projector=projector)
        patches = unfold(Tensor(rng.uniform(-1, 1, size=(2, 2, 4, 5))), cfg)
        order = rng.permutation(patches.num_columns)
        shuffled = PatchMatrix(Tensor(patches.data.data[:, :, order]), cfg, patches.height,
                               patches.width, patches.h_out, patches.w_out)
        with no_grad():
            out = project_patches(patches, cfg).data
            permuted = project_patches(shuffled, cfg).data
        np.testing.assert_allclose(permuted, out[:, :, order], atol=1e-12)

    def test_chunked_gradients_match(self, rng):
        cfg = linear_config(rng, kernel=3, padding=1)
        x_data = rng.standard_normal((1, 2, 4, 5))
        weights = Tensor(rng.standard_normal((1, 3, 4, 5)))
        grads = []
        for chunk in (20, 3):
            cfg.chunk_pixels = chunk
            cfg.projector.weight.grad = None
            x = Tensor(x_data, requires_grad=True)
            total(ckan_forward_chunked(x, cfg) * weights).backward()
            grads.append((x.grad, cfg.projector.weight.grad.copy()))
        np.testing.assert_allclose(grads[0][0], grads[1][0], atol=1e-12)
        np.testing.assert_allclose(grads[0][1], grads[1][1], atol=1e-12)


class TestMemoryAndCost:
    @pytest.mark.parametrize("chunk", [1, 4, 10, 25, 64])
    def test_peak_buffer_bound(self, rng, chunk):
        cfg = linear_config(rng, kernel=3, padding=1, chunk_pixels=chunk)
        x = Tensor(rng.standard_normal((2, 2, 5, 5)))
        with counting() as registry, no_grad():
            ckan_forward_chunked(x, cfg)
            assert registry.get(BUFFER_PEAK) == 2 * 18 * min(chunk, 25)
            assert registry.get(BUFFER_LIVE) == 0

    @pytest.mark.parametrize("mode", ["linear", "kan"])
    def test_cost_model_matches_counters(self, rng, mode):
        if mode == "linear":
            cfg = linear_config(rng, kernel=3, padding=1, chunk_pixels=7)
        else:
            cfg = CkanConfig(2, 3, kernel=3, padding=1, chunk_pixels=7,
                             projector=KanNetwork.build([18, 6, 3], rng=rng))
        x = Tensor(rng.standard_normal((2, 2, 5, 4)))
        with counting() as registry, no_grad():
            ckan_forward_chunked(x, cfg)
            measured = registry.snapshot()
        predicted = cost_model(cfg, 5, 4, batch=2)
        for name, value in predicted.as_counters().items():
            assert measured.get(name, 0) == value, name

    def test_cost_model_kan_formula(self):
        cfg = CkanConfig(1, 2, kernel=3, padding=1)
        estimate = cost_model(cfg, 4, 4, batch=1, degree=3, layer_dims=[9, 5, 2])
        assert estimate.unfold_elements == 9 * 16
        assert estimate.linear_macs == 16 * (9 * 5 + 5 * 2)
        assert estimate.spline_macs == 16 * (9 * 4 * 5 + 5 * 4 * 2)
        assert estimate.basis_evals == 16 * (9 * 4 + 5 * 4)
        assert estimate.total == sum(estimate.as_counters().values())


class TestLayers:
    def test_pointwise_conv_is_channel_mix(self, rng):
        conv = Conv2d(3, 2, kernel=1, rng=rng)
        conv.bias.data[...] = [0.5, -1.0]
        x = rng.standard_normal((1, 3, 4, 4))
        with no_grad():
            got = conv(Tensor(x)).data
        expected = np.einsum("oc,bchw->bohw", conv.projector.weight.data, x) + np.array([0.5, -1.0])[None, :, None, None]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_ckan_conv_shape(self, rng):
        layer = CkanConv2d(2, 4, kernel=3, hidden=5, rng=rng, chunk_pixels=8)
        assert layer.projector.dims == [18, 5, 4]
        with no_grad():
            out = layer(Tensor(rng.uniform(-1, 1, size=(1, 2, 6, 6))))
        assert out.shape == (1, 4, 6, 6)


class TestCkanOracles:
    def test_reference_checks_pass(self):
        results = run_oracles("ckan")
        assert {r.name for r in results} >= {"unfold-gather", "fold-spatial", "conv-equivalence",
                                              "chunk-invariance", "grad-ckan"}
        for result in results:
            assert result.passed, f"{result.name}: {result.value} > {result.tolerance}"

    def test_broken_fold_is_detected(self):
        (result,) = run_oracles("fold-spatial", OracleContext(break_fold=True))
        assert not result.passed
