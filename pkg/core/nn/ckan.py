"""
CKAN convolution: unfold into patch columns, project every patch, fold back

Patch columns are ordered channel-major, then kernel row-major; output
locations are row-major. Chunked execution processes contiguous ranges of
output locations so only one band of patch columns is alive at a time.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

import config
from core.exceptions import ConfigurationError, GeometryError, ShapeError
from core.nn.instrumentation import (
    BASIS_EVALS, PROJ_LINEAR_MACS, PROJ_SPLINE_MACS, REGISTRY, UNFOLD_ELEMENTS,
)
from core.nn.kan import KanNetwork, kan_forward
from core.nn.module import Module, Parameter
from core.nn.tensor import (
    Function, Tensor, concat, is_grad_enabled, matmul, permute, reshape,
)

IntPair = Union[int, Tuple[int, int]]


def _pair(value: IntPair) -> Tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    first, second = value
    return (int(first), int(second))


class LinearProjector(Module):
    """Plain patch projection W (c_out x K): the im2col convolution"""

    def __init__(self, weight):
        self.weight = Parameter(weight)
        if self.weight.ndim != 2:
            raise ShapeError(f"Projector weight must be 2-D, got {self.weight.shape}")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]


Projector = Union[KanNetwork, LinearProjector]


@dataclass(eq=False)
class CkanConfig:
    """Convolution geometry, memory budget and the patch projector"""
    c_in: int
    c_out: int
    kernel: IntPair = 3
    stride: IntPair = 1
    padding: IntPair = 0
    dilation: IntPair = 1
    chunk_pixels: int = config.CHUNK_PIXELS
    projector: Optional[Projector] = field(default=None)

    def __post_init__(self):
        self.kernel = _pair(self.kernel)
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        self.dilation = _pair(self.dilation)
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigurationError(f"Channel counts must be positive: {self.c_in}, {self.c_out}")
        if min(self.kernel + self.stride + self.dilation) < 1 or min(self.padding) < 0:
            raise ConfigurationError(
                f"Invalid geometry kernel={self.kernel} stride={self.stride} "
                f"padding={self.padding} dilation={self.dilation}"
            )
        if self.chunk_pixels < 1:
            raise ConfigurationError(f"chunk_pixels must be >= 1, got {self.chunk_pixels}")
        if self.projector is not None:
            self.check_projector(self.projector)

    @property
    def patch_dim(self) -> int:
        return self.c_in * self.kernel[0] * self.kernel[1]

    @property
    def mode(self) -> str:
        return "linear" if isinstance(self.projector, LinearProjector) else "kan"

    def check_projector(self, projector: Projector) -> None:
        if isinstance(projector, KanNetwork) and not projector.layers:
            raise ShapeError("KAN projector needs at least one layer")
        if projector.d_in != self.patch_dim or projector.d_out != self.c_out:
            raise ShapeError(
                f"Projector maps {projector.d_in} -> {projector.d_out}, "
                f"geometry needs {self.patch_dim} -> {self.c_out}"
            )


@dataclass(eq=False)
class PatchMatrix:
    """Patch columns [start, stop) of an unfolded feature map, shape (B, K, stop - start)"""
    data: Tensor
    cfg: CkanConfig
    height: int
    width: int
    h_out: int
    w_out: int
    start: int = 0
    stop: Optional[int] = None

    def __post_init__(self):
        if self.stop is None:
            self.stop = self.h_out * self.w_out

    @property
    def num_columns(self) -> int:
        return self.stop - self.start


def output_dims(height: int, width: int, cfg: CkanConfig) -> Tuple[int, int, int, int]:
    """(H_out, W_out, L, K) for the configured geometry"""
    (k_h, k_w), (s_h, s_w) = cfg.kernel, cfg.stride
    (p_h, p_w), (d_h, d_w) = cfg.padding, cfg.dilation
    h_out = (height + 2 * p_h - d_h * (k_h - 1) - 1) // s_h + 1
    w_out = (width + 2 * p_w - d_w * (k_w - 1) - 1) // s_w + 1
    if h_out < 1 or w_out < 1:
        raise GeometryError(
            f"Input {height}x{width} is too small for kernel {cfg.kernel} "
            f"(stride {cfg.stride}, padding {cfg.padding}, dilation {cfg.dilation})"
        )
    return h_out, w_out, h_out * w_out, cfg.patch_dim


def _gather_indices(cfg: CkanConfig, w_out: int, start: int, stop: int):
    """Padded-frame row/col indices, each shaped (k_H, k_W, stop - start)"""
    (k_h, k_w), (s_h, s_w), (d_h, d_w) = cfg.kernel, cfg.stride, cfg.dilation
    locations = np.arange(start, stop)
    out_rows, out_cols = np.divmod(locations, w_out)
    rows = (out_rows * s_h)[None, None, :] + (np.arange(k_h) * d_h)[:, None, None]
    cols = (out_cols * s_w)[None, None, :] + (np.arange(k_w) * d_w)[None, :, None]
    return np.broadcast_to(rows, (k_h, k_w, stop - start)), np.broadcast_to(cols, (k_h, k_w, stop - start))


class Unfold(Function):
    def forward(self, x, cfg: CkanConfig = None, w_out: int = 1, start: int = 0, stop: int = 1):
        batch, channels, height, width = x.shape
        p_h, p_w = cfg.padding
        self.rows, self.cols = _gather_indices(cfg, w_out, start, stop)
        self.source = x.shape
        self.padding = (p_h, p_w)
        padded = np.pad(x, ((0, 0), (0, 0), (p_h, p_h), (p_w, p_w)))
        patches = padded[:, :, self.rows, self.cols]
        return patches.reshape(batch, channels * cfg.kernel[0] * cfg.kernel[1], stop - start)

    def backward(self, grad):
        batch, channels, height, width = self.source
        p_h, p_w = self.padding
        k_h, k_w, count = self.rows.shape
        padded = np.zeros((batch, channels, height + 2 * p_h, width + 2 * p_w))
        spatial_first = padded.transpose(2, 3, 0, 1)
        values = np.moveaxis(grad.reshape(batch, channels, k_h, k_w, count), (0, 1), (-2, -1))
        np.add.at(spatial_first, (self.rows, self.cols), values)
        return (padded[:, :, p_h:p_h + height, p_w:p_w + width],)


def unfold_columns(x: Tensor, cfg: CkanConfig, start: int, stop: int) -> PatchMatrix:
    """Patch columns for output locations [start, stop)"""
    if x.ndim != 4 or x.shape[1] != cfg.c_in:
        raise ShapeError(f"Expected (B, {cfg.c_in}, H, W) input, got {x.shape}")
    batch, _, height, width = x.shape
    h_out, w_out, count, patch_dim = output_dims(height, width, cfg)
    if not 0 <= start < stop <= count:
        raise GeometryError(f"Column range [{start}, {stop}) outside [0, {count})")
    data = Unfold.apply(x, cfg=cfg, w_out=w_out, start=start, stop=stop)
    REGISTRY.increment(UNFOLD_ELEMENTS, batch * patch_dim * (stop - start))
    REGISTRY.allocate_buffer(batch * patch_dim * (stop - start))
    return PatchMatrix(data, cfg, height, width, h_out, w_out, start, stop)


def unfold(x: Tensor, cfg: CkanConfig) -> PatchMatrix:
    """All patch columns of x, shape (B, K, L)"""
    if x.ndim != 4:
        raise ShapeError(f"Expected a 4-D input, got {x.shape}")
    _, _, count, _ = output_dims(x.shape[2], x.shape[3], cfg)
    return unfold_columns(x, cfg, 0, count)


def project_patches(u: PatchMatrix, cfg: CkanConfig) -> Tensor:
    """Apply the projector to every patch column: (B, K, n) -> (B, c_out, n)"""
    projector = cfg.projector
    if projector is None:
        raise ConfigurationError("CKAN config has no projector")
    cfg.check_projector(projector)
    batch, patch_dim, count = u.data.shape
    if patch_dim != cfg.patch_dim:
        raise ShapeError(f"Patch dimension {patch_dim} does not match K={cfg.patch_dim}")

    rows = reshape(permute(u.data, (0, 2, 1)), (batch * count, patch_dim))
    if isinstance(projector, LinearProjector):
        projected = matmul(rows, permute(projector.weight, (1, 0)))
        REGISTRY.increment(PROJ_LINEAR_MACS, batch * count * patch_dim * cfg.c_out)
    else:
        projected = kan_forward(rows, projector)
    return permute(reshape(projected, (batch, count, cfg.c_out)), (0, 2, 1))


def fold_spatial(z: Tensor, h_out: int, w_out: int) -> Tensor:
    """(B, c_out, L) -> (B, c_out, H_out, W_out); column l lands at (l // W_out, l % W_out)"""
    if z.ndim != 3 or z.shape[2] != h_out * w_out:
        raise ShapeError(f"Cannot fold {z.shape} into {h_out}x{w_out}")
    return reshape(z, (z.shape[0], z.shape[1], h_out, w_out))


def _run_bands(x: Tensor, cfg: CkanConfig, band: int) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"Expected a 4-D input, got {x.shape}")
    h_out, w_out, count, _ = output_dims(x.shape[2], x.shape[3], cfg)
    band = max(1, min(band, count))
    recording = is_grad_enabled()
    pieces, held = [], 0
    for start in range(0, count, band):
        stop = min(start + band, count)
        patches = unfold_columns(x, cfg, start, stop)
        pieces.append(project_patches(patches, cfg))
        size = patches.data.size
        if recording:
            # the tape keeps every band alive until backward
            held += size
        else:
            REGISTRY.release_buffer(size)
        del patches
    if held:
        REGISTRY.release_buffer(held)
    return fold_spatial(concat(pieces, axis=2), h_out, w_out)


def ckan_forward(x: Tensor, cfg: CkanConfig) -> Tensor:
    """fold_spatial(project_patches(unfold(x)))"""
    if x.ndim != 4:
        raise ShapeError(f"Expected a 4-D input, got {x.shape}")
    _, _, count, _ = output_dims(x.shape[2], x.shape[3], cfg)
    return _run_bands(x, cfg, band=count)


def ckan_forward_chunked(x: Tensor, cfg: CkanConfig) -> Tensor:
    """Same result as ckan_forward with at most chunk_pixels patch columns alive"""
    return _run_bands(x, cfg, band=cfg.chunk_pixels)


@dataclass
class CostEstimate:
    """Closed-form operation counts of one CKAN forward"""
    unfold_elements: int
    linear_macs: int
    spline_macs: int
    basis_evals: int

    @property
    def total(self) -> int:
        return self.unfold_elements + self.linear_macs + self.spline_macs + self.basis_evals

    def as_counters(self) -> dict:
        return {
            UNFOLD_ELEMENTS: self.unfold_elements,
            PROJ_LINEAR_MACS: self.linear_macs,
            PROJ_SPLINE_MACS: self.spline_macs,
            BASIS_EVALS: self.basis_evals,
        }


def cost_model(cfg: CkanConfig, height: int, width: int, batch: int = 1,
               degree: int = config.SPLINE_DEGREE, layer_dims=None) -> CostEstimate:
    """
    Predicted counters for one forward pass

    Args:
        cfg: Geometry; its projector supplies layer widths and spline degree
            when present
        height, width: Input size
        batch: Batch size B
        degree: Spline degree p, used when cfg has no KAN projector
        layer_dims: KAN widths d_0..d_m; None with a linear projector (or no
            projector) means the linear im2col case

    Returns:
        CostEstimate with unfold = B*K*L, linear = B*L*sum d_{l-1} d_l,
        spline = B*L*sum d_{l-1} (p+1) d_l, basis = B*L*sum d_{l-1} (p+1)
    """
    _, _, count, patch_dim = output_dims(height, width, cfg)
    rows = batch * count
    if isinstance(cfg.projector, KanNetwork):
        layer_dims = cfg.projector.dims
        degree = cfg.projector.layers[0].grid.degree
    if layer_dims is None:
        return CostEstimate(batch * patch_dim * count, rows * patch_dim * cfg.c_out, 0, 0)

    window = degree + 1
    pairs = list(zip(layer_dims[:-1], layer_dims[1:]))
    return CostEstimate(
        unfold_elements=batch * patch_dim * count,
        linear_macs=rows * sum(d_in * d_out for d_in, d_out in pairs),
        spline_macs=rows * sum(d_in * window * d_out for d_in, d_out in pairs),
        basis_evals=rows * sum(d_in * window for d_in, _ in pairs),
    )
