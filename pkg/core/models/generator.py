"""
SRResNet-style generator with CKAN residual blocks
"""
from typing import List, Optional

import numpy as np

import config
from core.exceptions import GeometryError, ShapeError
from core.models.settings import CkanSettings, GeneratorConfig
from core.nn.layers import CkanConv2d, Conv2d
from core.nn.module import Module
from core.nn.spline import SplineGrid
from core.nn.tensor import Tensor, permute, reshape, silu, tanh


def depth_to_space(x: Tensor, r: int) -> Tensor:
    """(B, C*r*r, H, W) -> (B, C, r*H, r*W); out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w]"""
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise ShapeError(f"Channel count of {x.shape} is not divisible by r^2 = {r * r}")
    batch, channels, height, width = x.shape
    c = channels // (r * r)
    x = reshape(x, (batch, c, r, r, height, width))
    x = permute(x, (0, 1, 4, 2, 5, 3))
    return reshape(x, (batch, c, height * r, width * r))


def space_to_depth(x: Tensor, r: int) -> Tensor:
    """Inverse of depth_to_space"""
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"Spatial size of {x.shape} is not divisible by r = {r}")
    batch, c, height, width = x.shape
    x = reshape(x, (batch, c, height // r, r, width // r, r))
    x = permute(x, (0, 1, 3, 5, 2, 4))
    return reshape(x, (batch, c * r * r, height // r, width // r))


def _conv_layer(use_ckan: bool, c_in: int, c_out: int, ckan: CkanSettings,
                grid: SplineGrid, rng: np.random.Generator):
    if use_ckan:
        return CkanConv2d(c_in, c_out, kernel=3, hidden=ckan.hidden_width or None,
                          grid=grid, rng=rng, chunk_pixels=ckan.chunk_pixels)
    return Conv2d(c_in, c_out, kernel=3, rng=rng, chunk_pixels=ckan.chunk_pixels)


class ResidualBlock(Module):
    """y = x + F(x), F = conv -> silu -> conv"""

    def __init__(self, channels: int, use_ckan: bool, ckan: CkanSettings,
                 grid: SplineGrid, rng: np.random.Generator):
        self.first = _conv_layer(use_ckan, channels, channels, ckan, grid, rng)
        self.second = _conv_layer(use_ckan, channels, channels, ckan, grid, rng)

    def branch(self, x: Tensor) -> Tensor:
        return self.second(silu(self.first(x)))

    def forward(self, x: Tensor) -> Tensor:
        return residual_block(x, self)


def residual_block(x: Tensor, block: ResidualBlock) -> Tensor:
    update = block.branch(x)
    if update.shape != x.shape:
        raise ShapeError(f"Residual branch changed shape {x.shape} -> {update.shape}")
    return x + update


class UpsampleStage(Module):
    """x2 upsampling: expand to 4C channels, depth_to_space, silu"""

    def __init__(self, channels: int, use_ckan: bool, ckan: CkanSettings,
                 grid: SplineGrid, rng: np.random.Generator):
        self.expand = _conv_layer(use_ckan, channels, channels * 4, ckan, grid, rng)

    def forward(self, x: Tensor) -> Tensor:
        return silu(depth_to_space(self.expand(x), 2))


class Generator(Module):
    """
    head -> residual chain -> trunk -> global skip -> upsampler -> tail

    The tail output passes through 0.5 * (tanh + 1) so images stay in [0, 1].
    """

    def __init__(self, cfg: Optional[GeneratorConfig] = None, ckan: Optional[CkanSettings] = None):
        self.cfg = cfg or GeneratorConfig()
        self.ckan = ckan or CkanSettings()
        rng = np.random.default_rng(self.cfg.seed)
        grid = SplineGrid(self.ckan.spline_degree, self.ckan.spline_num_basis,
                          tuple(self.ckan.grid_range))
        channels = self.cfg.base_channels
        chunk = self.ckan.chunk_pixels
        use_ckan = self.cfg.ckan_blocks

        self.head = Conv2d(3, channels, kernel=config.HEAD_KERNEL, rng=rng, chunk_pixels=chunk)
        self.blocks: List[ResidualBlock] = [
            ResidualBlock(channels, use_ckan, self.ckan, grid, rng)
            for _ in range(self.cfg.num_residual_blocks)
        ]
        self.trunk = Conv2d(channels, channels, kernel=3, rng=rng, chunk_pixels=chunk)
        stages = int(np.log2(self.cfg.upscale_factor))
        self.upsample: List[UpsampleStage] = [
            UpsampleStage(channels, use_ckan, self.ckan, grid, rng) for _ in range(stages)
        ]
        self.tail = Conv2d(channels, 3, kernel=3, rng=rng, chunk_pixels=chunk)

    @property
    def scale(self) -> int:
        return self.cfg.upscale_factor

    def set_chunk_pixels(self, chunk_pixels: int) -> None:
        """Change the memory budget of every layer; results do not change"""
        self.ckan = self.ckan.model_copy(update={"chunk_pixels": chunk_pixels})
        for layer in self._conv_layers():
            layer.cfg.chunk_pixels = chunk_pixels

    def _conv_layers(self):
        yield self.head
        for block in self.blocks:
            yield block.first
            yield block.second
        yield self.trunk
        for stage in self.upsample:
            yield stage.expand
        yield self.tail

    def features(self, lr: Tensor) -> Tensor:
        """Upsampled features before the tail convolution"""
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise ShapeError(f"Generator expects (B, 3, h, w), got {lr.shape}")
        if min(lr.shape[2:]) < config.HEAD_KERNEL:
            raise GeometryError(f"Input {lr.shape[2]}x{lr.shape[3]} is smaller than the head kernel")
        head = self.head(lr)
        x = head
        for block in self.blocks:
            x = residual_block(x, block)
        x = head + self.trunk(x)
        for stage in self.upsample:
            x = stage(x)
        return x

    def forward(self, lr: Tensor) -> Tensor:
        return generator_forward(lr, self)


def generator_forward(lr: Tensor, g: Generator) -> Tensor:
    out = g.tail(g.features(lr))
    return (tanh(out) + 1.0) * 0.5
