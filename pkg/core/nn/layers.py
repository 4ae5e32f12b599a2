"""
Convolution layers built on the CKAN operator
"""
from typing import Optional

import numpy as np

import config
from core.nn.ckan import CkanConfig, LinearProjector, ckan_forward_chunked
from core.nn.kan import KanNetwork
from core.nn.module import Module, Parameter
from core.nn.spline import SplineGrid
from core.nn.tensor import Tensor, expand, reshape


def add_channel_bias(y: Tensor, bias: Tensor) -> Tensor:
    """y[b, c, h, w] + bias[c] with the broadcast spelled out"""
    column = reshape(bias, (1, bias.shape[0], 1, 1))
    return y + expand(column, y.shape)


class Conv2d(Module):
    """Plain convolution: the CKAN operator with a linear projector plus bias"""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1,
                 padding: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                 chunk_pixels: int = config.CHUNK_PIXELS):
        rng = rng if rng is not None else np.random.default_rng(0)
        padding = kernel // 2 if padding is None else padding
        fan_in = c_in * kernel * kernel
        self.projector = LinearProjector(rng.standard_normal((c_out, fan_in)) / np.sqrt(fan_in))
        self.bias = Parameter(np.zeros(c_out))
        self.cfg = CkanConfig(c_in, c_out, kernel=kernel, stride=stride, padding=padding,
                              chunk_pixels=chunk_pixels, projector=self.projector)

    @property
    def c_in(self) -> int:
        return self.cfg.c_in

    @property
    def c_out(self) -> int:
        return self.cfg.c_out

    def forward(self, x: Tensor) -> Tensor:
        return add_channel_bias(ckan_forward_chunked(x, self.cfg), self.bias)


class CkanConv2d(Module):
    """
    CKAN convolution with a two-layer KAN projector K -> hidden -> c_out

    hidden defaults to K = c_in * kernel * kernel.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1,
                 padding: Optional[int] = None, hidden: Optional[int] = None,
                 grid: Optional[SplineGrid] = None, rng: Optional[np.random.Generator] = None,
                 chunk_pixels: int = config.CHUNK_PIXELS):
        padding = kernel // 2 if padding is None else padding
        patch_dim = c_in * kernel * kernel
        dims = [patch_dim, hidden or patch_dim, c_out]
        self.projector = KanNetwork.build(dims, grid=grid, rng=rng)
        self.cfg = CkanConfig(c_in, c_out, kernel=kernel, stride=stride, padding=padding,
                              chunk_pixels=chunk_pixels, projector=self.projector)

    @property
    def c_in(self) -> int:
        return self.cfg.c_in

    @property
    def c_out(self) -> int:
        return self.cfg.c_out

    def forward(self, x: Tensor) -> Tensor:
        return ckan_forward_chunked(x, self.cfg)
