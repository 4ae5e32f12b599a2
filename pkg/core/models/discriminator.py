"""
Strided convolution ladder ending in one logit per image
"""
from typing import List, Optional, Sequence

import numpy as np

import config
from core.exceptions import GeometryError, ShapeError
from core.nn.layers import Conv2d
from core.nn.module import Module, Parameter
from core.nn.tensor import Tensor, expand, leaky_relu, matmul, mean_axes, reshape


class Discriminator(Module):
    """
    Plain convolutions (16, 16, 32, 64, 64) with strides (1, 2, 2, 2, 2),
    leaky activations, global average pooling and an affine logit
    """

    def __init__(self, channels: Sequence[int] = config.DISCRIMINATOR_CHANNELS,
                 strides: Sequence[int] = config.DISCRIMINATOR_STRIDES,
                 seed: int = config.SEED, slope: float = config.LEAKY_SLOPE,
                 min_size: Optional[int] = None):
        if len(channels) != len(strides):
            raise ShapeError(f"{len(channels)} channel widths for {len(strides)} strides")
        rng = np.random.default_rng([seed, 1])
        widths = [3] + list(channels)
        self.convs: List[Conv2d] = [
            Conv2d(c_in, c_out, kernel=3, stride=stride, rng=rng)
            for c_in, c_out, stride in zip(widths[:-1], widths[1:], strides)
        ]
        self.slope = slope
        self.min_size = config.DISCRIMINATOR_MIN_SIZE if min_size is None else min_size
        self.weight = Parameter(rng.standard_normal((widths[-1], 1)) / np.sqrt(widths[-1]))
        self.bias = Parameter(np.zeros(1))

    def forward(self, img: Tensor) -> Tensor:
        return discriminator_forward(img, self)


def discriminator_forward(img: Tensor, d: Discriminator) -> Tensor:
    """Raw logits of shape (B, 1)"""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"Discriminator expects (B, 3, H, W), got {img.shape}")
    if min(img.shape[2:]) < d.min_size:
        raise GeometryError(
            f"Input {img.shape[2]}x{img.shape[3]} is below the discriminator minimum {d.min_size}"
        )
    x = img
    for conv in d.convs:
        x = leaky_relu(conv(x), d.slope)
    pooled = mean_axes(x, (2, 3))
    batch = img.shape[0]
    return matmul(pooled, d.weight) + expand(reshape(d.bias, (1, 1)), (batch, 1))
