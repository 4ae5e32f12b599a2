"""Numeric core: tensors, splines, KAN layers and the CKAN operator"""
from .tensor import Tensor, backward, detach, no_grad
from .module import Module, Parameter
from .spline import SplineCoeffs, SplineGrid
from .kan import FactorizedLinear, KanLayer, KanNetwork
from .ckan import CkanConfig, LinearProjector, PatchMatrix
from .layers import CkanConv2d, Conv2d

__all__ = [
    'Tensor', 'backward', 'detach', 'no_grad',
    'Module', 'Parameter',
    'SplineCoeffs', 'SplineGrid',
    'FactorizedLinear', 'KanLayer', 'KanNetwork',
    'CkanConfig', 'LinearProjector', 'PatchMatrix',
    'CkanConv2d', 'Conv2d',
]
