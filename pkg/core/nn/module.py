"""
Parameter containers
"""
from typing import Iterator, List, Tuple

import numpy as np

from core.nn.tensor import Tensor


class Parameter(Tensor):
    """Leaf tensor that an optimizer updates in place"""

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad)

    def __repr__(self):
        return f"Parameter(shape={self.shape}, requires_grad={self.requires_grad})"


class Module:
    """
    Base class for everything that owns parameters

    Parameters are discovered by walking instance attributes in assignment
    order, descending into sub-modules and lists of sub-modules. That order
    is stable and is the order used for checkpoint blocks.
    """

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{full}.{index}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{index}.")

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def freeze(self) -> "Module":
        for param in self.parameters():
            param.requires_grad = False
        return self

    def num_parameters(self) -> int:
        return int(sum(param.size for param in self.parameters()))

    def state_arrays(self) -> List[np.ndarray]:
        return [param.data for param in self.parameters()]
