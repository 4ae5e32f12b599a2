"""
KAN layers: factorized linear term plus per-input spline bank under LayerNorm

    y = LayerNorm(W silu(x) + phi(x)),   W = sum_jk a_jk M_jk

The fixed basis matrices are rank-one outer products M_jk = u_j v_k^T of
seeded orthonormal columns, so W = U a V^T and the (rank_p, rank_s, d_out,
d_in) basis tensor is never built unless asked for.
"""
from typing import List, Optional, Sequence

import numpy as np
from scipy import sparse

import config
from core.exceptions import ConfigurationError, ShapeError
from core.nn.instrumentation import PROJ_LINEAR_MACS, PROJ_SPLINE_MACS, REGISTRY
from core.nn.module import Module, Parameter
from core.nn.spline import SplineCoeffs, SplineGrid, basis_window, derivative_window
from core.nn.tensor import Function, Tensor, matmul, permute, reshape, silu


def orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """First `cols` columns of a seeded orthonormal matrix (QR with sign fix)"""
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


class FactorizedLinear(Module):
    """W = sum_jk a_jk M_jk with fixed M and learnable a"""

    def __init__(self, d_in: int, d_out: int, rank_p: Optional[int] = None,
                 rank_s: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                 basis_seed: int = config.KAN_BASIS_SEED, gain: float = config.KAN_INIT_GAIN):
        cap = min(config.KAN_RANK_CAP, d_out, d_in)
        self.d_in = d_in
        self.d_out = d_out
        self.rank_p = rank_p or cap
        self.rank_s = rank_s or cap
        if self.rank_p > d_out or self.rank_s > d_in:
            raise ConfigurationError(
                f"Ranks ({self.rank_p}, {self.rank_s}) exceed layer shape ({d_out}, {d_in})"
            )

        basis_rng = np.random.default_rng([basis_seed, d_out, d_in])
        self.u = orthonormal_columns(basis_rng, d_out, self.rank_p)
        self.v = orthonormal_columns(basis_rng, d_in, self.rank_s)
        self.basis: Optional[np.ndarray] = None

        rng = rng if rng is not None else np.random.default_rng(0)
        std = gain * np.sqrt(d_out / (self.rank_p * self.rank_s))
        self.a = Parameter(rng.standard_normal((self.rank_p, self.rank_s)) * std)

    @classmethod
    def from_basis(cls, a, basis: Sequence[Sequence[np.ndarray]]) -> "FactorizedLinear":
        """Build from explicit basis matrices M[j][k] (all d_out x d_in)"""
        matrices = [[np.asarray(m, dtype=np.float64) for m in row] for row in basis]
        shapes = {m.shape for row in matrices for m in row}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ShapeError(f"Basis matrices must share one 2-D shape, got {sorted(shapes)}")
        d_out, d_in = next(iter(shapes))
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (len(matrices), len(matrices[0])):
            raise ShapeError(f"Coefficients {a.shape} do not match basis grid "
                             f"({len(matrices)}, {len(matrices[0])})")

        layer = cls.__new__(cls)
        layer.d_in, layer.d_out = d_in, d_out
        layer.rank_p, layer.rank_s = a.shape
        layer.u = None
        layer.v = None
        layer.basis = np.stack([np.stack(row) for row in matrices])
        layer.a = Parameter(a)
        return layer

    def basis_matrix(self, j: int, k: int) -> np.ndarray:
        if self.basis is not None:
            return self.basis[j, k]
        return np.outer(self.u[:, j], self.v[:, k])


def materialize_weight(f: FactorizedLinear) -> Tensor:
    """Sum_jk a_jk M_jk as a (d_out, d_in) tensor; only a receives gradient"""
    if f.basis is not None:
        flat_basis = Tensor(f.basis.reshape(f.rank_p * f.rank_s, f.d_out * f.d_in))
        flat_a = reshape(f.a, (1, f.rank_p * f.rank_s))
        return reshape(matmul(flat_a, flat_basis), (f.d_out, f.d_in))
    return matmul(matmul(Tensor(f.u), f.a), Tensor(f.v.T))


class KanLayer(Module):
    """One KAN layer of width d_in -> d_out"""

    def __init__(self, d_in: int, d_out: int, grid: Optional[SplineGrid] = None,
                 rng: Optional[np.random.Generator] = None, rank: Optional[int] = None):
        if d_out < 2:
            raise ConfigurationError(
                f"KAN layer needs d_out >= 2 for a per-row LayerNorm, got {d_out}"
            )
        if d_in < 1:
            raise ConfigurationError(f"KAN layer needs d_in >= 1, got {d_in}")
        self.d_in = d_in
        self.d_out = d_out
        self.grid = grid or SplineGrid()
        self.base_activation = "silu"
        self.linear = FactorizedLinear(d_in, d_out, rank_p=rank, rank_s=rank, rng=rng)
        # alpha[i, m, o] is coefficient m of the spline from input i to output o
        self.alpha = Parameter(np.zeros((d_in, self.grid.num_basis, d_out)))
        self.gain = Parameter(np.ones(d_out))
        self.bias = Parameter(np.zeros(d_out))

    def coeffs(self, i: int, o: int) -> SplineCoeffs:
        return SplineCoeffs(self.alpha.data[i, :, o].copy())

    def forward(self, x: Tensor) -> Tensor:
        return kan_layer_forward(x, self)


class KanNetwork(Module):
    """Stack of KAN layers with chained widths"""

    def __init__(self, layers: Sequence[KanLayer]):
        self.layers: List[KanLayer] = list(layers)
        for first, second in zip(self.layers, self.layers[1:]):
            if first.d_out != second.d_in:
                raise ShapeError(
                    f"Layer widths do not chain: {first.d_out} -> {second.d_in}"
                )

    @classmethod
    def build(cls, dims: Sequence[int], grid: Optional[SplineGrid] = None,
              rng: Optional[np.random.Generator] = None) -> "KanNetwork":
        grid = grid or SplineGrid()
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls([KanLayer(d_in, d_out, grid=grid, rng=rng)
                    for d_in, d_out in zip(dims[:-1], dims[1:])])

    @property
    def dims(self) -> List[int]:
        if not self.layers:
            return []
        return [self.layers[0].d_in] + [layer.d_out for layer in self.layers]

    @property
    def d_in(self) -> Optional[int]:
        return self.layers[0].d_in if self.layers else None

    @property
    def d_out(self) -> Optional[int]:
        return self.layers[-1].d_out if self.layers else None

    def forward(self, x: Tensor) -> Tensor:
        return kan_forward(x, self)


class SplineTerm(Function):
    """
    out[r, o] = sum_i phi_io(x[r, i]) as a sparse design matrix times alpha

    The design matrix has n rows and d_in * D_s columns with exactly
    degree + 1 nonzeros per (row, input) pair.
    """

    def forward(self, x, alpha, grid: SplineGrid = None):
        n, d_in = x.shape
        num_basis, window = grid.num_basis, grid.window
        d_out = alpha.shape[2]
        offsets, values = basis_window(x, grid)
        columns = (np.arange(d_in)[None, :, None] * num_basis
                   + offsets[..., None] + np.arange(window))
        rows = np.repeat(np.arange(n), d_in * window)
        self.design = sparse.csr_matrix(
            (values.ravel(), (rows, columns.ravel())), shape=(n, d_in * num_basis)
        )
        self.columns = columns.reshape(n, d_in * window)
        self.alpha_flat = alpha.reshape(d_in * num_basis, d_out)
        self.alpha_shape = alpha.shape
        self.x = x
        self.grid = grid
        REGISTRY.increment(PROJ_SPLINE_MACS, n * d_in * window * d_out)
        return np.asarray(self.design @ self.alpha_flat)

    def backward(self, grad):
        n, d_in = self.x.shape
        grad_alpha = np.asarray(self.design.T @ grad).reshape(self.alpha_shape)
        dense = grad @ self.alpha_flat.T
        gathered = np.take_along_axis(dense, self.columns, axis=1)
        _, derivs = derivative_window(self.x, self.grid)
        grad_x = (gathered.reshape(n, d_in, self.grid.window) * derivs).sum(axis=-1)
        return grad_x, grad_alpha


class LayerNorm(Function):
    """Row normalization with learnable gain and bias"""

    def forward(self, u, gain, bias, eps: float = config.LAYERNORM_EPS):
        centered = u - u.mean(axis=1, keepdims=True)
        variance = (centered * centered).mean(axis=1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(variance + eps)
        self.normed = centered * self.inv_std
        self.gain = gain
        return self.normed * gain + bias

    def backward(self, grad):
        grad_gain = (grad * self.normed).sum(axis=0)
        grad_bias = grad.sum(axis=0)
        d_normed = grad * self.gain
        grad_u = self.inv_std * (
            d_normed
            - d_normed.mean(axis=1, keepdims=True)
            - self.normed * (d_normed * self.normed).mean(axis=1, keepdims=True)
        )
        return grad_u, grad_gain, grad_bias


def layer_norm(u: Tensor, gain: Tensor, bias: Tensor, eps: float = config.LAYERNORM_EPS) -> Tensor:
    if u.ndim != 2 or gain.shape != (u.shape[1],) or bias.shape != (u.shape[1],):
        raise ShapeError(
            f"layer_norm: rows {u.shape} with gain {gain.shape} and bias {bias.shape}"
        )
    return LayerNorm.apply(u, gain, bias, eps=eps)


def spline_term(x: Tensor, layer: KanLayer) -> Tensor:
    if x.ndim != 2 or x.shape[1] != layer.d_in:
        raise ShapeError(f"spline_term expects (n, {layer.d_in}), got {x.shape}")
    return SplineTerm.apply(x, layer.alpha, grid=layer.grid)


def kan_layer_forward(x: Tensor, layer: KanLayer) -> Tensor:
    """LayerNorm(W silu(x) + phi(x)) row by row"""
    if x.ndim != 2 or x.shape[1] != layer.d_in:
        raise ShapeError(f"KAN layer expects (n, {layer.d_in}), got {x.shape}")
    weight = materialize_weight(layer.linear)
    linear = matmul(silu(x), permute(weight, (1, 0)))
    REGISTRY.increment(PROJ_LINEAR_MACS, x.shape[0] * layer.d_in * layer.d_out)
    return layer_norm(linear + spline_term(x, layer), layer.gain, layer.bias)


def kan_forward(x: Tensor, net: KanNetwork) -> Tensor:
    if net.layers and (x.ndim != 2 or x.shape[1] != net.d_in):
        raise ShapeError(f"KAN network expects (n, {net.d_in}), got {x.shape}")
    for layer in net.layers:
        x = kan_layer_forward(x, layer)
    return x
