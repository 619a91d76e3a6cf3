"""Quantum-state-to-weights mapping: probabilities -> basis rows -> G_gamma -> theta."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .quantum import QtAnsatz, adjoint_gradient, basis_bits, qt_state

SCALE_MODES = ("raw", "pow2")


def required_qubits(M: int) -> int:
    """Smallest N with 2**N >= M."""
    if M < 2:
        raise ValueError(f"model needs at least 2 parameters, got {M}")
    return (M - 1).bit_length()


def mapping_param_count(dims) -> int:
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class MappingModel:
    """tanh MLP from (bits, probability) rows to one weight each.

    ``gamma`` stores, layer by layer, the (out, in) weight matrix row-major
    followed by the bias.
    """
    layer_dims: tuple[int, ...]
    gamma: np.ndarray

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        dims = self.layer_dims
        if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 1:
            raise ValueError(f"bad mapping dims {dims}: need >= 2 positive entries ending in 1")
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if self.gamma.shape != (self.num_params,):
            raise ValueError(f"gamma must have length {self.num_params}")

    @property
    def num_params(self) -> int:
        return mapping_param_count(self.layer_dims)

    @classmethod
    def init(cls, dims, rng: np.random.Generator) -> "MappingModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
        parts = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, fan_out * fan_in))
            parts.append(rng.uniform(-bound, bound, fan_out))
        return cls(tuple(dims), np.concatenate(parts))


def build_basis_inputs(N: int, M: int, p, scale_mode: str = "raw") -> np.ndarray:
    """Rows [bits(i), p_i] for i = 0..M-1; ``pow2`` scales p_i by 2**N."""
    if M > 2 ** N:
        raise ValueError(f"M={M} exceeds 2**{N}")
    if scale_mode not in SCALE_MODES:
        raise ValueError(f"scale_mode must be one of {SCALE_MODES}")
    p = np.asarray(p, dtype=np.float64)
    col = p[:M] * (2.0 ** N if scale_mode == "pow2" else 1.0)
    return np.column_stack([basis_bits(N, M), col])


def mapping_graph(gamma: dc.Tensor, dims, X: dc.Tensor) -> dc.Tensor:
    """Differentiable G_gamma applied row-wise; returns a (rows,) tensor."""
    if X.shape[1] != dims[0]:
        raise dc.ShapeError(f"mapping input has {X.shape[1]} columns, model expects {dims[0]}")
    h, off = X, 0
    n_layers = len(dims) - 1
    for li, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = dc.take(gamma, off, off + d_in * d_out, (d_out, d_in))
        off += d_in * d_out
        b = dc.take(gamma, off, off + d_out)
        off += d_out
        h = dc.add_bias(dc.matmul(h, dc.transpose(W)), b)
        if li < n_layers - 1:
            h = dc.tanh(h)
    return dc.reshape(h, (X.shape[0],))


def mapping_forward(model: MappingModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise ValueError(f"input has shape {X.shape}, model expects {model.layer_dims[0]} columns")
    return mapping_graph(dc.tensor(model.gamma), model.layer_dims, dc.tensor(X)).data.copy()


def generate_weights(ansatz: QtAnsatz, model: MappingModel, M: int, scale_mode: str = "raw"):
    """Run circuit -> basis rows -> G_gamma.

    Returns ``(theta, closure)`` where ``closure(dL/dtheta)`` gives
    ``(dL/dphi, dL/dgamma)``. Only the probability column depends on phi.
    """
    N = ansatz.num_qubits
    if model.layer_dims[0] != N + 1:
        raise ValueError(f"mapping input dim {model.layer_dims[0]} != N+1 = {N + 1}")
    if M > 2 ** N:
        raise ValueError(f"M={M} exceeds 2**{N}")
    if scale_mode not in SCALE_MODES:
        raise ValueError(f"scale_mode must be one of {SCALE_MODES}")
    scale = 2.0 ** N if scale_mode == "pow2" else 1.0

    phi_t = dc.tensor(ansatz.phi, requires_grad=True)
    gamma_t = dc.tensor(model.gamma, requires_grad=True)
    state = qt_state(ansatz)
    probs = state.probabilities()

    def prob_vjp(g):
        up = np.zeros(2 ** N)
        up[:M] = g * scale
        return (adjoint_gradient(ansatz, up, final=state),)

    p_col = dc.custom([phi_t], probs[:M] * scale, prob_vjp)
    X = dc.concat([dc.tensor(basis_bits(N, M)), dc.reshape(p_col, (M, 1))], axis=1)
    theta = mapping_graph(gamma_t, model.layer_dims, X)

    def closure(dtheta):
        grads = dc.vjp(theta, np.asarray(dtheta, dtype=np.float64))
        return (grads.get(phi_t.id, np.zeros_like(ansatz.phi)),
                grads.get(gamma_t.id, np.zeros_like(model.gamma)))

    return theta.data.copy(), closure
