"""Gradient self-checks: adjoint vs parameter shift vs finite differences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .data import synthetic
from .mapping import MappingModel, required_qubits
from .models import forward_graph, get_spec, inject_graph, param_count
from .quantum import QtAnsatz, adjoint_gradient, parameter_shift_gradient, run_qt_ansatz
from .trainer import QtGenerator

ADJ_VS_PS_ABS = 1e-9
VS_FD_REL = 1e-6
CHAIN_REL = 1e-4


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.value <= self.tolerance

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tolerance:g})"


def circuit_agreement(n: int, n_block: int, seed: int) -> tuple[float, float, float]:
    """(|adj - ps|_max, rel(adj, fd), rel(ps, fd)) for L = u . p on a random circuit."""
    rng = np.random.default_rng(seed)
    ans = QtAnsatz(n, n_block, rng.uniform(-np.pi, np.pi, n * n_block))
    u = rng.standard_normal(2 ** n)
    adj = adjoint_gradient(ans, u)
    ps = parameter_shift_gradient(ans, u)
    fd = dc.finite_diff_gradient(lambda phi: float(u @ run_qt_ansatz(ans.with_phi(phi))), ans.phi)
    return float(np.max(np.abs(adj - ps))), dc.relative_error(adj, fd), dc.relative_error(ps, fd)


def triple_agreement(seeds=range(20), qubits=range(2, 7), blocks=range(1, 5)) -> list[CheckResult]:
    worst = np.zeros(3)
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        n, nb = int(rng.choice(list(qubits))), int(rng.choice(list(blocks)))
        worst = np.maximum(worst, circuit_agreement(n, nb, seed))
    return [CheckResult("adjoint vs parameter-shift (abs)", worst[0], ADJ_VS_PS_ABS),
            CheckResult("adjoint vs finite-diff (rel)", worst[1], VS_FD_REL),
            CheckResult("parameter-shift vs finite-diff (rel)", worst[2], VS_FD_REL)]


def chain_check(seed: int = 0, batch: int = 16, n_block: int = 3, arch: str = "toy_mlp_32",
                scale_mode: str = "raw") -> CheckResult:
    """Full QT loss gradient w.r.t. (phi, gamma) against central differences."""
    spec = get_spec(arch)
    M = param_count(spec)
    N = required_qubits(M)
    dims = (N + 1, 4, 20, 4, 1)
    gen = QtGenerator(spec, N, n_block, dims, scale_mode)
    rng = np.random.default_rng(seed)
    params = np.concatenate([rng.uniform(-np.pi, np.pi, N * n_block), MappingModel.init(dims, rng).gamma])
    ds = synthetic(batch, spec.n_outputs, seed, spec.input_shape[1])
    _, grad = gen.loss_grad(params, ds.images, ds.labels)

    def loss(p):
        th = dc.tensor(gen.theta(p))
        return float(dc.softmax_cross_entropy(
            forward_graph(spec, inject_graph(th, spec), dc.tensor(ds.images)), ds.labels).data)

    fd = dc.finite_diff_gradient(loss, params)
    return CheckResult(f"QT chain dL/d(phi,gamma) vs finite-diff (rel, M={M}, N={N})",
                       dc.relative_error(grad, fd), CHAIN_REL)


def run_all(seeds=range(20)) -> list[CheckResult]:
    return triple_agreement(seeds) + [chain_check()]
