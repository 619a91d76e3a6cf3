"""Statevector simulation of the QT ansatz and the QCML encoding circuit.

Basis convention: index i <-> bitstring with qubit 0 as the most significant
bit. Amplitude arrays may carry leading batch axes; gates act on the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MAX_QUBITS = 24


@dataclass
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    @property
    def real_mode(self) -> bool:
        return not np.iscomplexobj(self.amplitudes)

    def probabilities(self) -> np.ndarray:
        a = self.amplitudes
        return a * a if self.real_mode else (a.real ** 2 + a.imag ** 2)

    def norm(self) -> float:
        return float(np.sum(self.probabilities()))


@dataclass
class QtAnsatz:
    """Blocks of per-qubit Ry rotations followed by an open CNOT chain."""
    num_qubits: int
    n_block: int
    phi: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_qubits < 1 or self.n_block < 1:
            raise ValueError("num_qubits and n_block must be >= 1")
        if self.phi is None:
            self.phi = np.zeros(self.num_params)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.shape != (self.num_params,):
            raise ValueError(f"phi must have length {self.num_params}, got {self.phi.shape}")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi must be finite")

    @property
    def num_params(self) -> int:
        return self.num_qubits * self.n_block

    def with_phi(self, phi) -> "QtAnsatz":
        return QtAnsatz(self.num_qubits, self.n_block, phi)


@dataclass
class QcmlCircuit:
    num_qubits: int
    n_block: int
    features: np.ndarray  # (num_qubits,) or (batch, num_qubits)
    angles: np.ndarray    # (n_block * num_qubits,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.features.shape[-1] != self.num_qubits:
            raise ValueError(f"expected {self.num_qubits} features, got {self.features.shape[-1]}")
        if self.angles.shape != (self.num_qubits * self.n_block,):
            raise ValueError(f"expected {self.num_qubits * self.n_block} angles, got {self.angles.shape}")


# ---------------------------------------------------------------- bits

def index_to_bits(i: int, n: int) -> list[int]:
    return [(i >> (n - 1 - q)) & 1 for q in range(n)]


def bits_to_index(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def basis_bits(n: int, count: int | None = None) -> np.ndarray:
    """Bit matrix (count, n) for basis indices 0..count-1, qubit 0 leftmost."""
    count = 2 ** n if count is None else count
    idx = np.arange(count)[:, None]
    return ((idx >> (n - 1 - np.arange(n))) & 1).astype(np.float64)


# ---------------------------------------------------------------- gate kernels

def _check_qubit(n, q):
    if not 0 <= q < n:
        raise IndexError(f"qubit {q} out of range for {n} qubits")


def _split(amps: np.ndarray, n: int, q: int) -> np.ndarray:
    return amps.reshape(amps.shape[:-1] + (2 ** q, 2, 2 ** (n - q - 1)))


def _angle(a, amps):
    # per-sample angles broadcast against (batch..., left, right)
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(a.shape + (1, 1)) if a.ndim else a


def _ry_kernel(amps, n, q, c, s):
    v = _split(amps, n, q)
    a0, a1 = v[..., 0, :], v[..., 1, :]
    out = np.empty_like(v)
    out[..., 0, :] = c * a0 - s * a1
    out[..., 1, :] = s * a0 + c * a1
    return out.reshape(amps.shape)


def ry_array(amps: np.ndarray, n: int, q: int, angle) -> np.ndarray:
    half = _angle(angle, amps) / 2
    return _ry_kernel(amps, n, q, np.cos(half), np.sin(half))


def ry_derivative_array(amps: np.ndarray, n: int, q: int, angle) -> np.ndarray:
    """d Ry(angle)/d angle applied to amps, i.e. Ry(angle + pi) / 2."""
    half = _angle(angle, amps) / 2
    return _ry_kernel(amps, n, q, -np.sin(half) / 2, np.cos(half) / 2)


def rz_array(amps: np.ndarray, n: int, q: int, angle) -> np.ndarray:
    half = _angle(angle, amps) / 2
    v = _split(amps.astype(np.complex128, copy=False), n, q).copy()
    v[..., 0, :] *= np.exp(-1j * half)
    v[..., 1, :] *= np.exp(1j * half)
    return v.reshape(amps.shape)


def rz_derivative_array(amps, n, q, angle):
    half = _angle(angle, amps) / 2
    v = _split(amps.astype(np.complex128, copy=False), n, q).copy()
    v[..., 0, :] *= -0.5j * np.exp(-1j * half)
    v[..., 1, :] *= 0.5j * np.exp(1j * half)
    return v.reshape(amps.shape)


def h_array(amps: np.ndarray, n: int, q: int) -> np.ndarray:
    v = _split(amps, n, q)
    r = 1 / np.sqrt(2)
    out = np.empty(v.shape, dtype=np.result_type(v.dtype, np.float64))
    out[..., 0, :] = (v[..., 0, :] + v[..., 1, :]) * r
    out[..., 1, :] = (v[..., 0, :] - v[..., 1, :]) * r
    return out.reshape(amps.shape)


def cnot_array(amps: np.ndarray, n: int, control: int, target: int) -> np.ndarray:
    lead = amps.shape[:-1]
    t = amps.reshape(lead + (2,) * n).copy()
    k = len(lead)
    sel = [slice(None)] * (k + n)
    sel[k + control] = 1
    sub = t[tuple(sel)]
    axis = k + target - (1 if target > control else 0)
    t[tuple(sel)] = np.flip(sub, axis=axis)
    return t.reshape(amps.shape)


def cnot_chain(amps: np.ndarray, n: int) -> np.ndarray:
    for q in range(n - 1):
        amps = cnot_array(amps, n, q, q + 1)
    return amps


def cnot_chain_inverse(amps: np.ndarray, n: int) -> np.ndarray:
    for q in reversed(range(n - 1)):
        amps = cnot_array(amps, n, q, q + 1)
    return amps


# ---------------------------------------------------------------- StateVector API

def init_state(n: int) -> StateVector:
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"num_qubits must be in [1, {MAX_QUBITS}], got {n}")
    amps = np.zeros(2 ** n)
    amps[0] = 1.0
    return StateVector(n, amps)


def apply_ry(state: StateVector, qubit: int, angle: float) -> StateVector:
    _check_qubit(state.num_qubits, qubit)
    return StateVector(state.num_qubits, ry_array(state.amplitudes, state.num_qubits, qubit, angle))


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    n = state.num_qubits
    _check_qubit(n, control)
    _check_qubit(n, target)
    if control == target:
        raise ValueError("control and target must differ")
    return StateVector(n, cnot_array(state.amplitudes, n, control, target))


def apply_h(state: StateVector, qubit: int) -> StateVector:
    _check_qubit(state.num_qubits, qubit)
    amps = state.amplitudes.astype(np.complex128)
    return StateVector(state.num_qubits, h_array(amps, state.num_qubits, qubit))


def apply_rz(state: StateVector, qubit: int, angle: float) -> StateVector:
    _check_qubit(state.num_qubits, qubit)
    return StateVector(state.num_qubits, rz_array(state.amplitudes, state.num_qubits, qubit, angle))


# ---------------------------------------------------------------- QT ansatz

def qt_state(ansatz: QtAnsatz) -> StateVector:
    n = ansatz.num_qubits
    amps = init_state(n).amplitudes
    phi = ansatz.phi
    for b in range(ansatz.n_block):
        for q in range(n):
            amps = ry_array(amps, n, q, phi[b * n + q])
        amps = cnot_chain(amps, n)
    return StateVector(n, amps)


def run_qt_ansatz(ansatz: QtAnsatz) -> np.ndarray:
    """Computational-basis probabilities of the QT ansatz state."""
    return qt_state(ansatz).probabilities()


def adjoint_gradient(ansatz: QtAnsatz, upstream, final: StateVector | None = None) -> np.ndarray:
    """dL/dphi given dL/dp, by un-computing the circuit gate by gate.

    Memory is two statevectors regardless of depth. ``final`` may be passed
    to skip re-running the forward circuit.
    """
    n = ansatz.num_qubits
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (2 ** n,):
        raise ValueError(f"upstream must have length {2 ** n}")
    psi = (final or qt_state(ansatz)).amplitudes
    if np.iscomplexobj(psi):
        raise RuntimeError("QT statevector left real mode")
    lam = 2.0 * psi * upstream  # dL/dpsi
    phi = ansatz.phi
    grad = np.zeros(ansatz.num_params)
    for b in reversed(range(ansatz.n_block)):
        psi = cnot_chain_inverse(psi, n)
        lam = cnot_chain_inverse(lam, n)
        for q in reversed(range(n)):
            j = b * n + q
            psi = ry_array(psi, n, q, -phi[j])
            grad[j] = lam @ ry_derivative_array(psi, n, q, phi[j])
            lam = ry_array(lam, n, q, -phi[j])
    return grad


def parameter_shift_gradient(ansatz: QtAnsatz, upstream) -> np.ndarray:
    """dL/dphi from two shifted circuit runs (+-pi/2) per angle."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (2 ** ansatz.num_qubits,):
        raise ValueError(f"upstream must have length {2 ** ansatz.num_qubits}")
    grad = np.zeros(ansatz.num_params)
    for j in range(ansatz.num_params):
        plus, minus = ansatz.phi.copy(), ansatz.phi.copy()
        plus[j] += np.pi / 2
        minus[j] -= np.pi / 2
        dp = (run_qt_ansatz(ansatz.with_phi(plus)) - run_qt_ansatz(ansatz.with_phi(minus))) / 2
        grad[j] = upstream @ dp
    return grad


# ---------------------------------------------------------------- QCML circuit

def _z_signs(n: int) -> np.ndarray:
    """(n, 2^n) matrix of sigma_z eigenvalues, +1 for bit 0."""
    return 1.0 - 2.0 * basis_bits(n).T


def _qcml_forward(n, n_block, x, angles):
    lead = x.shape[:-1]
    amps = np.zeros(lead + (2 ** n,), dtype=np.complex128)
    amps[..., 0] = 1.0
    for q in range(n):
        amps = h_array(amps, n, q)
    for q in range(n):
        amps = ry_array(amps, n, q, x[..., q])
        amps = rz_array(amps, n, q, x[..., q])
    for b in range(n_block):
        for q in range(n):
            amps = ry_array(amps, n, q, angles[b * n + q])
        amps = cnot_chain(amps, n)
    return amps


def run_qcml(circuit: QcmlCircuit):
    """<sigma_z> per qubit, plus a closure mapping dL/d<z> to (dL/dx, dL/dangles).

    Features may be batched as (batch, num_qubits); the angle gradient is
    summed over the batch.
    """
    n, nb = circuit.num_qubits, circuit.n_block
    x, angles = circuit.features, circuit.angles
    psi_final = _qcml_forward(n, nb, x, angles)
    probs = psi_final.real ** 2 + psi_final.imag ** 2
    zs = _z_signs(n)
    expect = probs @ zs.T

    def vjp(upstream):
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != expect.shape:
            raise ValueError(f"upstream {upstream.shape} vs output {expect.shape}")
        psi = psi_final
        lam = (upstream @ zs) * psi  # O|psi>, O = sum_q g_q Z_q
        g_angles = np.zeros_like(angles)
        g_x = np.zeros_like(x)

        def overlap(a, b):
            return 2.0 * np.sum((a.conj() * b).real, axis=-1)

        for b in reversed(range(nb)):
            psi = cnot_chain_inverse(psi, n)
            lam = cnot_chain_inverse(lam, n)
            for q in reversed(range(n)):
                j = b * n + q
                psi = ry_array(psi, n, q, -angles[j])
                g_angles[j] = np.sum(overlap(lam, ry_derivative_array(psi, n, q, angles[j])))
                lam = ry_array(lam, n, q, -angles[j])
        for q in reversed(range(n)):
            xq = x[..., q]
            psi = rz_array(psi, n, q, -xq)
            g_x[..., q] += overlap(lam, rz_derivative_array(psi, n, q, xq))
            lam = rz_array(lam, n, q, -xq)
            psi = ry_array(psi, n, q, -xq)
            g_x[..., q] += overlap(lam, ry_derivative_array(psi, n, q, xq))
            lam = ry_array(lam, n, q, -xq)
        return g_x, g_angles

    return expect, vjp


# ---------------------------------------------------------------- sampling

def sample_counts(p, n_shots: int, rng_seed: int) -> np.ndarray:
    """Multinomial measurement counts over the computational basis."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, None)
    p = p / p.sum()
    return np.random.default_rng(rng_seed).multinomial(n_shots, p)
