import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtrain import diffcore as dc
from qtrain import quantum as q

R2 = np.sqrt(2) / 2


def basis(n, i):
    amps = np.zeros(2 ** n)
    amps[i] = 1.0
    return q.StateVector(n, amps)


def dense_ry(mu):
    c, s = np.cos(mu / 2), np.sin(mu / 2)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------- gates

def test_init_state():
    np.testing.assert_array_equal(q.init_state(1).amplitudes, [1, 0])
    p = q.init_state(3).probabilities()
    assert p[0] == 1 and p[1:].sum() == 0
    s = q.init_state(13)
    assert s.amplitudes.shape == (8192,) and s.real_mode


@pytest.mark.parametrize("n", [0, 25])
def test_init_state_guard(n):
    with pytest.raises(ValueError):
        q.init_state(n)


def test_ry_examples():
    s = q.init_state(1)
    np.testing.assert_array_equal(q.apply_ry(s, 0, 0.0).amplitudes, s.amplitudes)
    np.testing.assert_allclose(q.apply_ry(s, 0, np.pi).amplitudes, [0, 1], atol=1e-16)
    half = q.apply_ry(s, 0, np.pi / 2)
    np.testing.assert_allclose(half.amplitudes, [R2, R2], atol=1e-16)
    np.testing.assert_allclose(half.probabilities(), [0.5, 0.5], atol=1e-15)


def test_gate_index_errors():
    s = q.init_state(2)
    with pytest.raises(IndexError):
        q.apply_ry(s, 2, 0.1)
    with pytest.raises(ValueError):
        q.apply_cnot(s, 1, 1)
    with pytest.raises(IndexError):
        q.apply_h(s, -1)


def test_cnot_examples():
    np.testing.assert_array_equal(q.apply_cnot(basis(2, 0b10), 0, 1).amplitudes, basis(2, 0b11).amplitudes)
    np.testing.assert_array_equal(q.apply_cnot(basis(2, 0), 0, 1).amplitudes, basis(2, 0).amplitudes)
    s = q.StateVector(3, np.random.default_rng(0).standard_normal(8))
    twice = q.apply_cnot(q.apply_cnot(s, 2, 0), 2, 0)
    assert twice.amplitudes.tobytes() == s.amplitudes.tobytes()


def test_h_and_rz():
    h = q.apply_h(q.init_state(1), 0)
    np.testing.assert_allclose(h.amplitudes, [R2, R2], atol=1e-16)
    hh = q.apply_h(h, 0)
    np.testing.assert_allclose(hh.amplitudes, [1, 0], atol=1e-15)
    rz = q.apply_rz(q.init_state(1), 0, 0.7)
    assert not rz.real_mode
    np.testing.assert_allclose(rz.probabilities(), [1, 0])


def test_gates_match_dense_matrices():
    # dense Kronecker construction, qubit 0 most significant
    rng = np.random.default_rng(1)
    n, mu = 3, 0.83
    psi = rng.standard_normal(8)
    psi /= np.linalg.norm(psi)
    for qb in range(n):
        ops = [np.eye(2)] * n
        ops[qb] = dense_ry(mu)
        full = ops[0]
        for o in ops[1:]:
            full = np.kron(full, o)
        np.testing.assert_allclose(q.apply_ry(q.StateVector(n, psi), qb, mu).amplitudes, full @ psi, atol=1e-15)


@given(n=st.integers(1, 13), data=st.data())
@settings(max_examples=60, deadline=None)
def test_bit_roundtrip(n, data):
    i = data.draw(st.integers(0, 2 ** n - 1))
    bits = q.index_to_bits(i, n)
    assert len(bits) == n and q.bits_to_index(bits) == i
    assert bits == [int(c) for c in format(i, f"0{n}b")]


def test_basis_bits_matrix():
    np.testing.assert_array_equal(q.basis_bits(2), [[0, 0], [0, 1], [1, 0], [1, 1]])


# ---------------------------------------------------------------- QT ansatz

def test_ansatz_examples():
    p = q.run_qt_ansatz(q.QtAnsatz(3, 2, np.zeros(6)))
    assert p[0] == 1
    np.testing.assert_allclose(q.run_qt_ansatz(q.QtAnsatz(1, 1, [np.pi / 2])), [0.5, 0.5])
    p = q.run_qt_ansatz(q.QtAnsatz(2, 1, [np.pi, 0.0]))
    assert p[3] == pytest.approx(1, abs=1e-15)


def test_two_qubit_oracle_by_matrix():
    phi = np.array([np.pi, 0.0])
    ry = np.kron(dense_ry(phi[0]), dense_ry(phi[1]))
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    psi = cnot @ ry @ np.array([1.0, 0, 0, 0])
    np.testing.assert_allclose(q.qt_state(q.QtAnsatz(2, 1, phi)).amplitudes, psi, atol=1e-15)


def test_param_count_and_validation():
    assert q.QtAnsatz(13, 16, np.zeros(208)).num_params == 208
    with pytest.raises(ValueError):
        q.QtAnsatz(3, 2, np.zeros(5))
    with pytest.raises(ValueError):
        q.QtAnsatz(2, 1, [np.inf, 0])


@given(n=st.integers(1, 8), nb=st.integers(1, 4), seed=st.integers(0, 2 ** 20))
@settings(max_examples=40, deadline=None)
def test_real_mode_and_norm(n, nb, seed):
    phi = np.random.default_rng(seed).uniform(-10, 10, n * nb)
    s = q.qt_state(q.QtAnsatz(n, nb, phi))
    assert s.real_mode and not np.iscomplexobj(s.amplitudes)
    assert abs(s.norm() - 1) <= 1e-12
    p = s.probabilities()
    assert np.all((p >= 0) & (p <= 1)) and abs(p.sum() - 1) <= 1e-12


# ---------------------------------------------------------------- gradients

def test_closed_form_single_qubit():
    ans = q.QtAnsatz(1, 1, [np.pi / 2])
    up = np.array([0.0, 1.0])
    assert q.adjoint_gradient(ans, up)[0] == pytest.approx(0.5, abs=1e-15)
    assert q.parameter_shift_gradient(ans, up)[0] == pytest.approx(0.5, abs=1e-15)
    assert np.all(q.adjoint_gradient(ans, np.zeros(2)) == 0)


def test_stationary_point():
    ans = q.QtAnsatz(2, 1, np.zeros(2))
    up = np.array([1.0, 0, 0, 0])
    np.testing.assert_allclose(q.parameter_shift_gradient(ans, up), 0, atol=1e-16)


def test_adjoint_rejects_complex_state():
    ans = q.QtAnsatz(1, 1, [0.3])
    bad = q.StateVector(1, np.array([1.0 + 0j, 0]))
    with pytest.raises(RuntimeError):
        q.adjoint_gradient(ans, np.ones(2), final=bad)


@pytest.mark.parametrize("seed", range(20))
def test_triple_agreement(seed):
    rng = np.random.default_rng(seed)
    n, nb = int(rng.integers(2, 7)), int(rng.integers(1, 5))
    ans = q.QtAnsatz(n, nb, rng.uniform(-np.pi, np.pi, n * nb))
    u = rng.standard_normal(2 ** n)
    adj, ps = q.adjoint_gradient(ans, u), q.parameter_shift_gradient(ans, u)
    fd = dc.finite_diff_gradient(lambda phi: float(u @ q.run_qt_ansatz(ans.with_phi(phi))), ans.phi)
    assert np.max(np.abs(adj - ps)) <= 1e-9
    assert dc.relative_error(adj, fd) <= 1e-6
    assert dc.relative_error(ps, fd) <= 1e-6


# ---------------------------------------------------------------- QCML circuit

def test_qcml_trivial():
    expect, _ = q.run_qcml(q.QcmlCircuit(1, 1, np.zeros(1), np.zeros(1)))
    assert expect[0] == pytest.approx(0, abs=1e-15)


def test_qcml_length_mismatch():
    with pytest.raises(ValueError):
        q.QcmlCircuit(3, 1, np.zeros(2), np.zeros(3))


@given(seed=st.integers(0, 2 ** 20))
@settings(max_examples=20, deadline=None)
def test_qcml_bounds(seed):
    rng = np.random.default_rng(seed)
    expect, _ = q.run_qcml(q.QcmlCircuit(4, 2, rng.uniform(-5, 5, 4), rng.uniform(-5, 5, 8)))
    assert np.all(np.abs(expect) <= 1 + 1e-12)


def test_qcml_matches_dense_simulation():
    rng = np.random.default_rng(2)
    n, nb = 3, 2
    x, ang = rng.standard_normal(n), rng.standard_normal(n * nb)
    s = q.init_state(n)
    for k in range(n):
        s = q.apply_h(s, k)
    for k in range(n):
        s = q.apply_rz(q.apply_ry(s, k, x[k]), k, x[k])
    for b in range(nb):
        for k in range(n):
            s = q.apply_ry(s, k, ang[b * n + k])
        for k in range(n - 1):
            s = q.apply_cnot(s, k, k + 1)
    p = s.probabilities()
    z = 1 - 2 * q.basis_bits(n)
    expect, _ = q.run_qcml(q.QcmlCircuit(n, nb, x, ang))
    np.testing.assert_allclose(expect, p @ z, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_qcml_gradient_vs_fd(seed):
    rng = np.random.default_rng(seed)
    n, nb = 4, 2
    x, ang = rng.uniform(-2, 2, n), rng.uniform(-np.pi, np.pi, n * nb)
    _, vjp = q.run_qcml(q.QcmlCircuit(n, nb, x, ang))
    gx, ga = vjp(np.ones(n))
    fa = dc.finite_diff_gradient(lambda a: float(q.run_qcml(q.QcmlCircuit(n, nb, x, a))[0].sum()), ang)
    fx = dc.finite_diff_gradient(lambda v: float(q.run_qcml(q.QcmlCircuit(n, nb, v, ang))[0].sum()), x)
    assert dc.relative_error(ga, fa) <= 1e-6
    assert dc.relative_error(gx, fx) <= 1e-6


def test_qcml_batched_equals_single():
    rng = np.random.default_rng(3)
    X, ang = rng.standard_normal((5, 3)), rng.standard_normal(6)
    batch, vjp = q.run_qcml(q.QcmlCircuit(3, 2, X, ang))
    up = rng.standard_normal((5, 3))
    gx, ga = vjp(up)
    ga_sum = np.zeros(6)
    for i in range(5):
        e, v = q.run_qcml(q.QcmlCircuit(3, 2, X[i], ang))
        np.testing.assert_allclose(batch[i], e, atol=1e-14)
        gxi, gai = v(up[i])
        np.testing.assert_allclose(gx[i], gxi, atol=1e-13)
        ga_sum += gai
    np.testing.assert_allclose(ga, ga_sum, atol=1e-12)


# ---------------------------------------------------------------- sampling

def test_sampling_trivial():
    p = np.zeros(8)
    p[0] = 1
    assert q.sample_counts(p, 1000, 0)[0] == 1000
    one = q.sample_counts(np.full(4, 0.25), 1, 5)
    assert one.sum() == 1 and np.count_nonzero(one) == 1


def test_sampling_deterministic():
    p = q.run_qt_ansatz(q.QtAnsatz(3, 1, [0.3, 1.0, 2.0]))
    np.testing.assert_array_equal(q.sample_counts(p, 500, 7), q.sample_counts(p, 500, 7))


def test_sampling_calibrated():
    # per-outcome 3-sigma excursions should be rare; the exact binomial tail is ~0.3%
    n, hits, total = 10 ** 6, 0, 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = q.run_qt_ansatz(q.QtAnsatz(6, 2, rng.uniform(-np.pi, np.pi, 12)))
        counts = q.sample_counts(p, n, 1000 + seed)
        assert counts.sum() == n
        hits += int(np.sum(np.abs(counts / n - p) > 3 * np.sqrt(p * (1 - p) / n)))
        total += p.size
    assert hits / total <= 0.01
