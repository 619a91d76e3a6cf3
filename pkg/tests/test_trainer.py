import dataclasses
import math

import numpy as np
import pytest

from qtrain import diffcore as dc
from qtrain.config import ConfigError, ExperimentConfig
from qtrain.data import Dataset, synthetic
from qtrain.evaluation import evaluate_model
from qtrain.export import (ExportError, ModelExport, decode_export, encode_export, import_model,
                           model_from_export, read_export)
from qtrain.models import forward, get_spec, inject
from qtrain.trainer import (METRICS_HEADER, DivergenceError, QtGenerator, _fit, _qcml_graph, evaluate,
                            generalization_error, param_report, qcml_setup, qt_param_count, qt_setup,
                            read_metrics_csv, run_experiment, theta_histogram, train_classical, train_qcml,
                            train_qt)

MNIST_ROWS = {16: 457, 31: 652, 46: 847, 61: 1042, 76: 1237, 91: 1432, 106: 1627, 121: 1822}
CIFAR_ROWS = {19: 17482, 95: 18926, 171: 20370, 247: 21814, 323: 23258}


def toy_cfg(**kw):
    base = dict(method="qt", dataset="synthetic", architecture="toy_mlp_32", n_block=2, epochs=2,
                batch_size=32, learning_rate=1e-2, synthetic_train=64, synthetic_test=32, wall_time=False)
    base.update(kw)
    return ExperimentConfig(**base).resolved()


def toy_data(cfg):
    from qtrain.evaluation import load_data
    return load_data(cfg)


# ---------------------------------------------------------------- parameter accounting

@pytest.mark.parametrize("nb,count", sorted(MNIST_ROWS.items()))
def test_mnist_rows(nb, count):
    assert qt_param_count(13, nb, (14, 4, 20, 4, 1)) == count
    cfg = ExperimentConfig("qt", "mnist", "mnist_cnn", n_block=nb).resolved()
    assert param_report(cfg).trainable == count


@pytest.mark.parametrize("nb,count", sorted(CIFAR_ROWS.items()))
def test_cifar_rows(nb, count):
    assert qt_param_count(19, nb, (20, 40, 200, 40, 1)) == count
    cfg = ExperimentConfig("qt", "cifar10", "cifar_cnn", n_block=nb).resolved()
    assert param_report(cfg).trainable == count


@pytest.mark.parametrize("nb", [1, 16, 50])
def test_linear_growth_in_blocks(nb):
    dims = (14, 4, 20, 4, 1)
    assert qt_param_count(13, nb + 1, dims) - qt_param_count(13, nb, dims) == 13


def test_param_report_fields():
    rep = param_report(ExperimentConfig("qt", "mnist", "mnist_cnn").resolved())
    assert rep.ratio == pytest.approx(457 / 6690) and round(rep.ratio, 4) == 0.0683
    assert not rep.over_parameterized and rep.n_train == 60000
    assert param_report(ExperimentConfig("classical", "mnist", "mnist_cnn").resolved()).trainable == 6690
    small = param_report(ExperimentConfig("qt", "mnist", "mnist_cnn", subset=400).resolved())
    assert small.over_parameterized


def test_qcml_counts():
    rep = param_report(ExperimentConfig("qcml", "mnist", "qcml_mnist_part1").resolved())
    assert rep.breakdown == {"part1": 4693, "circuit": 169, "part2": 140}
    assert rep.trainable == 5002
    rep = param_report(ExperimentConfig("qcml", "cifar10", "qcml_cifar_part1").resolved())
    assert rep.trainable == 146286


def test_bad_mapping_dims():
    with pytest.raises(ConfigError, match="mapping_dims"):
        param_report(ExperimentConfig("qt", "mnist", "mnist_cnn", mapping_dims=(10, 4, 1)).resolved())


def test_qcml_width_mismatch():
    with pytest.raises(ConfigError):
        param_report(ExperimentConfig("qcml", "mnist", "mnist_cnn").resolved())


# ---------------------------------------------------------------- training loops

def test_lr_zero_keeps_everything():
    cfg = toy_cfg(learning_rate=0.0, epochs=3)
    train, test = toy_data(cfg)
    res = train_qt(cfg, train, test)
    gen, params0 = qt_setup(cfg)
    assert res.params.tobytes() == params0.tobytes()
    assert res.theta.tobytes() == gen.theta(params0).tobytes()
    rows = [(m.train_loss, m.test_loss, m.train_acc, m.test_acc) for m in res.metrics]
    assert len(set(rows)) == 1 and rows[0][0] == res.initial[0]


def test_classical_lr_zero_constant():
    cfg = toy_cfg(method="classical", learning_rate=0.0, epochs=2)
    train, test = toy_data(cfg)
    res = train_classical(cfg, train, test)
    assert res.metrics[0].train_loss == res.metrics[1].train_loss == res.initial[0]


def test_determinism_bitwise(tmp_path):
    cfg = toy_cfg(epochs=2)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("metrics.csv", "model.qtmd", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_run(tmp_path):
    run_experiment(toy_cfg(seed=1), tmp_path / "a")
    run_experiment(toy_cfg(seed=2), tmp_path / "b")
    assert (tmp_path / "a" / "model.qtmd").read_bytes() != (tmp_path / "b" / "model.qtmd").read_bytes()


def test_toy_qt_halves_loss():
    cfg = ExperimentConfig("qt", "synthetic", "toy_mlp_178", n_block=4, epochs=30, learning_rate=1e-3,
                           synthetic_train=1000, synthetic_test=300, wall_time=False).resolved()
    train, test = toy_data(cfg)
    res = train_qt(cfg, train, test)
    assert res.report.breakdown["qubits"] == 8
    assert res.metrics[-1].train_loss < 0.5 * res.initial[0]


def test_theta_is_pure_function_of_phi_gamma():
    cfg = toy_cfg(epochs=1)
    train, _ = toy_data(cfg)
    gen, params = qt_setup(cfg)
    state = dc.AdamState.zeros(params.size)
    for start in range(0, 64, 16):
        _, grad = gen.loss_grad(params, train.images[start:start + 16], train.labels[start:start + 16])
        params, state = dc.adam_step(params, grad, state, 1e-2)
        phi, gamma = gen.split(params)
        fresh = QtGenerator(gen.spec, gen.N, gen.n_block, gen.dims, gen.scale_mode)
        assert fresh.theta(np.concatenate([phi, gamma])).tobytes() == gen.theta(params).tobytes()


def test_run_result_theta_matches_params():
    cfg = toy_cfg()
    train, test = toy_data(cfg)
    res = train_qt(cfg, train, test)
    assert res.theta.tobytes() == res.extras["generator"].theta(res.params).tobytes()
    assert res.export.theta.tobytes() == res.theta.astype("<f4").tobytes()


def test_gen_error_exact_per_row():
    cfg = toy_cfg(epochs=3)
    res = train_qt(cfg, *toy_data(cfg))
    for m in res.metrics:
        assert m.gen_error == m.test_loss - m.train_loss
    assert generalization_error(0.3, 0.5) == pytest.approx(0.2)
    assert generalization_error(0.4, 0.4) == 0
    with pytest.raises(ValueError):
        generalization_error(math.nan, 1.0)


def test_divergence_aborts_with_diagnostic():
    cfg = toy_cfg()
    train, test = toy_data(cfg)

    def bad(params, xb, yb):
        return math.nan, np.zeros_like(params)

    with pytest.raises(DivergenceError) as info:
        _fit(cfg, np.ones(3), bad, lambda p, x: np.zeros((len(x), 2)), train, test)
    assert info.value.epoch == 1 and info.value.step == 0
    assert info.value.norm == pytest.approx(math.sqrt(3))


# ---------------------------------------------------------------- QCML

def test_qcml_toy_gradient_vs_fd():
    cfg = ExperimentConfig("qcml", "synthetic", "toy_qcml_part1", qcml_qubits=4, n_block=2,
                           synthetic_classes=3).resolved()
    part1, part2, params = qcml_setup(cfg)
    ds = synthetic(8, 3, 0)

    def loss(p):
        return dc.softmax_cross_entropy(_qcml_graph(part1, part2, 4, 2, p, dc.tensor(ds.images)), ds.labels)

    t = dc.tensor(params, requires_grad=True)
    dc.backward(loss(t))
    fd = dc.finite_diff_gradient(lambda p: float(loss(dc.tensor(p)).data), params)
    assert dc.relative_error(t.grad, fd) <= 1e-4


def test_qcml_training_and_export(tmp_path):
    cfg = ExperimentConfig("qcml", "synthetic", "toy_qcml_part1", qcml_qubits=4, n_block=2, epochs=3,
                           batch_size=32, learning_rate=1e-2, synthetic_train=128, synthetic_test=64,
                           wall_time=False).resolved()
    res = run_experiment(cfg, tmp_path)
    assert res.report.breakdown == {"part1": 20, "circuit": 8, "part2": 20}
    exp = read_export(tmp_path / "model.qtmd")
    assert exp.architecture.startswith("qcml:")
    with pytest.raises(ExportError):
        model_from_export(exp)
    _, test = toy_data(cfg)
    loss, _ = evaluate(exp, test)
    assert abs(loss - res.metrics[-1].test_loss) <= 1e-5


# ---------------------------------------------------------------- evaluation

def test_zero_model_balanced():
    spec = get_spec("mnist_cnn")
    labels = np.repeat(np.arange(10), 3)
    ds = Dataset(np.random.default_rng(0).random((30, 1, 28, 28)), labels)
    loss, acc = evaluate(inject(np.zeros(6690), spec), ds)
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    assert acc == pytest.approx(0.1)


def test_empty_dataset_rejected():
    ds = Dataset(np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError):
        evaluate(inject(np.zeros(32), get_spec("toy_mlp_32")), ds)


def test_perfect_memorizer():
    # separable blobs: training long enough fits the training set exactly
    ds = synthetic(200, 2, 3)
    res = train_classical(toy_cfg(method="classical", epochs=30, synthetic_train=200), ds, ds)
    assert res.metrics[-1].train_acc == 1.0


def test_evaluate_export_equals_model():
    cfg = toy_cfg()
    train, test = toy_data(cfg)
    res = train_qt(cfg, train, test)
    exp = decode_export(encode_export(res.export))
    model32 = inject(res.export.theta.astype(np.float64), get_spec(cfg.architecture))
    assert evaluate(exp, test) == evaluate_model(model32, test)


# ---------------------------------------------------------------- export format

def test_export_roundtrip_bytes(tmp_path):
    cfg = toy_cfg()
    res = run_experiment(cfg, tmp_path)
    raw = (tmp_path / "model.qtmd").read_bytes()
    assert encode_export(read_export(tmp_path / "model.qtmd")) == raw
    model = import_model(tmp_path / "model.qtmd", "toy_mlp_32")
    _, test = toy_data(cfg)
    diff = np.abs(forward(model, test.images) - forward(inject(res.theta, model.spec), test.images))
    assert diff.max() <= 1e-5
    prov = read_export(tmp_path / "model.qtmd").provenance
    assert prov["method"] == "qt" and prov["seed"] == 0 and "final" in prov


def test_export_rejects_corruption(tmp_path):
    raw = bytearray(encode_export(ModelExport("toy_mlp_32", np.arange(32, dtype="<f4"), {"a": 1})))
    flipped = bytearray(raw)
    flipped[20] ^= 0xFF
    with pytest.raises(ExportError, match="checksum"):
        decode_export(bytes(flipped))
    with pytest.raises(ExportError):
        decode_export(bytes(raw[:-5]))
    with pytest.raises(ExportError, match="magic"):
        decode_export(b"XXXX" + bytes(raw[4:]))
    v2 = ModelExport("toy_mlp_32", np.zeros(32, "<f4"), {}, version=2)
    with pytest.raises(ExportError, match="version"):
        decode_export(encode_export(v2))


def test_export_architecture_mismatch():
    exp = ModelExport("toy_mlp_32", np.zeros(32, "<f4"))
    with pytest.raises(ExportError):
        model_from_export(exp, "toy_mlp_100")
    with pytest.raises(ExportError):
        model_from_export(ModelExport("toy_mlp_100", np.zeros(32, "<f4")))


def test_export_layout_little_endian():
    raw = encode_export(ModelExport("ab", np.array([1.0, -2.0], "<f4"), {}))
    assert raw[:4] == b"QTMD" and raw[4:6] == b"\x01\x00"
    assert raw[6:10] == b"\x02\x00\x00\x00" and raw[10:12] == b"ab"
    assert raw[12:20] == (2).to_bytes(8, "little")
    assert np.frombuffer(raw[20:28], "<f4").tolist() == [1.0, -2.0]


# ---------------------------------------------------------------- outputs

def test_outputs_and_hist(tmp_path):
    cfg = dataclasses.replace(toy_cfg(), theta_hist=True)
    res = run_experiment(cfg, tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == METRICS_HEADER and len(lines) == 1 + cfg.epochs
    assert read_metrics_csv(tmp_path / "metrics.csv") == res.metrics
    hist = (tmp_path / "theta_hist.csv").read_text().splitlines()
    assert len(hist) == 65 and sum(int(r.split(",")[2]) for r in hist[1:]) == 32
    assert "trainable_params" in (tmp_path / "report.txt").read_text()
    assert not list(tmp_path.glob("*.tmp"))


def test_histogram_bins():
    text = theta_histogram(np.linspace(-1, 1, 640))
    counts = [int(r.split(",")[2]) for r in text.splitlines()[1:]]
    assert len(counts) == 64 and sum(counts) == 640
