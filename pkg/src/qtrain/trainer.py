"""Training loops (QT, classical, QCML), evaluation, reports and run outputs."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from .config import ConfigError, ExperimentConfig, dump_config
from .data import Dataset
from .evaluation import evaluate_model, load_data, loss_acc, n_classes
from .export import ModelExport, atomic_write, encode_export, model_from_export
from .mapping import MappingModel, generate_weights, mapping_param_count, required_qubits
from .models import (ArchitectureSpec, forward, forward_graph, get_spec, init_theta, inject,
                     inject_graph, param_count, qcml_part2_spec)
from .quantum import QcmlCircuit, QtAnsatz, run_qcml

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,train_loss,test_loss,train_acc,test_acc,gen_error,wall_time_s"
DATASET_SIZES = {"mnist": 60000, "fashion_mnist": 60000, "cifar10": 50000}


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, step: int, norm: float, params=None):
        super().__init__(f"non-finite loss/gradient at epoch {epoch}, step {step} (param norm {norm:.6g})")
        self.epoch, self.step, self.norm, self.params = epoch, step, norm, params


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    gen_error: float
    wall_time: float

    def csv_row(self) -> str:
        vals = [self.train_loss, self.test_loss, self.train_acc, self.test_acc, self.gen_error, self.wall_time]
        return ",".join([str(self.epoch)] + [repr(float(v)) for v in vals])


def metrics_csv(records) -> str:
    return "\n".join([METRICS_HEADER] + [r.csv_row() for r in records]) + "\n"


def read_metrics_csv(path) -> list[MetricsRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    out = []
    for line in lines[1:]:
        e, *vals = line.split(",")
        out.append(MetricsRecord(int(e), *(float(v) for v in vals)))
    return out


def generalization_error(train_loss: float, test_loss: float) -> float:
    """Held-out loss minus training loss."""
    if not (math.isfinite(train_loss) and math.isfinite(test_loss)):
        raise ValueError("losses must be finite")
    return test_loss - train_loss


# ---------------------------------------------------------------- parameter accounting

def qt_param_count(N: int, n_block: int, mapping_dims) -> int:
    return N * n_block + mapping_param_count(mapping_dims)


def default_mapping_dims(N: int, dataset: str = "mnist") -> tuple[int, ...]:
    """Small mapping for the MNIST-family nets, a wider one for cifar10."""
    if dataset == "cifar10":
        return (N + 1, 40, 200, 40, 1)
    return (N + 1, 4, 20, 4, 1)


@dataclass
class ParamReport:
    method: str
    architecture: str
    M: int
    trainable: int
    n_train: int
    breakdown: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.trainable / self.M

    @property
    def over_parameterized(self) -> bool:
        return self.trainable > self.n_train

    def text(self) -> str:
        lines = [f"method: {self.method}", f"architecture: {self.architecture}",
                 f"target_params_M: {self.M}", f"trainable_params: {self.trainable}"]
        lines += [f"  {k}: {v}" for k, v in self.breakdown.items()]
        lines += [f"param_ratio: {self.ratio:.6f}", f"n_train: {self.n_train}",
                  f"over_parameterized: {self.over_parameterized}"]
        return "\n".join(lines) + "\n"


def _qt_dims(cfg: ExperimentConfig, M: int):
    N = required_qubits(M)
    dims = tuple(cfg.mapping_dims) if cfg.mapping_dims else default_mapping_dims(N, cfg.dataset)
    if dims[0] != N + 1:
        raise ConfigError(f"mapping_dims: first entry must be N+1 = {N + 1} for M = {M}, got {dims[0]}")
    return N, dims


def _qcml_parts(cfg: ExperimentConfig):
    part1 = get_spec(cfg.architecture)
    if part1.n_outputs != cfg.qcml_qubits:
        raise ConfigError(f"architecture: part-1 output width {part1.n_outputs} != qcml_qubits {cfg.qcml_qubits}")
    return part1, qcml_part2_spec(cfg.qcml_qubits, n_classes(cfg))


def param_report(cfg: ExperimentConfig, n_train: int | None = None) -> ParamReport:
    if n_train is None:
        if cfg.dataset == "synthetic":
            n_train = cfg.synthetic_train
        else:
            n_train = cfg.subset or DATASET_SIZES.get(cfg.dataset, 0)
    try:
        if cfg.method == "qcml":
            part1, part2 = _qcml_parts(cfg)
            m1, m2 = param_count(part1), param_count(part2)
            circ = cfg.qcml_qubits * cfg.n_block
            total = m1 + circ + m2
            return ParamReport("qcml", cfg.architecture, total, total, n_train,
                               {"part1": m1, "circuit": circ, "part2": m2})
        spec = get_spec(cfg.architecture)
    except ValueError as e:
        raise ConfigError(f"architecture: {e}") from None
    M = param_count(spec)
    if cfg.method == "classical":
        return ParamReport("classical", spec.name, M, M, n_train)
    N, dims = _qt_dims(cfg, M)
    return ParamReport("qt", spec.name, M, qt_param_count(N, cfg.n_block, dims), n_train,
                       {"qubits": N, "n_block": cfg.n_block, "circuit": N * cfg.n_block,
                        "mapping": mapping_param_count(dims), "mapping_dims": "-".join(map(str, dims))})


# ---------------------------------------------------------------- evaluation

def qcml_logits(exp: ModelExport, images, chunk: int = 256) -> np.ndarray:
    """Inference for a QCML export; this path needs the circuit simulator."""
    _, p1_name, shape, p2_name = exp.architecture.split(":")
    nq, nb = (int(v) for v in shape.split("x"))
    part1, part2 = get_spec(p1_name), get_spec(p2_name)
    params = exp.theta.astype(np.float64)
    return _qcml_predict(part1, part2, nq, nb, params, np.asarray(images, dtype=np.float64), chunk)


def evaluate(model, dataset: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy over a dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if isinstance(model, ModelExport):
        if model.architecture.startswith("qcml:"):
            return loss_acc(qcml_logits(model, dataset.images), dataset.labels)
        model = model_from_export(model)
    return evaluate_model(model, dataset)


# ---------------------------------------------------------------- run result

@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: list[MetricsRecord]
    export: ModelExport
    theta: np.ndarray            # float64 final target weights (pre-export)
    params: np.ndarray           # final trainable vector
    report: ParamReport
    initial: tuple[float, float]  # (train loss, train acc) before the first step
    extras: dict = field(default_factory=dict)


def _seeds(seed: int):
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def _fit(cfg: ExperimentConfig, params: np.ndarray,
         loss_grad: Callable, logits_fn: Callable, train: Dataset, test: Dataset):
    """Shared Adam loop: shuffle per epoch, keep the last partial batch, eval per epoch."""
    _, shuffle_rng = _seeds(cfg.seed)
    state = dc.AdamState.zeros(params.size)

    def ev(p, ds):
        return loss_acc(logits_fn(p, ds.images), ds.labels)

    initial = ev(params, train)
    log.info("initial train loss %.6f acc %.4f", *initial)
    records = []
    t0 = time.perf_counter()
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            loss, grad = loss_grad(params, train.images[idx], train.labels[idx])
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise DivergenceError(epoch, step, float(np.linalg.norm(params)), params.copy())
            params, state = dc.adam_step(params, grad, state, cfg.learning_rate)
        tr, te = ev(params, train), ev(params, test)
        wall = time.perf_counter() - t0 if cfg.wall_time else 0.0
        rec = MetricsRecord(epoch, tr[0], te[0], tr[1], te[1], generalization_error(tr[0], te[0]), wall)
        log.info("epoch %d train %.5f/%.4f test %.5f/%.4f", epoch, tr[0], tr[1], te[0], te[1])
        records.append(rec)
    return params, records, initial


def _provenance(cfg: ExperimentConfig, records, report: ParamReport) -> dict:
    prov = {"method": cfg.method, "dataset": cfg.dataset, "n_block": cfg.n_block, "seed": cfg.seed,
            "epochs": cfg.epochs, "trainable_params": report.trainable}
    if records:
        last = records[-1]
        prov["final"] = {k: v for k, v in asdict(last).items() if k != "wall_time"}
    return prov


# ---------------------------------------------------------------- QT

class QtGenerator:
    """theta = G_gamma(bits, p(phi)) for a fixed target architecture."""

    def __init__(self, spec: ArchitectureSpec, N: int, n_block: int, dims, scale_mode: str):
        self.spec, self.N, self.n_block, self.dims = spec, N, n_block, tuple(dims)
        self.M = param_count(spec)
        self.scale_mode = scale_mode
        self.n_phi = N * n_block

    def split(self, params):
        return params[:self.n_phi], params[self.n_phi:]

    def generate(self, params):
        phi, gamma = self.split(params)
        return generate_weights(QtAnsatz(self.N, self.n_block, phi), MappingModel(self.dims, gamma),
                                self.M, self.scale_mode)

    def theta(self, params) -> np.ndarray:
        return self.generate(params)[0]

    def loss_grad(self, params, xb, yb):
        theta, closure = self.generate(params)
        th = dc.tensor(theta, requires_grad=True)
        logits = forward_graph(self.spec, inject_graph(th, self.spec), dc.tensor(xb))
        loss = dc.softmax_cross_entropy(logits, yb)
        dc.backward(loss)
        g_phi, g_gamma = closure(th.grad)
        return float(loss.data), np.concatenate([g_phi, g_gamma])

    def logits(self, params, images):
        return forward(inject(self.theta(params), self.spec), images)


def qt_setup(cfg: ExperimentConfig):
    spec = get_spec(cfg.architecture)
    N, dims = _qt_dims(cfg, param_count(spec))
    gen = QtGenerator(spec, N, cfg.n_block, dims, cfg.scale_mode)
    init_rng, _ = _seeds(cfg.seed)
    phi = init_rng.uniform(-np.pi, np.pi, gen.n_phi)
    gamma = MappingModel.init(dims, init_rng).gamma
    return gen, np.concatenate([phi, gamma])


def train_qt(cfg: ExperimentConfig, train: Dataset, test: Dataset) -> RunResult:
    cfg = cfg.resolved()
    gen, params = qt_setup(cfg)
    report = param_report(cfg, len(train))
    params, records, initial = _fit(cfg, params, gen.loss_grad, gen.logits, train, test)
    theta = gen.theta(params)
    exp = ModelExport(gen.spec.name, theta.astype("<f4"), _provenance(cfg, records, report))
    phi, gamma = gen.split(params)
    return RunResult(cfg, records, exp, theta, params, report, initial,
                     {"phi": phi.copy(), "gamma": gamma.copy(), "generator": gen})


# ---------------------------------------------------------------- classical

def train_classical(cfg: ExperimentConfig, train: Dataset, test: Dataset) -> RunResult:
    cfg = cfg.resolved()
    spec = get_spec(cfg.architecture)
    init_rng, _ = _seeds(cfg.seed)
    params = init_theta(spec, init_rng)

    def loss_grad(theta, xb, yb):
        th = dc.tensor(theta, requires_grad=True)
        loss = dc.softmax_cross_entropy(forward_graph(spec, inject_graph(th, spec), dc.tensor(xb)), yb)
        dc.backward(loss)
        return float(loss.data), th.grad

    def logits(theta, images):
        return forward(inject(theta, spec), images)

    report = param_report(cfg, len(train))
    params, records, initial = _fit(cfg, params, loss_grad, logits, train, test)
    exp = ModelExport(spec.name, params.astype("<f4"), _provenance(cfg, records, report))
    return RunResult(cfg, records, exp, params.copy(), params, report, initial)


# ---------------------------------------------------------------- QCML

def _qcml_graph(part1, part2, nq, nb, params: dc.Tensor, x: dc.Tensor) -> dc.Tensor:
    m1, n_ang = param_count(part1), nq * nb
    t1 = dc.take(params, 0, m1)
    ang = dc.take(params, m1, m1 + n_ang)
    t2 = dc.take(params, m1 + n_ang, params.shape[0])
    feats = forward_graph(part1, inject_graph(t1, part1), x)
    expect, vjp = run_qcml(QcmlCircuit(nq, nb, feats.data, ang.data))
    z = dc.custom([feats, ang], expect, vjp)
    return forward_graph(part2, inject_graph(t2, part2), z)


def _qcml_predict(part1, part2, nq, nb, params, images, chunk=256) -> np.ndarray:
    p = dc.tensor(params)
    outs = [_qcml_graph(part1, part2, nq, nb, p, dc.tensor(images[i:i + chunk])).data
            for i in range(0, len(images), chunk)]
    return np.concatenate(outs) if outs else np.zeros((0, part2.n_outputs))


def qcml_setup(cfg: ExperimentConfig):
    part1, part2 = _qcml_parts(cfg)
    init_rng, _ = _seeds(cfg.seed)
    params = np.concatenate([init_theta(part1, init_rng),
                             init_rng.uniform(-np.pi, np.pi, cfg.qcml_qubits * cfg.n_block),
                             init_theta(part2, init_rng)])
    return part1, part2, params


def train_qcml(cfg: ExperimentConfig, train: Dataset, test: Dataset) -> RunResult:
    cfg = cfg.resolved()
    part1, part2, params = qcml_setup(cfg)
    nq, nb = cfg.qcml_qubits, cfg.n_block

    def loss_grad(p, xb, yb):
        pt = dc.tensor(p, requires_grad=True)
        loss = dc.softmax_cross_entropy(_qcml_graph(part1, part2, nq, nb, pt, dc.tensor(xb)), yb)
        dc.backward(loss)
        return float(loss.data), pt.grad

    def logits(p, images):
        return _qcml_predict(part1, part2, nq, nb, p, images)

    report = param_report(cfg, len(train))
    params, records, initial = _fit(cfg, params, loss_grad, logits, train, test)
    arch = f"qcml:{part1.name}:{nq}x{nb}:{part2.name}"
    exp = ModelExport(arch, params.astype("<f4"), _provenance(cfg, records, report))
    return RunResult(cfg, records, exp, params.copy(), params, report, initial)


TRAINERS = {"qt": train_qt, "classical": train_classical, "qcml": train_qcml}


# ---------------------------------------------------------------- outputs

def theta_histogram(theta, bins: int = 64) -> str:
    counts, edges = np.histogram(np.asarray(theta, dtype=np.float64), bins=bins)
    rows = ["bin_left,bin_right,count"]
    rows += [f"{edges[i]!r},{edges[i + 1]!r},{int(c)}" for i, c in enumerate(counts)]
    return "\n".join(rows) + "\n"


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "metrics.csv", metrics_csv(result.metrics))
    atomic_write(out / "model.qtmd", encode_export(result.export))
    text = result.report.text()
    text += f"initial_train_loss: {result.initial[0]!r}\ninitial_train_acc: {result.initial[1]!r}\n"
    if result.metrics:
        last = result.metrics[-1]
        text += (f"final_train_loss: {last.train_loss!r}\nfinal_test_loss: {last.test_loss!r}\n"
                 f"final_train_acc: {last.train_acc!r}\nfinal_test_acc: {last.test_acc!r}\n"
                 f"final_gen_error: {last.gen_error!r}\n")
    atomic_write(out / "report.txt", text)
    atomic_write(out / "config.txt", dump_config(result.config))
    if result.config.theta_hist:
        atomic_write(out / "theta_hist.csv", theta_histogram(result.theta))
    return out


def dump_divergence(err: DivergenceError, out_dir) -> Path:
    """Write the offending parameter vector and a short diagnostic next to the run outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "divergence.txt", f"{err}\nepoch: {err.epoch}\nstep: {err.step}\nparam_norm: {err.norm!r}\n")
    if err.params is not None:
        atomic_write(out / "divergence_params.txt", "\n".join(repr(float(v)) for v in err.params) + "\n")
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, data_root=None) -> RunResult:
    cfg = cfg.resolved()
    out_dir = out_dir or cfg.output_dir
    train, test = load_data(cfg, data_root)
    try:
        result = TRAINERS[cfg.method](cfg, train, test)
    except DivergenceError as err:
        dump_divergence(err, out_dir)
        raise
    write_outputs(result, out_dir)
    return result
