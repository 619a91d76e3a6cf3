"""Experiment configuration: flat ``key = value`` files with ``#`` comments."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

METHODS = ("qt", "classical", "qcml")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One training run.

    Only ``method``, ``dataset`` and ``architecture`` are mandatory. Fields
    left as None resolve per dataset/method in :meth:`resolved`:
    epochs/batch_size default to 50/128 (1000/1000 for cifar10), n_block to
    16 for qt and 13 for qcml, mapping_dims to (N+1, 4, 20, 4, 1)
    or (N+1, 40, 200, 40, 1) for cifar10.
    For qcml, ``architecture`` names the classical part-1 network.
    """
    method: str
    dataset: str
    architecture: str
    n_block: Optional[int] = None
    mapping_dims: Optional[tuple] = None
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    learning_rate: float = 1e-4
    seed: int = 0
    scale_mode: str = "raw"
    subset: Optional[int] = None          # stratified train subset size
    test_subset: Optional[int] = None     # stratified test subset size
    output_dir: str = "runs/out"
    qcml_qubits: int = 13
    synthetic_classes: Optional[int] = None  # default: architecture output width
    synthetic_train: int = 1000
    synthetic_test: int = 500
    theta_hist: bool = False
    wall_time: bool = True                # False writes 0 so metrics.csv is reproducible

    def resolved(self) -> "ExperimentConfig":
        cifar = self.dataset == "cifar10"
        upd = {}
        if self.epochs is None:
            upd["epochs"] = 1000 if cifar else 50
        if self.batch_size is None:
            upd["batch_size"] = 1000 if cifar else 128
        if self.n_block is None:
            upd["n_block"] = 13 if self.method == "qcml" else 16
        cfg = dataclasses.replace(self, **upd)
        cfg.validate()
        return cfg

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: must be one of {METHODS}, got {self.method!r}")
        for name in ("epochs", "batch_size", "n_block"):
            v = getattr(self, name)
            if v is not None and (v < (0 if name == "epochs" else 1)):
                raise ConfigError(f"{name}: out of range ({v})")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate: must be >= 0, got {self.learning_rate}")
        if self.scale_mode not in ("raw", "pow2"):
            raise ConfigError(f"scale_mode: must be raw or pow2, got {self.scale_mode!r}")
        for name in ("subset", "test_subset"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name}: must be positive")
        if self.mapping_dims is not None:
            d = self.mapping_dims
            if len(d) < 2 or d[-1] != 1 or any(x < 1 for x in d):
                raise ConfigError(f"mapping_dims: need positive dims ending in 1, got {d}")


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
MANDATORY = ("method", "dataset", "architecture")


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    if raw.lower() in ("none", "") and "Optional" in kind:
        return None
    try:
        if "tuple" in kind:
            return tuple(int(x) for x in raw.replace("(", "").replace(")", "").replace("-", ",").split(",") if x.strip())
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
        if "bool" in kind:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_pairs(lines, source="config") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{key}: unknown config key ({source}:{lineno})")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a config file and apply ``key=value`` overrides, then validate."""
    values = {}
    if path is not None:
        text = Path(path).read_text()
        values.update(parse_pairs(text.splitlines(), str(path)))
    values.update(parse_pairs(overrides, "override"))
    missing = [k for k in MANDATORY if k not in values]
    if missing:
        raise ConfigError(f"{missing[0]}: missing mandatory key")
    cfg = ExperimentConfig(**values)
    return cfg.resolved()


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
