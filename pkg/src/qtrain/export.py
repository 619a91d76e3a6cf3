"""Quantum-free model export (``.qtmd``) and import.

Binary layout, all integers little-endian::

    b"QTMD" | version u16 | arch-id (u32 length + UTF-8) | M u64
    | theta as M float32 | provenance (u32 length + UTF-8 JSON) | crc32 u32

The checksum covers every preceding byte. This module must not import the
quantum simulator: exported classical models are usable without it.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import TargetModel, get_spec, inject, param_count

MAGIC = b"QTMD"
VERSION = 1


class ExportError(ValueError):
    pass


@dataclass
class ModelExport:
    architecture: str
    theta: np.ndarray  # float32
    provenance: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def M(self) -> int:
        return int(self.theta.shape[0])


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_export(exp: ModelExport) -> bytes:
    theta = np.asarray(exp.theta, dtype="<f4")
    arch = exp.architecture.encode()
    prov = json.dumps(exp.provenance, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join([
        MAGIC,
        struct.pack("<H", exp.version),
        struct.pack("<I", len(arch)), arch,
        struct.pack("<Q", theta.shape[0]),
        theta.tobytes(),
        struct.pack("<I", len(prov)), prov,
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def decode_export(buf: bytes) -> ModelExport:
    if len(buf) < 4 + 2 + 4 + 8 + 4 + 4 or buf[:4] != MAGIC:
        raise ExportError("not a QTMD export (bad magic or too short)")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ExportError("checksum mismatch")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise ExportError(f"unsupported export version {version}")
    off = 6
    try:
        (alen,) = struct.unpack_from("<I", buf, off)
        off += 4
        arch = buf[off:off + alen].decode()
        off += alen
        (M,) = struct.unpack_from("<Q", buf, off)
        off += 8
        theta = np.frombuffer(buf, dtype="<f4", count=M, offset=off).copy()
        off += 4 * M
        (plen,) = struct.unpack_from("<I", buf, off)
        off += 4
        prov = json.loads(buf[off:off + plen].decode())
        off += plen
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise ExportError(f"malformed export at byte {off}: {e}") from None
    if off != len(buf) - 4:
        raise ExportError(f"trailing bytes after provenance at byte {off}")
    return ModelExport(arch, theta, prov, version)


def save_export(exp: ModelExport, path):
    atomic_write(path, encode_export(exp))


def read_export(path) -> ModelExport:
    return decode_export(Path(path).read_bytes())


def export_model(theta, spec, provenance: dict, path) -> ModelExport:
    theta = np.asarray(theta, dtype=np.float64)
    M = param_count(spec)
    if theta.shape != (M,):
        raise ExportError(f"theta has {theta.shape[0]} entries, {spec.name} needs {M}")
    exp = ModelExport(spec.name, theta.astype("<f4"), dict(provenance))
    save_export(exp, path)
    return exp


def model_from_export(exp: ModelExport, architecture: str | None = None) -> TargetModel:
    if architecture is not None and architecture != exp.architecture:
        raise ExportError(f"export is for {exp.architecture!r}, expected {architecture!r}")
    if exp.architecture.startswith("qcml:"):
        raise ExportError("QCML exports need the quantum circuit at inference; use trainer.qcml_logits")
    try:
        spec = get_spec(exp.architecture)
    except ValueError as e:
        raise ExportError(str(e)) from None
    if exp.M != param_count(spec):
        raise ExportError(f"export holds {exp.M} parameters, {spec.name} needs {param_count(spec)}")
    return inject(exp.theta.astype(np.float64), spec)


def import_model(path, architecture: str | None = None) -> TargetModel:
    """Load an exported classical model; never touches the quantum module."""
    return model_from_export(read_export(path), architecture)
