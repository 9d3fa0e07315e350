"""On-disk formats. Binary files are little-endian.

Matrix file (labels, checkpoint tensors)::

    magic "JLMX" | u16 version | u8 mode | u8 reserved | u64 n | u64 c | i64 epoch
    n*c float64, row-major

    mode: 0 = raw matrix, 1 = hard labels, 2 = soft labels

Dataset file::

    magic "JLDS" | u16 version | u16 flags | u64 n | u64 d | u64 c
    | u64 n_train | u64 n_val | u64 n_test
    n*d float64 features, row-major, samples ordered train, val, test
    if flags & 1: n uint32 ground-truth labels, then n uint32 noisy labels

Metrics file: CSV with the header in METRICS_COLUMNS, one row per epoch,
floats written with ``repr`` so they parse back bit-exactly; empty cells
mean "not available".

Key-value text (configs, summaries, status): ``key = value`` per line,
``#`` starts a comment.
"""

from __future__ import annotations

import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, StorageError
from .labels import HARD, SOFT
from .noise import TEST, TRAIN, VAL, LabeledDataset
from .trainer import MetricsRecord

MATRIX_MAGIC = b"JLMX"
DATASET_MAGIC = b"JLDS"
VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sHBBQQq")
_DATASET_HEADER = struct.Struct("<4sHHQQQQQQ")
_MODES = {None: 0, HARD: 1, SOFT: 2}
_MODE_NAMES = {v: k for k, v in _MODES.items()}

METRICS_COLUMNS = ("epoch", "l_c", "l_p", "l_e", "total", "val_acc", "test_acc", "recovery_acc", "labels_changed")


def _read(path):
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e.strerror}") from e


def _write_atomic(path, data: bytes | str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            tmp.write_text(data)
        else:
            tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e.strerror}") from e


# ------------------------------------------------------------ matrices


def write_matrix(path, matrix, mode=None, epoch=-1):
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ContractError("matrix files hold 2-d arrays")
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, VERSION, _MODES[mode], 0, m.shape[0], m.shape[1], int(epoch))
    _write_atomic(path, header + np.ascontiguousarray(m).tobytes())


def read_matrix(path):
    """Returns ``(matrix, mode, epoch)``."""
    raw = _read(path)
    if len(raw) < _MATRIX_HEADER.size:
        raise StorageError(f"{path}: truncated matrix header")
    magic, version, mode, _, n, c, epoch = _MATRIX_HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC or version != VERSION:
        raise StorageError(f"{path}: not a matrix file")
    body = raw[_MATRIX_HEADER.size :]
    if len(body) != 8 * n * c:
        raise StorageError(f"{path}: expected {n}x{c} values, found {len(body) // 8}")
    m = np.frombuffer(body, dtype="<f8").reshape(n, c).astype(np.float64)
    return m, _MODE_NAMES.get(mode), epoch


# ------------------------------------------------------------ datasets


def write_dataset(path, dataset: LabeledDataset, with_labels=True):
    order = np.argsort(dataset.split, kind="stable")
    n, d = dataset.features.reshape(len(dataset.features), -1).shape
    counts = dataset.counts
    header = _DATASET_HEADER.pack(DATASET_MAGIC, VERSION, 1 if with_labels else 0, n, d, dataset.classes, *counts)
    parts = [header, np.ascontiguousarray(dataset.features.reshape(n, d)[order], dtype="<f8").tobytes()]
    if with_labels:
        parts.append(dataset.truth[order].astype("<u4").tobytes())
        parts.append(dataset.noisy[order].astype("<u4").tobytes())
    _write_atomic(path, b"".join(parts))


def read_dataset(path) -> LabeledDataset:
    """Load a dataset file; a features-only file gets all-zero placeholder labels."""
    raw = _read(path)
    if len(raw) < _DATASET_HEADER.size:
        raise StorageError(f"{path}: truncated dataset header")
    magic, version, flags, n, d, c, n_train, n_val, n_test = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC or version != VERSION:
        raise StorageError(f"{path}: not a dataset file")
    if n_train + n_val + n_test != n:
        raise StorageError(f"{path}: split counts do not add up to {n}")
    has_labels = bool(flags & 1)
    expected = 8 * n * d + (8 * n if has_labels else 0)
    body = raw[_DATASET_HEADER.size :]
    if len(body) != expected:
        raise StorageError(f"{path}: body is {len(body)} bytes, expected {expected}")
    features = np.frombuffer(body, dtype="<f8", count=n * d).reshape(n, d).astype(np.float64)
    if has_labels:
        off = 8 * n * d
        truth = np.frombuffer(body, dtype="<u4", count=n, offset=off).astype(np.int64)
        noisy = np.frombuffer(body, dtype="<u4", count=n, offset=off + 4 * n).astype(np.int64)
    else:
        truth = noisy = np.zeros(n, dtype=np.int64)
    split = np.concatenate([np.full(n_train, TRAIN), np.full(n_val, VAL), np.full(n_test, TEST)])
    return LabeledDataset(features, truth, noisy, split, max(int(c), 1))


def dataset_has_labels(path) -> bool:
    raw = _read(path)[: _DATASET_HEADER.size]
    return bool(_DATASET_HEADER.unpack_from(raw)[2] & 1)


# ------------------------------------------------------------ metrics


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_header():
    return ",".join(METRICS_COLUMNS) + "\n"


def metrics_row(m: MetricsRecord):
    return ",".join(_fmt(getattr(m, col)) for col in METRICS_COLUMNS) + "\n"


def write_metrics(path, metrics):
    _write_atomic(path, metrics_header() + "".join(metrics_row(m) for m in metrics))


def append_metrics(path, record: MetricsRecord):
    path = Path(path)
    try:
        new = not path.exists()
        with path.open("a") as f:
            if new:
                f.write(metrics_header())
            f.write(metrics_row(record))
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e.strerror}") from e


def read_metrics(path) -> list[MetricsRecord]:
    text = _read(path).decode()
    lines = text.splitlines()
    if not lines or tuple(lines[0].split(",")) != METRICS_COLUMNS:
        raise StorageError(f"{path}: missing metrics header")
    out = []
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(METRICS_COLUMNS):
            raise StorageError(f"{path}: malformed row {line!r}")
        vals = {}
        for col, cell in zip(METRICS_COLUMNS, cells):
            if col in ("epoch", "labels_changed"):
                vals[col] = int(cell)
            else:
                vals[col] = None if cell == "" else float(cell)
        out.append(MetricsRecord(**vals))
    return out


# ------------------------------------------------------------ key = value


def format_kv(pairs) -> str:
    lines = []
    for k, v in pairs:
        if isinstance(v, float):
            v = "inf" if math.isinf(v) else repr(v)
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"


def parse_kv(text) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_kv(path, pairs):
    _write_atomic(path, format_kv(pairs))


def read_kv(path) -> dict[str, str]:
    return parse_kv(_read(path).decode())
