"""Domain datasets, the binary dataset file format, and CSV export."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError, ContractError, LabelAccessError

DATASET_MAGIC = b"ABRDSET\n"
DATASET_FORMAT_VERSION = 1


class DomainDataset:
    """Inputs plus (optionally hidden) labels for one domain.

    A dataset opened with ``labels_visible=False`` still carries its labels in
    a separate evaluation section, but reading ``.labels`` raises
    :class:`LabelAccessError`. Use :meth:`evaluation_view` to get a readable copy.
    """

    def __init__(self, inputs, labels=None, extents=(12.0, 8.0), name="", labels_visible=True):
        self.inputs = np.ascontiguousarray(inputs, dtype=np.float32)
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.float64)
            if labels.ndim != 2 or len(labels) != len(self.inputs):
                raise ContractError(f"labels shape {labels.shape} does not match {len(self.inputs)} inputs")
        self._labels = labels
        self.extents = tuple(float(v) for v in extents)
        self.name = name
        self.labels_visible = labels_visible

    def __len__(self):
        return len(self.inputs)

    def __repr__(self):
        state = "labeled" if self.labels_visible and self.has_labels else "unlabeled"
        return f"DomainDataset({self.name!r}, n={len(self)}, shape={self.inputs.shape[1:]}, {state})"

    @property
    def has_labels(self):
        return self._labels is not None

    @property
    def labels(self):
        if self._labels is None:
            raise LabelAccessError(f"dataset {self.name!r} has no labels")
        if not self.labels_visible:
            raise LabelAccessError(f"labels of {self.name!r} are reserved for evaluation")
        return self._labels

    def evaluation_view(self):
        return DomainDataset(self.inputs, self._labels, self.extents, self.name, labels_visible=True)

    def unlabeled_view(self):
        return DomainDataset(self.inputs, self._labels, self.extents, self.name, labels_visible=False)

    def subset(self, idx):
        labels = None if self._labels is None else self._labels[idx]
        return DomainDataset(self.inputs[idx], labels, self.extents, self.name, self.labels_visible)


def save_dataset(ds: DomainDataset, path):
    """Write header JSON, the row-major float32 input block, then the label block."""
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "name": ds.name,
        "extents": list(ds.extents),
        "input_shape": list(ds.inputs.shape),
        "label_dim": None if ds._labels is None else int(ds._labels.shape[1]),
        "labels_visible": ds.labels_visible,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(ds.inputs.astype("<f4").tobytes())
        if ds._labels is not None:
            fh.write(ds._labels.astype("<f8").tobytes())


def load_dataset(path, labels_visible=None) -> DomainDataset:
    raw = Path(path).read_bytes()
    if not raw.startswith(DATASET_MAGIC):
        raise CheckpointError(f"{path}: not a dataset file")
    try:
        off = len(DATASET_MAGIC)
        (n,) = struct.unpack_from("<Q", raw, off)
        off += 8
        header = json.loads(raw[off:off + n].decode())
        off += n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != DATASET_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    shape = tuple(header["input_shape"])
    n_in = int(np.prod(shape))
    label_dim = header["label_dim"]
    n_lab = 0 if label_dim is None else shape[0] * label_dim
    if len(raw) != off + 4 * n_in + 8 * n_lab:
        raise CheckpointError(f"{path}: truncated or oversized data block")
    inputs = np.frombuffer(raw, dtype="<f4", count=n_in, offset=off).reshape(shape).copy()
    labels = None
    if label_dim is not None:
        labels = np.frombuffer(raw, dtype="<f8", count=n_lab, offset=off + 4 * n_in).reshape(shape[0], label_dim).copy()
    if labels_visible is None:
        labels_visible = header["labels_visible"]
    return DomainDataset(inputs.astype(np.float32), labels, header["extents"], header["name"], labels_visible)


def export_csv(ds: DomainDataset, path):
    """One row per sample: flattened inputs followed by labels when readable."""
    flat = ds.inputs.reshape(len(ds), -1)
    with_labels = ds.has_labels and ds.labels_visible
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [f"x{i}" for i in range(flat.shape[1])]
        if with_labels:
            cols += [f"y{i}" for i in range(ds._labels.shape[1])]
        w.writerow(cols)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in flat[i]]
            if with_labels:
                row += [repr(float(v)) for v in ds._labels[i]]
            w.writerow(row)
