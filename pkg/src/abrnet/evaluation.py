"""Metrics, spatial error maps, lambda sweeps and report emission."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import ContractError
from .models import extract_features, forward_regressor

EVAL_HEADS = ("hat", "tilde", "mean")


def predict(bundle, inputs, head="mean", batch_size=2048):
    if head not in EVAL_HEADS:
        raise ContractError(f"head must be one of {EVAL_HEADS}, got {head!r}")
    x = torch.from_numpy(np.ascontiguousarray(inputs, dtype=np.float32))
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            f = extract_features(bundle, x[i:i + batch_size])
            if head == "mean":
                p = 0.5 * (forward_regressor(bundle, "hat", f).l + forward_regressor(bundle, "tilde", f).l)
            else:
                p = forward_regressor(bundle, head, f).l
            out.append(p.double().numpy())
    return np.concatenate(out) if out else np.zeros((0, bundle.config.label_dim))


def regression_metrics(predictions, labels):
    """(MSE, MAE), both averaged over samples and coordinates."""
    p, y = np.asarray(predictions, dtype=float), np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ContractError("empty evaluation set")
    err = p - y
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def evaluate(bundle, dataset, head="mean"):
    if len(dataset) == 0:
        raise ContractError("empty evaluation set")
    return regression_metrics(predict(bundle, dataset.inputs, head), dataset.labels)


@dataclass
class GridErrorMap:
    cell: float
    extents: tuple
    mse: np.ndarray  # [nx, ny]; NaN where empty
    counts: np.ndarray  # [nx, ny]

    @property
    def empty(self):
        return self.counts == 0

    def weighted_mean(self):
        filled = ~self.empty
        return float(np.sum(self.mse[filled] * self.counts[filled]) / np.sum(self.counts))


def grid_shape(extents, cell):
    return tuple(max(1, math.ceil(e / cell - 1e-9)) for e in extents[:2])


def grid_error_map(predictions, labels, extents, cell=0.5) -> GridErrorMap:
    """Bin per-sample squared error (mean over x, y) by the true label's cell."""
    p, y = np.asarray(predictions, dtype=float), np.asarray(labels, dtype=float)
    if p.shape != y.shape or p.ndim != 2 or p.shape[1] < 2:
        raise ContractError(f"expected matching [N, 2] arrays, got {p.shape} and {y.shape}")
    nx, ny = grid_shape(extents, cell)
    ix = np.floor(y[:, 0] / cell).astype(int)
    iy = np.floor(y[:, 1] / cell).astype(int)
    outside = (ix < 0) | (ix >= nx) | (iy < 0) | (iy >= ny)
    if outside.any():
        warnings.warn(f"{int(outside.sum())} labels outside the floor were assigned to boundary cells")
    ix, iy = np.clip(ix, 0, nx - 1), np.clip(iy, 0, ny - 1)
    flat = ix * ny + iy
    sq = np.mean((p - y) ** 2, axis=1)
    sums = np.bincount(flat, weights=sq, minlength=nx * ny)
    counts = np.bincount(flat, minlength=nx * ny)
    with np.errstate(invalid="ignore", divide="ignore"):
        mse = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return GridErrorMap(cell, tuple(extents), mse.reshape(nx, ny), counts.reshape(nx, ny))


DEFAULT_LAMBDAS = (0.55, 0.6, 0.7, 0.8, 0.9, 1.0)


def lambda_sweep(config, source, target, values=DEFAULT_LAMBDAS, model_config=None, csv_path=None,
                 head="mean", method="abrnet"):
    """Train once per mixing ratio and score on the target's evaluation view.

    Returns a list of ``(lam, target_mse, target_mae)`` rows.
    """
    from dataclasses import replace

    from .baselines import train_method

    rows = []
    ev = target.evaluation_view()
    for lam in values:
        bundle, _ = train_method(method, replace(config, lam=float(lam)), source, target.unlabeled_view(),
                                 model_config)
        mse, mae = evaluate(bundle, ev, head)
        rows.append((float(lam), mse, mae))
    if csv_path is not None:
        write_csv(csv_path, ("lambda", "target_mse", "target_mae"), rows)
    return rows


def write_csv(path, header, rows):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else repr(v) for v in row])
