"""Machine-readable experiment reports plus CSV tables and PNG plots."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .evaluation import GridErrorMap, write_csv
from .trainer import TrainHistory

REPORT_SCHEMA_VERSION = 1

_nullable_number = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "runs", "grid_maps", "metrics"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "runs": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["history_csv", "records"],
                "properties": {
                    "history_csv": {"type": "string"},
                    "records": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["iteration"],
                            "properties": {
                                "iteration": {"type": "integer", "minimum": 1},
                                "L_r": _nullable_number,
                                "L_s": _nullable_number,
                                "L_adv": _nullable_number,
                                "target_mse": _nullable_number,
                                "target_mae": _nullable_number,
                            },
                        },
                    },
                },
            },
        },
        "grid_maps": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["cell", "extents", "mse", "counts", "csv"],
                "properties": {
                    "cell": {"type": "number", "exclusiveMinimum": 0},
                    "extents": {"type": "array", "items": {"type": "number"}},
                    "mse": {"type": "array", "items": {"type": "array", "items": _nullable_number}},
                    "counts": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                    "csv": {"type": "string"},
                },
            },
        },
        "metrics": {"type": "object"},
        "plots": {"type": "array", "items": {"type": "string"}},
    },
}


def _map_to_json(m: GridErrorMap, csv_name):
    mse = [[None if np.isnan(v) else float(v) for v in row] for row in m.mse]
    return {"cell": float(m.cell), "extents": [float(e) for e in m.extents], "mse": mse,
            "counts": m.counts.astype(int).tolist(), "csv": csv_name}


def _map_from_json(d):
    mse = np.array([[np.nan if v is None else v for v in row] for row in d["mse"]], dtype=float)
    return GridErrorMap(d["cell"], tuple(d["extents"]), mse, np.array(d["counts"], dtype=int))


def emit_report(histories: dict, maps: dict, path, metrics: dict = None, plots=True):
    """Write report.json, per-run history CSVs, grid-map CSVs and plots under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    report = {"schema_version": REPORT_SCHEMA_VERSION, "runs": {}, "grid_maps": {}, "metrics": metrics or {},
              "plots": []}
    for name, hist in histories.items():
        fname = f"history_{name}.csv"
        hist.to_csv(out / fname)
        report["runs"][name] = {"history_csv": fname, "records": hist.records}
    for name, m in maps.items():
        fname = f"grid_{name}.csv"
        rows = [(i, j, (i + 0.5) * m.cell, (j + 0.5) * m.cell, int(m.counts[i, j]),
                 "" if m.counts[i, j] == 0 else float(m.mse[i, j]))
                for i in range(m.mse.shape[0]) for j in range(m.mse.shape[1])]
        write_csv(out / fname, ("ix", "iy", "x_center", "y_center", "count", "mse"), rows)
        report["grid_maps"][name] = _map_to_json(m, fname)
    if plots:
        report["plots"] = _plot(histories, maps, out)
    jsonschema.validate(report, REPORT_SCHEMA)
    (out / "report.json").write_text(json.dumps(report, indent=1))
    return out / "report.json"


def load_report(path):
    """Load and validate a report; returns (histories, maps, metrics)."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    report = json.loads(path.read_text())
    jsonschema.validate(report, REPORT_SCHEMA)
    histories = {k: TrainHistory(v["records"]) for k, v in report["runs"].items()}
    maps = {k: _map_from_json(v) for k, v in report["grid_maps"].items()}
    return histories, maps, report["metrics"]


def _plot(histories, maps, out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    if histories:
        fig, axes = plt.subplots(1, 3, figsize=(13, 3.5))
        for name, h in histories.items():
            it = h.column("iteration")
            for ax, col in zip(axes, ("L_r", "L_s", "target_mae")):
                pts = [(i, v) for i, v in zip(it, h.column(col)) if v is not None]
                if pts:
                    x, y = zip(*pts)
                    ax.plot(x, y, label=name, marker="o" if col == "target_mae" else None, lw=1)
        for ax, title in zip(axes, ("source regression loss", "head similarity (target)", "target MAE")):
            ax.set_title(title)
            ax.set_xlabel("iteration")
        axes[0].set_yscale("log")
        axes[0].legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "loss_curves.png", dpi=90)
        plt.close(fig)
        files.append("loss_curves.png")
    for name, m in maps.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        im = ax.imshow(np.ma.masked_invalid(m.mse).T, origin="lower", cmap="magma",
                       extent=(0, m.mse.shape[0] * m.cell, 0, m.mse.shape[1] * m.cell))
        fig.colorbar(im, ax=ax, label="MSE (m²)")
        ax.set_title(f"{name}: mean squared error per {m.cell:g} m cell")
        fig.tight_layout()
        fname = f"grid_{name}.png"
        fig.savefig(out / fname, dpi=90)
        plt.close(fig)
        files.append(fname)
    return files


def plot_sweep(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lam, mse = [r[0] for r in rows], [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(lam, mse, marker="o")
    ax.set_xlabel("mixing ratio λ")
    ax.set_ylabel("target MSE (m²)")
    fig.tight_layout()
    fig.savefig(path, dpi=90)
    plt.close(fig)
    return path
