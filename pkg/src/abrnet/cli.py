"""Command line entry point: ``abrnet {gen-data,train,eval,compare,sweep,schema}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import MethodSpec, train_method
from .config import EXPERIMENT_SCHEMA, load_config
from .dataset import load_dataset
from .datagen import DomainPair, generate_image_task, make_domain_pair, write_domain_pair
from .evaluation import evaluate, grid_error_map, lambda_sweep, predict, write_csv
from .exceptions import CheckpointError, ConfigError, NumericError
from .report import emit_report, plot_sweep
from .trainer import load_checkpoint, save_checkpoint

log = logging.getLogger("abrnet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _data_dir(cfg):
    return Path(cfg.output_dir) / "data"


def _generate(cfg) -> DomainPair:
    if cfg.data_task == "rf":
        return make_domain_pair(cfg.data_spec, cfg.data_seed)
    src, src_test, tgt = generate_image_task(cfg.data_spec, cfg.data_seed)
    return DomainPair(src, src_test, tgt, (), cfg.data_spec, {"task": cfg.data_seed})


def _load_pair(cfg) -> DomainPair:
    """Read the generated datasets if their manifest matches the config, else regenerate."""
    ddir = _data_dir(cfg)
    manifest = ddir / "manifest.json"
    if manifest.exists():
        m = json.loads(manifest.read_text())
        if m.get("spec") == json.loads(json.dumps(cfg.data_spec.to_dict())) and m.get("data_seed") == cfg.data_seed:
            f = m["files"]
            return DomainPair(load_dataset(ddir / f["source"]), load_dataset(ddir / f["source_test"]),
                              load_dataset(ddir / f["target"]), (), cfg.data_spec, m.get("seeds", {}))
    return cmd_gen_data_from(cfg)


def cmd_gen_data_from(cfg) -> DomainPair:
    pair = _generate(cfg)
    mpath = write_domain_pair(pair, _data_dir(cfg))
    m = json.loads(mpath.read_text())
    m["data_seed"] = cfg.data_seed
    mpath.write_text(json.dumps(m, indent=2))
    log.info("wrote %s", mpath)
    return pair


def _run_dir(cfg, method, seed):
    return Path(cfg.output_dir) / "runs" / method / f"seed{seed}"


def _train_one(cfg, pair, method: MethodSpec, seed):
    tcfg = replace(cfg.train, seed=seed)
    bundle, history = train_method(method, tcfg, pair.source, pair.target, cfg.model,
                                   eval_target=pair.target.evaluation_view())
    rdir = _run_dir(cfg, method.name, seed)
    rdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(bundle, history, rdir / "checkpoint.zip")
    history.to_csv(rdir / "history.csv")
    src = evaluate(bundle, pair.source_test, cfg.eval_head)
    tgt = evaluate(bundle, pair.target.evaluation_view(), cfg.eval_head)
    metrics = {"method": method.name, "seed": seed, "head": cfg.eval_head,
               "source_test_mse": src[0], "source_test_mae": src[1], "target_mse": tgt[0], "target_mae": tgt[1]}
    (rdir / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return bundle, history, metrics


def cmd_gen_data(args):
    cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir)
    cmd_gen_data_from(cfg)
    print(_data_dir(cfg) / "manifest.json")


def cmd_train(args):
    cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir)
    pair = _load_pair(cfg)
    for seed in cfg.seeds:
        _, _, metrics = _train_one(cfg, pair, cfg.method, seed)
        print(json.dumps(metrics))


def cmd_eval(args):
    bundle, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset).evaluation_view()
    preds = predict(bundle, ds.inputs, args.head)
    mse, mae = evaluate(bundle, ds, args.head)
    metrics = {"checkpoint": str(args.checkpoint), "dataset": str(args.dataset), "head": args.head,
               "mse": mse, "mae": mae, "n": len(ds)}
    maps = {}
    if ds.labels.shape[1] == 2:
        maps[Path(args.dataset).stem] = grid_error_map(preds, ds.labels, ds.extents, args.cell)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_{Path(args.dataset).stem}"
    emit_report({}, maps, out, metrics)
    print(json.dumps(metrics))


def _compare_cell(payload):
    cfg, method_name, seed = payload
    pair = _load_pair(cfg)
    _, history, metrics = _train_one(cfg, pair, MethodSpec(method_name), seed)
    return metrics, history


def cmd_compare(args):
    cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir)
    pair = _load_pair(cfg)
    cells = [(cfg, m, s) for m in cfg.compare_methods for s in cfg.seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            results = list(ex.map(_compare_cell, cells))
    else:
        results = [_compare_cell(c) for c in cells]
    rows, histories, maps = [], {}, {}
    for m in cfg.compare_methods:
        ms = [r for r, _ in results if r["method"] == m]
        t_mse = np.array([r["target_mse"] for r in ms])
        t_mae = np.array([r["target_mae"] for r in ms])
        s_mse = np.array([r["source_test_mse"] for r in ms])
        rows.append((m, float(t_mse.mean()), float(t_mse.std()), float(t_mae.mean()), float(t_mae.std()),
                     float(s_mse.mean()), len(ms)))
        first = min(ms, key=lambda r: r["seed"])
        histories[m] = next(h for r, h in results if r is first)
        bundle, _ = load_checkpoint(_run_dir(cfg, m, first["seed"]) / "checkpoint.zip")
        ev = pair.target.evaluation_view()
        if ev.labels.shape[1] == 2:
            maps[m] = grid_error_map(predict(bundle, ev.inputs, cfg.eval_head), ev.labels, ev.extents)
    cdir = Path(cfg.output_dir) / "compare"
    cdir.mkdir(parents=True, exist_ok=True)
    header = ("method", "target_mse_mean", "target_mse_std", "target_mae_mean", "target_mae_std",
              "source_test_mse_mean", "n_seeds")
    write_csv(cdir / "compare_table.csv", header, rows)
    lines = ["| method | target MSE | target MAE | source MSE |", "|---|---|---|---|"]
    lines += [f"| {r[0]} | {r[1]:.3f}±{r[2]:.3f} | {r[3]:.3f}±{r[4]:.3f} | {r[5]:.3f} |" for r in rows]
    (cdir / "compare_table.md").write_text("\n".join(lines) + "\n")
    emit_report(histories, maps, cdir, {"per_run": [r for r, _ in results]})
    print("\n".join(lines))


def cmd_sweep(args):
    cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir)
    pair = _load_pair(cfg)
    sdir = Path(cfg.output_dir) / "sweep"
    sdir.mkdir(parents=True, exist_ok=True)
    rows = lambda_sweep(cfg.train, pair.source, pair.target, cfg.sweep_values, cfg.model,
                        csv_path=sdir / "lambda_sweep.csv", head=cfg.eval_head, method=cfg.method.name)
    plot_sweep(rows, sdir / "lambda_sweep.png")
    for lam, mse, mae in rows:
        print(f"lambda={lam:g} target_mse={mse:.4f} target_mae={mae:.4f}")


def cmd_schema(args):
    print(json.dumps(EXPERIMENT_SCHEMA, indent=2))


def build_parser():
    p = argparse.ArgumentParser(prog="abrnet", description="Adversarial bi-regressor domain adaptation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, default=None, help="overrides config and $ABRNET_SEED")
        sp.add_argument("--output-dir", default=None, help="overrides config and $ABRNET_OUTPUT_DIR")
        sp.set_defaults(func=fn)
        return sp

    with_config("gen-data", cmd_gen_data, "generate source/target datasets and a manifest")
    with_config("train", cmd_train, "train the configured method for each seed")
    with_config("compare", cmd_compare, "train every method in compare.methods over the seed list")
    with_config("sweep", cmd_sweep, "mixing-ratio sweep")
    ev = sub.add_parser("eval", help="score a checkpoint on a dataset file")
    ev.add_argument("checkpoint")
    ev.add_argument("dataset")
    ev.add_argument("--head", choices=("hat", "tilde", "mean"), default="mean")
    ev.add_argument("--cell", type=float, default=0.5)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)
    sc = sub.add_parser("schema", help="print the experiment config JSON schema")
    sc.set_defaults(func=cmd_schema)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
