"""Config-driven experiment runner.

Subcommands: ``generate`` (dataset caches), ``train`` (one run cell),
``sweep`` (all cells of the noise x imbalance x mode x seed grid, with
aggregation across seeds), ``plotdata`` (tidy CSVs for plotting), and
``check`` (built-in verification suite).

A sweep cell is identified by ``n{noise}_f{imbalance}_{mode}_s{seed}``;
its dataset (mode-independent, so modes are compared on identical data)
by ``n{noise}_f{imbalance}_s{seed}``.  Every random stream is derived
from the config's master seed and a string tag via
``numkit.derive_seed``, so adding cells never changes existing ones.

Exit codes: 0 success, 1 usage error, 2 runtime error or divergence,
3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import (Dataset, apply_imbalance, fingerprint, ingest_csv,
                   ingest_idx, inject_noise, load_dataset, make_synthetic,
                   save_dataset)
from .losses import MODES
from .numkit import Rng, derive_seed
from .trainer import (TrainConfig, TrainingDiverged, atomic_write_text,
                      load_run_metrics, run_training, save_run_record)

__all__ = ["main", "load_config", "cell_id", "dataset_id", "DEFAULT_CONFIG"]

DEFAULT_CONFIG = {
    "seed": 7,
    "dataset": {
        "kind": "synthetic",
        "k": 7,
        "d": 8,
        "n_per_class": 500,
        "test_per_class": 200,
        "spread": 0.5,
    },
    "noise": [0.0],
    "imbalance": [1.0],
    "modes": ["ce", "nla"],
    "seeds": [1, 2, 3, 4, 5],
    "train": {},
    "out": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        raise UsageError(message)


def cell_id(noise: float, imbalance: float, mode: str, seed: int) -> str:
    return f"n{noise:g}_f{imbalance:g}_{mode}_s{seed}"


def dataset_id(noise: float, imbalance: float, seed: int) -> str:
    return f"n{noise:g}_f{imbalance:g}_s{seed}"


def load_config(path: str | None) -> dict:
    """Config file merged over the defaults (shallow per section)."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
        for key, value in user.items():
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r}")
            if isinstance(cfg[key], dict) and isinstance(value, dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"bad numeric list {text!r}") from exc


def _parse_seeds(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "noise", None) is not None:
        cfg["noise"] = _parse_float_list(args.noise)
    if getattr(args, "imbalance", None) is not None:
        cfg["imbalance"] = _parse_float_list(args.imbalance)
    if getattr(args, "mode", None) is not None:
        modes = args.mode.split(",")
        for m in modes:
            if m not in MODES:
                raise UsageError(f"unknown mode {m!r}")
        cfg["modes"] = modes
    if getattr(args, "seeds", None) is not None:
        cfg["seeds"] = _parse_seeds(args.seeds)
    if getattr(args, "seed", None) is not None:
        cfg["seeds"] = [args.seed]
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    if cfg["out"] is None:
        cfg["out"] = os.environ.get("NLA_OUT_DIR", "nla_out")
    return cfg


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def _base_splits(cfg: dict) -> tuple[Dataset, Dataset]:
    ds_cfg = cfg["dataset"]
    kind = ds_cfg.get("kind", "synthetic")
    if kind == "synthetic":
        train = make_synthetic(ds_cfg["k"], ds_cfg["d"], ds_cfg["n_per_class"],
                               ds_cfg["spread"],
                               Rng(derive_seed(cfg["seed"], "train-base")),
                               split="train")
        test = make_synthetic(ds_cfg["k"], ds_cfg["d"], ds_cfg["test_per_class"],
                              ds_cfg["spread"],
                              Rng(derive_seed(cfg["seed"], "test")),
                              split="test")
        return train, test
    if kind == "idx":
        train = ingest_idx(ds_cfg["train_images"], ds_cfg["train_labels"], "train")
        test = ingest_idx(ds_cfg["test_images"], ds_cfg["test_labels"], "test")
        return train, test
    if kind == "csv":
        train = ingest_csv(ds_cfg["train"], "train")
        test = ingest_csv(ds_cfg["test"], "test")
        return train, test
    raise UsageError(f"unknown dataset kind {kind!r}")


def _cell_dataset(base_train: Dataset, cfg: dict, noise: float,
                  imbalance: float, seed: int) -> Dataset:
    """Per-cell corruption of the shared clean base train split."""
    rng = Rng(derive_seed(cfg["seed"], f"data|{dataset_id(noise, imbalance, seed)}"))
    ds = base_train
    if noise > 0.0:
        ds = inject_noise(ds, noise, rng.split(0))
    if imbalance > 1.0:
        ds = apply_imbalance(ds, imbalance, rng.split(1))
    return ds


def _ensure_datasets(cfg: dict, force: bool = False, quiet: bool = False) -> dict:
    """Write any missing dataset caches; return path map for all cells."""
    out = Path(cfg["out"])
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    base_train, test = _base_splits(cfg)

    paths = {"test": data_dir / "test.ds"}
    if force or not paths["test"].exists():
        save_dataset(test, paths["test"])
        _write_dataset_fingerprint(test, paths["test"], cfg)
    for noise in cfg["noise"]:
        for imbalance in cfg["imbalance"]:
            for seed in cfg["seeds"]:
                did = dataset_id(noise, imbalance, seed)
                path = data_dir / f"{did}_train.ds"
                paths[did] = path
                if not force and path.exists():
                    continue
                ds = _cell_dataset(base_train, cfg, noise, imbalance, seed)
                save_dataset(ds, path)
                _write_dataset_fingerprint(ds, path, cfg)
                if not quiet:
                    flipped = 0 if ds.clean_labels is None else int(
                        (ds.labels != ds.clean_labels).sum())
                    counts = ds.class_counts
                    ratio = float(counts.max() / counts.min())
                    print(f"[generate] {did}: n={ds.n} flipped={flipped} "
                          f"max/min={ratio:.2f} sha={fingerprint(ds)[:12]}")
    return paths


def _write_dataset_fingerprint(ds: Dataset, path: Path, cfg: dict) -> None:
    info = {
        "sha256": fingerprint(ds),
        "n": ds.n,
        "d": ds.dim,
        "k": ds.n_classes,
        "split": ds.split,
        "class_counts": ds.class_counts.tolist(),
        "noise_rate": ds.meta.get("noise_rate", 0.0),
        "imbalance": ds.meta.get("imbalance", 1.0),
        "generator": cfg["dataset"],
        "master_seed": cfg["seed"],
    }
    atomic_write_text(path.with_suffix(".json"),
                      json.dumps(info, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Run cells
# ---------------------------------------------------------------------------

@dataclass
class CellSpec:
    noise: float
    imbalance: float
    mode: str
    seed: int
    train_path: str
    test_path: str
    run_dir: str
    train_overrides: dict
    master_seed: int
    force: bool = False

    @property
    def id(self) -> str:
        return cell_id(self.noise, self.imbalance, self.mode, self.seed)


def _build_train_config(spec: CellSpec) -> TrainConfig:
    fields = dict(spec.train_overrides)
    fields["mode"] = spec.mode
    # Mode-independent run seed, so modes are paired per (data, seed) cell.
    fields["seed"] = derive_seed(
        spec.master_seed,
        f"run|{dataset_id(spec.noise, spec.imbalance, spec.seed)}")
    return TrainConfig.from_dict(fields)


def run_cell(spec: CellSpec) -> dict:
    """Execute one cell; idempotent unless forced.  Returns a status dict."""
    run_dir = Path(spec.run_dir)
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists() and not spec.force:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("status") == "complete":
            return {"cell": spec.id, "ok": True, "skipped": True}
    try:
        train = load_dataset(spec.train_path)
        test = load_dataset(spec.test_path)
        record = run_training(_build_train_config(spec), train, test)
        save_run_record(record, run_dir)
        return {"cell": spec.id, "ok": True, "skipped": False}
    except TrainingDiverged as exc:
        return {"cell": spec.id, "ok": False, "error": str(exc)}
    except Exception as exc:  # noqa: BLE001 - per-cell isolation in sweeps
        return {"cell": spec.id, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _cells(cfg: dict, paths: dict, force: bool) -> list[CellSpec]:
    out = Path(cfg["out"])
    specs = []
    for noise in cfg["noise"]:
        for imbalance in cfg["imbalance"]:
            for mode in cfg["modes"]:
                for seed in cfg["seeds"]:
                    did = dataset_id(noise, imbalance, seed)
                    cid = cell_id(noise, imbalance, mode, seed)
                    specs.append(CellSpec(
                        noise=noise, imbalance=imbalance, mode=mode, seed=seed,
                        train_path=str(paths[did]), test_path=str(paths["test"]),
                        run_dir=str(out / "runs" / cid),
                        train_overrides=dict(cfg["train"]),
                        master_seed=cfg["seed"], force=force))
    return specs


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: dict, args) -> int:
    _ensure_datasets(cfg, force=args.force)
    return 0


def cmd_train(cfg: dict, args) -> int:
    for key, flag in (("noise", "--noise"), ("imbalance", "--imbalance")):
        if len(cfg[key]) != 1:
            raise UsageError(f"train needs exactly one {flag} value")
    if len(cfg["modes"]) != 1:
        raise UsageError("train needs exactly one --mode value")
    if len(cfg["seeds"]) != 1:
        raise UsageError("train needs exactly one --seed value")
    paths = _ensure_datasets(cfg, quiet=True)
    spec = _cells(cfg, paths, args.force)[0]
    result = run_cell(spec)
    if not result["ok"]:
        print(f"[train] {result['cell']} FAILED: {result['error']}", file=sys.stderr)
        return 2
    state = "skipped (already complete)" if result["skipped"] else "done"
    print(f"[train] {result['cell']} {state} -> {spec.run_dir}")
    return 0


def cmd_sweep(cfg: dict, args) -> int:
    paths = _ensure_datasets(cfg, quiet=True)
    specs = _cells(cfg, paths, args.force)
    workers = max(1, args.workers)
    if workers == 1:
        results = [run_cell(s) for s in specs]
    else:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            results = pool.map(run_cell, specs)
    failures = [r for r in results if not r["ok"]]
    for r in results:
        tag = "ok" if r["ok"] else f"FAILED: {r['error']}"
        print(f"[sweep] {r['cell']}: {tag}")
    _write_summary(cfg, specs, results)
    return 3 if failures else 0


def _final_row(run_dir: str):
    _, metrics = load_run_metrics(run_dir)
    return metrics[-1]


def _write_summary(cfg: dict, specs: list[CellSpec], results: list[dict]) -> None:
    """Aggregate final-epoch accuracies across seeds for each grid cell."""
    ok = {r["cell"] for r in results if r["ok"]}
    by_group: dict[tuple, list] = {}
    for spec in specs:
        if spec.id not in ok:
            continue
        key = (spec.noise, spec.imbalance, spec.mode)
        by_group.setdefault(key, []).append(_final_row(spec.run_dir))

    rows = []
    for (noise, imbalance, mode), finals in sorted(by_group.items()):
        overall = np.array([m.test_overall for m in finals])
        mean_acc = np.array([m.test_mean for m in finals])
        per_class = np.stack([m.per_class_acc for m in finals]).mean(axis=0)
        rows.append({
            "noise": noise, "imbalance": imbalance, "mode": mode,
            "n_seeds": len(finals),
            "overall_mean": float(overall.mean()),
            "overall_std": float(overall.std(ddof=1)) if len(finals) > 1 else 0.0,
            "mean_acc_mean": float(mean_acc.mean()),
            "mean_acc_std": float(mean_acc.std(ddof=1)) if len(finals) > 1 else 0.0,
            "per_class_mean": [float(v) for v in per_class],
        })

    deltas = {}
    for (noise, imbalance, mode), _ in sorted(by_group.items()):
        for other in cfg["modes"]:
            if other == mode or (noise, imbalance, other) not in by_group:
                continue
            a = next(r for r in rows if (r["noise"], r["imbalance"], r["mode"]) == (noise, imbalance, mode))
            b = next(r for r in rows if (r["noise"], r["imbalance"], r["mode"]) == (noise, imbalance, other))
            deltas[f"n{noise:g}_f{imbalance:g}:{mode}-{other}"] = {
                "overall": a["overall_mean"] - b["overall_mean"],
                "mean_acc": a["mean_acc_mean"] - b["mean_acc_mean"],
            }

    out = Path(cfg["out"])
    k = len(rows[0]["per_class_mean"]) if rows else 0
    header = ["noise", "imbalance", "mode", "n_seeds", "overall_mean",
              "overall_std", "mean_acc_mean", "mean_acc_std"]
    header += [f"acc_c{i}" for i in range(k)]
    lines = [",".join(header)]
    for r in rows:
        line = [f"{r['noise']:g}", f"{r['imbalance']:g}", r["mode"],
                str(r["n_seeds"]), repr(r["overall_mean"]), repr(r["overall_std"]),
                repr(r["mean_acc_mean"]), repr(r["mean_acc_std"])]
        line += [repr(v) for v in r["per_class_mean"]]
        lines.append(",".join(line))
    atomic_write_text(out / "summary.csv", "\n".join(lines) + "\n")
    incomplete = [r["cell"] for r in results if not r["ok"]]
    atomic_write_text(out / "summary.json", json.dumps({
        "cells": rows, "pairwise_deltas": deltas,
        "incomplete": incomplete, "version": __version__,
    }, indent=2, sort_keys=True) + "\n")
    _print_pivot(rows)
    print(f"[sweep] summary -> {out / 'summary.csv'}"
          + (f" ({len(incomplete)} incomplete)" if incomplete else ""))


def _print_pivot(rows: list[dict]) -> None:
    """Compact accuracy tables: one block per imbalance factor and metric,
    modes as rows and noise rates as columns."""
    if not rows:
        return
    noises = sorted({r["noise"] for r in rows})
    factors = sorted({r["imbalance"] for r in rows})
    modes = sorted({r["mode"] for r in rows})
    lookup = {(r["noise"], r["imbalance"], r["mode"]): r for r in rows}
    for factor in factors:
        for metric, label in (("overall", "overall acc"),
                              ("mean_acc", "mean acc")):
            print(f"[sweep] imbalance {factor:g}, {label} "
                  "(mean +/- std over seeds):")
            print("         " + "".join(f"  noise {n:<11g}" for n in noises))
            for mode in modes:
                cells = []
                for n in noises:
                    r = lookup.get((n, factor, mode))
                    cells.append("      --         " if r is None else
                                 f"  {r[f'{metric}_mean']:.4f}±{r[f'{metric}_std']:.4f}")
                print(f"  {mode:>5s}: " + "".join(cells))


def cmd_plotdata(cfg: dict, args) -> int:
    out = Path(cfg["out"])
    runs_dir = out / "runs"
    run_dirs = sorted(d for d in runs_dir.glob("*") if (d / "metrics.csv").exists()) \
        if runs_dir.exists() else []
    if not run_dirs:
        print(f"[plotdata] no run records under {runs_dir}", file=sys.stderr)
        return 2
    plot_dir = out / "plot"
    plot_dir.mkdir(parents=True, exist_ok=True)
    acc = ["run,epoch,class,accuracy"]
    quart = ["run,epoch,class,q1,median,q3"]
    loss = ["run,epoch,lr,loss_ce,loss_naw_ce,loss_reg,loss_total,test_overall,test_mean"]
    for run_dir in run_dirs:
        _, metrics = load_run_metrics(run_dir)
        name = run_dir.name
        for m in metrics:
            for k, a in enumerate(m.per_class_acc):
                acc.append(f"{name},{m.epoch},{k},{a!r}")
            for k in range(m.weight_quartiles.shape[0]):
                q1, med, q3 = m.weight_quartiles[k]
                quart.append(f"{name},{m.epoch},{k},{q1!r},{med!r},{q3!r}")
            loss.append(f"{name},{m.epoch},{m.lr!r},{m.loss_ce!r},{m.loss_naw_ce!r},"
                        f"{m.loss_reg!r},{m.loss_total!r},{m.test_overall!r},{m.test_mean!r}")
    atomic_write_text(plot_dir / "accuracy_curves.csv", "\n".join(acc) + "\n")
    atomic_write_text(plot_dir / "weight_quartiles.csv", "\n".join(quart) + "\n")
    atomic_write_text(plot_dir / "loss_curves.csv", "\n".join(loss) + "\n")
    print(f"[plotdata] {len(run_dirs)} runs -> {plot_dir}")
    return 0


def cmd_check(cfg: dict, args) -> int:
    from .selfcheck import run_selfcheck
    return 0 if run_selfcheck() else 2


def main(argv=None) -> int:
    parser = _Parser(prog="nla", description=__doc__.split("\n", 1)[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add_common(p, train_like=True):
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output root (default $NLA_OUT_DIR)")
        if train_like:
            p.add_argument("--seed", type=int, default=None, help="single run seed")
            p.add_argument("--seeds", default=None, help="seed list: A..B or a,b,c")
            p.add_argument("--noise", default=None, help="noise rates, comma separated")
            p.add_argument("--imbalance", default=None, help="imbalance factors, comma separated")
            p.add_argument("--mode", default=None, help="ce|naw|nla (comma list for sweep)")
            p.add_argument("--epochs", type=int, default=None)
            p.add_argument("--force", action="store_true", help="redo existing outputs")

    add_common(sub.add_parser("generate", help="write dataset caches"))
    add_common(sub.add_parser("train", help="run a single cell"))
    sweep = sub.add_parser("sweep", help="run the full grid and aggregate")
    add_common(sweep)
    sweep.add_argument("--workers", type=int, default=1, help="parallel cells")
    add_common(sub.add_parser("plotdata", help="emit plot-ready CSVs"), train_like=False)
    add_common(sub.add_parser("check", help="run built-in verification"), train_like=False)

    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        cfg = _apply_overrides(load_config(args.config), args)
        handler = {"generate": cmd_generate, "train": cmd_train,
                   "sweep": cmd_sweep, "plotdata": cmd_plotdata,
                   "check": cmd_check}[args.command]
        return handler(cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, TrainingDiverged) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
