"""Mini-batch training loop with epoch-scheduled adaptive weighting.

One shared parameter set sees both views of every batch; gradients from
the two views are accumulated before each optimizer step.  The optimizer
is Adam with decoupled weight decay and an exponentially decayed learning
rate.  The true-branch weighting kernel is rebuilt once per epoch.  Runs
are bit-reproducible functions of (config, datasets).
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, ViewTransform, default_view, fingerprint
from .losses import MODES, batch_total
from .model import (Arch, Gradients, ModelParams, backward, forward,
                    init_params, load_checkpoint, save_checkpoint)
from .naw import WeightPolicy, naw_weights
from .numkit import Rng, softmax

__all__ = [
    "TrainConfig",
    "EpochMetrics",
    "RunRecord",
    "EvalResult",
    "TrainingDiverged",
    "AdamState",
    "adam_step",
    "run_training",
    "evaluate",
    "collect_weight_stats",
    "select_epoch",
    "metrics_csv_text",
    "save_run_record",
    "load_run_metrics",
    "atomic_write_text",
]


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; carries the epoch and batch index."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    """Everything a run needs besides the data."""

    mode: str = "nla"
    lam: float = 0.5
    batch_size: int = 32
    epochs: int = 60
    lr0: float = 1e-4
    lr_gamma: float = 0.9
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    arch: str = "mlp"
    hidden_dim: int = 64
    policy: WeightPolicy | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if min(self.lr0, self.lr_gamma, self.eps) <= 0.0 or self.weight_decay < 0.0:
            raise ValueError("rates must be positive")
        if self.arch not in ("mlp", "linear"):
            raise ValueError("arch must be 'mlp' or 'linear'")
        if self.policy is None:
            self.policy = WeightPolicy(total_epochs=self.epochs)
        elif self.policy.total_epochs != self.epochs:
            raise ValueError("policy.total_epochs must equal epochs")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["policy"] = dataclasses.asdict(self.policy)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        """Inverse of to_dict; the policy dict may be partial."""
        d = dict(d)
        policy = d.pop("policy", None)
        if policy is not None:
            fields = {k: tuple(v) if k in ("mu_true", "mu_false") else v
                      for k, v in policy.items()}
            fields.setdefault("total_epochs", d.get("epochs", 60))
            policy = WeightPolicy(**fields)
        return TrainConfig(policy=policy, **d)


@dataclass
class EpochMetrics:
    """Per-epoch instrumentation row."""

    epoch: int
    lr: float
    loss_ce: float
    loss_naw_ce: float
    loss_reg: float
    loss_total: float
    test_overall: float
    test_mean: float
    per_class_acc: np.ndarray
    weight_quartiles: np.ndarray  # (K, 3): q1, median, q3 per class


@dataclass
class EvalResult:
    overall: float
    mean: float
    per_class: np.ndarray
    confusion: np.ndarray


@dataclass
class RunRecord:
    config: TrainConfig
    metrics: list[EpochMetrics]
    params: ModelParams
    train_fingerprint: str
    test_fingerprint: str


@dataclass
class AdamState:
    m: Gradients
    v: Gradients
    t: int = 0

    @staticmethod
    def zeros_like(params: ModelParams) -> "AdamState":
        return AdamState(m=Gradients.zeros_like(params),
                         v=Gradients.zeros_like(params))


def adam_step(params: ModelParams, grads: Gradients, state: AdamState,
              lr: float, cfg: TrainConfig) -> None:
    """One Adam update with decoupled weight decay.

    With zero gradients the only change is the shrinkage lr * wd * param.
    """
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for kind in ("weights", "biases"):
        ps = getattr(params, kind)
        gs = getattr(grads, kind)
        ms = getattr(state.m, kind)
        vs = getattr(state.v, kind)
        for p, g, m, v in zip(ps, gs, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * ((m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
                       + cfg.weight_decay * p)


def evaluate(params: ModelParams, test: Dataset) -> EvalResult:
    """Accuracy on the original view only."""
    if test.n == 0 or np.any(test.class_counts == 0):
        raise ValueError("test split must contain every class")
    logits = forward(params, test.inputs).logits
    preds = logits.argmax(axis=1)
    k = test.n_classes
    confusion = np.bincount(test.labels * k + preds, minlength=k * k).reshape(k, k)
    per_class = np.diag(confusion) / confusion.sum(axis=1)
    return EvalResult(overall=float(np.trace(confusion) / test.n),
                      mean=float(per_class.mean()),
                      per_class=per_class,
                      confusion=confusion)


def collect_weight_stats(params: ModelParams, train: Dataset, epoch: int,
                         policy: WeightPolicy) -> np.ndarray:
    """Per-class quartiles (q1, median, q3) of the adaptive weights.

    Weights are computed for every training sample under the given
    epoch's kernels.  Classes absent from the split get NaN rows.
    """
    probs = softmax(forward(params, train.inputs).logits)
    weights = naw_weights(probs, train.labels, epoch, policy)
    out = np.full((train.n_classes, 3), np.nan)
    for k in range(train.n_classes):
        w_k = weights[train.labels == k]
        if w_k.size:
            out[k] = np.percentile(w_k, [25.0, 50.0, 75.0])
    return out


def run_training(config: TrainConfig, train: Dataset, test: Dataset,
                 view: ViewTransform | None = None) -> RunRecord:
    """Full training run; returns all epoch metrics plus the final model.

    Sub-streams of the run seed: split 0 initializes parameters, split 1
    drives the per-epoch shuffles.  The flipped view is only evaluated in
    mode ``nla``; the other modes never look at it.
    """
    if view is None:
        view = default_view(train)
    rng = Rng(config.seed)
    arch = Arch(input_dim=train.dim,
                hidden_dim=config.hidden_dim if config.arch == "mlp" else 0,
                n_classes=train.n_classes)
    params = init_params(arch, rng.split(0))
    shuffle_rng = rng.split(1)
    state = AdamState.zeros_like(params)
    policy = config.policy
    flipped = view.apply(train.inputs)
    n = train.n

    metrics: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        lr = config.lr0 * config.lr_gamma ** epoch
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(4)  # ce, naw_ce, reg, total
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            trace = forward(params, train.inputs[idx])
            use_flip = config.mode == "nla"
            trace_f = forward(params, flipped[idx]) if use_flip else None
            if not np.all(np.isfinite(trace.logits)):
                raise TrainingDiverged(epoch, batch_index)
            loss = batch_total(
                trace.logits,
                trace_f.logits if use_flip else trace.logits,
                train.labels[idx], epoch, policy, config.lam, mode=config.mode)
            if not np.all(np.isfinite(loss.total)):
                raise TrainingDiverged(epoch, batch_index)
            grads = backward(params, trace, loss.grad_z)
            if use_flip:
                grads.add_(backward(params, trace_f, loss.grad_zf))
            adam_step(params, grads, state, lr, config)
            sums += [loss.ce.sum(), loss.naw_ce.sum(), loss.reg.sum(),
                     loss.total.sum()]
        ev = evaluate(params, test)
        quartiles = collect_weight_stats(params, train, epoch, policy)
        metrics.append(EpochMetrics(
            epoch=epoch, lr=lr,
            loss_ce=float(sums[0] / n), loss_naw_ce=float(sums[1] / n),
            loss_reg=float(sums[2] / n), loss_total=float(sums[3] / n),
            test_overall=ev.overall, test_mean=ev.mean,
            per_class_acc=ev.per_class, weight_quartiles=quartiles))
    return RunRecord(config=config, metrics=metrics, params=params,
                     train_fingerprint=fingerprint(train),
                     test_fingerprint=fingerprint(test))


def select_epoch(record: RunRecord, by: str = "final") -> EpochMetrics:
    """Reporting epoch: the last one, or the best by test mean accuracy."""
    if by == "final":
        return record.metrics[-1]
    if by == "best_mean":
        return max(record.metrics, key=lambda m: m.test_mean)
    raise ValueError("by must be 'final' or 'best_mean'")


# ---------------------------------------------------------------------------
# Persistence: manifest JSON + metrics CSV + checkpoint
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_csv_text(record: RunRecord) -> str:
    """Deterministic CSV, one row per epoch.

    Columns: epoch, lr, loss_ce, loss_naw_ce, loss_reg, loss_total,
    test_overall, test_mean, acc_c{k} for each class, then w{k}_q1,
    w{k}_med, w{k}_q3 for each class.  Floats use shortest round-trip
    formatting, so identical runs produce identical bytes.
    """
    k = record.metrics[0].per_class_acc.shape[0]
    header = ["epoch", "lr", "loss_ce", "loss_naw_ce", "loss_reg", "loss_total",
              "test_overall", "test_mean"]
    header += [f"acc_c{i}" for i in range(k)]
    for i in range(k):
        header += [f"w{i}_q1", f"w{i}_med", f"w{i}_q3"]
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for m in record.metrics:
        row = [str(m.epoch), _fmt(m.lr), _fmt(m.loss_ce), _fmt(m.loss_naw_ce),
               _fmt(m.loss_reg), _fmt(m.loss_total), _fmt(m.test_overall),
               _fmt(m.test_mean)]
        row += [_fmt(v) for v in m.per_class_acc]
        for i in range(k):
            row += [_fmt(v) for v in m.weight_quartiles[i]]
        out.write(",".join(row) + "\n")
    return out.getvalue()


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def save_run_record(record: RunRecord, out_dir) -> None:
    """Persist manifest.json, metrics.csv, and checkpoint.bin."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(record.params, out_dir / "checkpoint.bin")
    atomic_write_text(out_dir / "metrics.csv", metrics_csv_text(record))
    manifest = {
        "config": record.config.to_dict(),
        "train_fingerprint": record.train_fingerprint,
        "test_fingerprint": record.test_fingerprint,
        "epochs_completed": len(record.metrics),
        "version": __version__,
        "status": "complete",
    }
    atomic_write_text(out_dir / "manifest.json",
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_run_metrics(run_dir) -> tuple[dict, list[EpochMetrics]]:
    """Read back a persisted run: (manifest, epoch metrics)."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    lines = (run_dir / "metrics.csv").read_text(encoding="utf-8").strip().split("\n")
    header = lines[0].split(",")
    k = sum(1 for name in header if name.startswith("acc_c"))
    metrics = []
    for line in lines[1:]:
        vals = line.split(",")
        row = dict(zip(header, vals))
        per_class = np.array([float(row[f"acc_c{i}"]) for i in range(k)])
        quart = np.array([[float(row[f"w{i}_q1"]), float(row[f"w{i}_med"]),
                           float(row[f"w{i}_q3"])] for i in range(k)])
        metrics.append(EpochMetrics(
            epoch=int(row["epoch"]), lr=float(row["lr"]),
            loss_ce=float(row["loss_ce"]), loss_naw_ce=float(row["loss_naw_ce"]),
            loss_reg=float(row["loss_reg"]), loss_total=float(row["loss_total"]),
            test_overall=float(row["test_overall"]),
            test_mean=float(row["test_mean"]),
            per_class_acc=per_class, weight_quartiles=quart))
    return manifest, metrics


def load_run_params(run_dir) -> ModelParams:
    return load_checkpoint(Path(run_dir) / "checkpoint.bin")
