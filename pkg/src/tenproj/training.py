"""Training orchestration: trials, metrics, summaries, evaluation.

A run of ``trials`` repetitions trains the configured model ``trials``
times; trial t (0-based) derives every random stream from ``seed + t``
(data split, batch shuffling, parameter initialization, dropout masks).
Each trial writes one metrics CSV and one checkpoint; the run writes a
summary CSV holding best/worst/median validation accuracy and loss at the
configured report epochs. Trials are independent and may be run by worker
processes (capped by the TENPROJ_THREADS environment variable).
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError
from .data import (
    DatasetSplit,
    MetricsRow,
    load_dataset,
    read_metrics_csv,
    write_metrics_csv,
)
from .models import build_model
from .nn import RMSProp

__all__ = [
    "trial_seed",
    "metrics_path",
    "checkpoint_path",
    "summary_path",
    "train_one_trial",
    "run_train",
    "run_eval",
    "SummaryRow",
    "summarize",
    "write_summary_csv",
    "worker_count",
]


def trial_seed(config, trial):
    """Seed for 0-based trial t: the configured seed plus t."""
    return config.seed + trial


def metrics_path(out_dir, trial):
    return os.path.join(out_dir, f"metrics_trial{trial + 1:02d}.csv")


def checkpoint_path(out_dir, trial):
    return os.path.join(out_dir, f"model_trial{trial + 1:02d}.ckpt")


def summary_path(out_dir):
    return os.path.join(out_dir, "summary.csv")


def worker_count(trials, env=None):
    """Number of trial worker processes: min(trials, TENPROJ_THREADS or 1)."""
    env = os.environ if env is None else env
    raw = env.get("TENPROJ_THREADS", "1")
    try:
        cap = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TENPROJ_THREADS must be an integer, got {raw!r}") from None
    return min(max(1, trials), cap)


def _build_split(config, seed):
    images, labels = load_dataset(config.train_images, config.train_labels)
    return DatasetSplit(
        images, labels,
        val_fraction=config.val_fraction,
        batch_size=config.batch_size,
        seed=seed,
        train_limit=config.train_limit,
        val_limit=config.val_limit,
    )


def train_one_trial(config, trial):
    """Train one trial end to end; writes its metrics CSV and checkpoint.

    Returns the list of MetricsRow. Deterministic for a fixed (config,
    trial) in single-threaded numerics.
    """
    seed = trial_seed(config, trial)
    split = _build_split(config, seed)
    model = build_model(config.model, seed=seed, tp_eps=config.tp_eps,
                        jacobian_mode=config.jacobian_mode)
    optimizer = RMSProp(lr=config.lr, rho=config.rho, delta=config.delta)

    rows = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        loss_sum = 0.0
        for xb, yb in split.batches(epoch):
            loss = model.train_step(xb, yb, optimizer, step)
            loss_sum += loss * len(yb)
            step += 1
        train_loss = loss_sum / split.n_train
        val_loss, val_acc = model.evaluate(split.val_images, split.val_labels,
                                           batch_size=config.batch_size)
        seconds = time.perf_counter() - started if config.timing == "wall" else 0.0
        rows.append(MetricsRow(epoch=epoch, train_loss=train_loss,
                               val_loss=val_loss, val_acc=val_acc,
                               seconds=seconds))

    os.makedirs(config.out_dir, exist_ok=True)
    write_metrics_csv(rows, metrics_path(config.out_dir, trial))
    save_checkpoint(model, checkpoint_path(config.out_dir, trial))
    return rows


@dataclass
class SummaryRow:
    epoch: int
    metric: str
    best: float
    worst: float
    median: float


def _report_epochs(config):
    chosen = tuple(e for e in config.report_epochs if e <= config.epochs)
    return chosen if chosen else (config.epochs,)


def summarize(per_trial_rows, report_epochs):
    """Best/worst/median of validation accuracy and loss across trials.

    Accuracy is oriented so best = max; loss so best = min. The median of
    an even trial count is the mean of the two central order statistics.
    """
    out = []
    for epoch in report_epochs:
        at_epoch = []
        for rows in per_trial_rows:
            match = [r for r in rows if r.epoch == epoch]
            if not match:
                raise ValueError(f"no metrics row for epoch {epoch}")
            at_epoch.append(match[0])
        accs = np.array([r.val_acc for r in at_epoch])
        losses = np.array([r.val_loss for r in at_epoch])
        out.append(SummaryRow(epoch, "val_acc", float(accs.max()),
                              float(accs.min()), float(np.median(accs))))
        out.append(SummaryRow(epoch, "val_loss", float(losses.min()),
                              float(losses.max()), float(np.median(losses))))
    return out


SUMMARY_HEADER = "epoch,metric,best,worst,median"


def _fmt(x):
    return format(float(x), ".6g")


def write_summary_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(SUMMARY_HEADER + "\n")
        for r in rows:
            f.write(f"{r.epoch},{r.metric},{_fmt(r.best)},{_fmt(r.worst)},"
                    f"{_fmt(r.median)}\n")


def _trial_worker(config, trial):
    return trial, train_one_trial(config, trial)


def run_train(config):
    """Run all trials and write the summary; returns a process exit code."""
    os.makedirs(config.out_dir, exist_ok=True)
    workers = worker_count(config.trials)
    per_trial = [None] * config.trials
    if workers == 1:
        for trial in range(config.trials):
            per_trial[trial] = train_one_trial(config, trial)
            last = per_trial[trial][-1]
            print(f"[train] trial {trial + 1}/{config.trials}: "
                  f"val_loss {last.val_loss:.4f} val_acc {last.val_acc:.4f}")
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_trial_worker, config, t)
                       for t in range(config.trials)]
            for future in futures:
                trial, rows = future.result()
                per_trial[trial] = rows
                last = rows[-1]
                print(f"[train] trial {trial + 1}/{config.trials}: "
                      f"val_loss {last.val_loss:.4f} val_acc {last.val_acc:.4f}")
    rows = summarize(per_trial, _report_epochs(config))
    write_summary_csv(rows, summary_path(config.out_dir))
    print(f"[train] wrote {summary_path(config.out_dir)}")
    return 0


def recompute_summary(out_dir, trials, report_epochs):
    """Recompute summary rows from the per-trial CSV files on disk."""
    per_trial = [read_metrics_csv(metrics_path(out_dir, t)) for t in range(trials)]
    return summarize(per_trial, report_epochs)


def run_eval(config):
    """Evaluate a checkpoint on the held-out (or explicitly given) data."""
    model = build_model(config.model, seed=config.seed, tp_eps=config.tp_eps,
                        jacobian_mode=config.jacobian_mode)
    load_checkpoint(model, config.checkpoint)
    if config.eval_images and config.eval_labels:
        images, labels = load_dataset(config.eval_images, config.eval_labels)
    elif config.train_images and config.train_labels:
        split = _build_split(config, config.seed)
        images, labels = split.val_images, split.val_labels
    else:
        raise ConfigError("eval needs eval_images/eval_labels or "
                          "train_images/train_labels to take the split from")
    loss, acc = model.evaluate(images, labels, batch_size=config.batch_size)
    print(f"[eval] samples {len(labels)} loss {_fmt(loss)} accuracy {_fmt(acc)}")
    return 0
