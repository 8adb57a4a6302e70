"""Command-line entry point.

    tenproj train     --config run.cfg [overrides]
    tenproj eval      --config run.cfg --checkpoint runs/model_trial01.ckpt
    tenproj gradcheck [--jacobian-mode exact|paper] [--seed N]
    tenproj selftest

Every flag mirrors a config-file key and overrides it; see the README for
the full key list. Exit status is 0 iff the requested action succeeded
(gradcheck uses 2 for the documented paper-mode approximation case).
"""

import argparse
import sys

from .config import ConfigError, load_config
from .selfcheck import run_gradcheck, run_selftest
from .training import run_eval, run_train

_OVERRIDE_FLAGS = (
    # (flag, config key, help)
    ("--train-images", "train_images", "path to the training image IDX file"),
    ("--train-labels", "train_labels", "path to the training label IDX file"),
    ("--eval-images", "eval_images", "path to evaluation images (eval command)"),
    ("--eval-labels", "eval_labels", "path to evaluation labels (eval command)"),
    ("--model", "model", "model1_tp, model2_avgpool, or a model spec file"),
    ("--epochs", "epochs", "training epochs per trial"),
    ("--batch-size", "batch_size", "minibatch size"),
    ("--seed", "seed", "base seed; trial t uses seed + t"),
    ("--trials", "trials", "number of repeated trials"),
    ("--lr", "lr", "RMSProp learning rate"),
    ("--rho", "rho", "RMSProp decay"),
    ("--delta", "delta", "RMSProp stabilizer"),
    ("--tp-eps", "tp_eps", "projection-layer eps"),
    ("--jacobian-mode", "jacobian_mode", "projection backward mode: exact or paper"),
    ("--val-fraction", "val_fraction", "fraction of data held out for validation"),
    ("--train-limit", "train_limit", "cap on training samples (0 = all)"),
    ("--val-limit", "val_limit", "cap on validation samples (0 = all)"),
    ("--out-dir", "out_dir", "output directory for metrics and checkpoints"),
    ("--report-epochs", "report_epochs", "comma-separated epochs for the summary"),
    ("--timing", "timing", "per-epoch seconds column: wall or off"),
    ("--checkpoint", "checkpoint", "checkpoint path (eval command)"),
)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tenproj",
        description="Train and inspect CNNs with a trainable orthogonal "
                    "tensor-projection reduction layer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, summary in (
        ("train", "train the configured model for the configured trials"),
        ("eval", "evaluate a checkpoint"),
        ("gradcheck", "verify analytic gradients against finite differences"),
        ("selftest", "run the data-free sanity suite"),
    ):
        p = sub.add_parser(command, help=summary)
        p.add_argument("--config", default=None, help="path to a key = value config file")
        for flag, key, helptext in _OVERRIDE_FLAGS:
            p.add_argument(flag, dest=key, default=None, help=helptext)
    return parser


_COMMANDS = {
    "train": run_train,
    "eval": run_eval,
    "gradcheck": run_gradcheck,
    "selftest": run_selftest,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    overrides = {key: getattr(args, key) for _, key, _ in _OVERRIDE_FLAGS}
    try:
        config = load_config(args.config, overrides, command=args.command)
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
