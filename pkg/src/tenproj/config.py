"""Run configuration: plain-text ``key = value`` files plus CLI overrides.

Config files are line oriented; blank lines and ``#`` comments are ignored.
Unknown keys, malformed lines and type errors are rejected with the line
number. Values given on the command line override file values, which
override the defaults below.
"""

from dataclasses import dataclass, fields, replace

from .linalg import JACOBIAN_MODES

__all__ = ["RunConfig", "ConfigError", "parse_config", "apply_overrides",
           "validate_config", "load_config"]

TIMING_MODES = ("wall", "off")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a command run needs; see the README for key semantics."""

    command: str = "train"
    train_images: str = ""
    train_labels: str = ""
    eval_images: str = ""
    eval_labels: str = ""
    model: str = "model1_tp"
    epochs: int = 15
    batch_size: int = 100
    seed: int = 0
    trials: int = 1
    lr: float = 1e-3
    rho: float = 0.9
    delta: float = 1e-7
    tp_eps: float = 0.01
    jacobian_mode: str = "exact"
    val_fraction: float = 1.0 / 6.0
    train_limit: int = 0
    val_limit: int = 0
    out_dir: str = "runs"
    report_epochs: tuple = (5, 10, 15)
    timing: str = "wall"
    checkpoint: str = ""


_INT_KEYS = {"epochs", "batch_size", "seed", "trials", "train_limit", "val_limit"}
_FLOAT_KEYS = {"lr", "rho", "delta", "tp_eps", "val_fraction"}
_STR_KEYS = {"train_images", "train_labels", "eval_images", "eval_labels",
             "model", "jacobian_mode", "out_dir", "timing", "checkpoint"}
_TUPLE_KEYS = {"report_epochs"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _TUPLE_KEYS
assert _ALL_KEYS == {f.name for f in fields(RunConfig)} - {"command"}


def _convert(key, value, where):
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(
                f"{where}: value for {key!r} must be an integer, got {value!r}"
            ) from None
    if key in _FLOAT_KEYS:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(
                f"{where}: value for {key!r} must be a number, got {value!r}"
            ) from None
    if key in _TUPLE_KEYS:
        try:
            return tuple(int(v) for v in str(value).split(",") if v.strip())
        except ValueError:
            raise ConfigError(
                f"{where}: value for {key!r} must be comma-separated integers, "
                f"got {value!r}"
            ) from None
    return value


def parse_config(text, path="<config>"):
    """Parse config text into a RunConfig (defaults filled in)."""
    config = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        config = replace(config, **{key: _convert(key, value, f"{path}:{lineno}")})
    return config


def apply_overrides(config, overrides):
    """Apply non-None override values (e.g. parsed CLI flags) on top."""
    updates = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _ALL_KEYS and key != "command":
            raise ConfigError(f"unknown override {key!r}")
        updates[key] = _convert(key, value, "command line") if key != "command" else value
    return replace(config, **updates)


def validate_config(config):
    """Raise ConfigError on out-of-range or inconsistent values."""
    def require(cond, msg):
        if not cond:
            raise ConfigError(msg)

    require(config.command in ("train", "eval", "gradcheck", "selftest"),
            f"unknown command {config.command!r}")
    require(config.epochs >= 1, f"epochs must be >= 1, got {config.epochs}")
    require(config.batch_size >= 1, f"batch_size must be >= 1, got {config.batch_size}")
    require(config.trials >= 1, f"trials must be >= 1, got {config.trials}")
    require(config.seed >= 0, f"seed must be >= 0, got {config.seed}")
    require(config.lr > 0, f"lr must be positive, got {config.lr}")
    require(0 <= config.rho < 1, f"rho must be in [0, 1), got {config.rho}")
    require(config.delta > 0, f"delta must be positive, got {config.delta}")
    require(config.tp_eps > 0, f"tp_eps must be positive, got {config.tp_eps}")
    require(0 < config.val_fraction < 1,
            f"val_fraction must be in (0, 1), got {config.val_fraction}")
    require(config.train_limit >= 0, f"train_limit must be >= 0, got {config.train_limit}")
    require(config.val_limit >= 0, f"val_limit must be >= 0, got {config.val_limit}")
    require(config.jacobian_mode in JACOBIAN_MODES,
            f"jacobian_mode must be one of {JACOBIAN_MODES}, got {config.jacobian_mode!r}")
    require(config.timing in TIMING_MODES,
            f"timing must be one of {TIMING_MODES}, got {config.timing!r}")
    require(all(e >= 1 for e in config.report_epochs),
            f"report_epochs must be >= 1, got {config.report_epochs}")
    if config.command == "train":
        require(bool(config.train_images) and bool(config.train_labels),
                "train requires train_images and train_labels paths")
    if config.command == "eval":
        require(bool(config.checkpoint), "eval requires a checkpoint path")
    return config


def load_config(path=None, overrides=None, command="train"):
    """File (optional) + overrides -> validated RunConfig."""
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        config = parse_config(text, path=path)
    else:
        config = RunConfig()
    config = apply_overrides(config, dict(overrides or {}))
    config = replace(config, command=command)
    return validate_config(config)
