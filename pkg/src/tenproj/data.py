"""IDX dataset ingestion, deterministic splitting/batching, metrics CSV.

IDX files are the big-endian binary containers used by the MNIST family:
a uint32 magic (0x00000803 for image files, 0x00000801 for label files),
uint32 dimension sizes, then raw uint8 payload. Files ending in ``.gz`` are
transparently decompressed. Pixel bytes are mapped to [0, 1] by dividing
by 255; no mean-centering is applied.
"""

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "load_idx_images",
    "load_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "load_dataset",
    "DatasetSplit",
    "split_and_batch",
    "MetricsRow",
    "write_metrics_csv",
    "read_metrics_csv",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_SHUFFLE_STREAM = 0x5F


def _open_maybe_gzip(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _read_exact(f, n, path, what):
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"{path}: truncated IDX file while reading {what}")
    return data


def _read_header(f, path, expected_magic, ndims):
    (magic,) = struct.unpack(">I", _read_exact(f, 4, path, "magic"))
    if magic != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    return struct.unpack(f">{ndims}I", _read_exact(f, 4 * ndims, path, "dimensions"))


def load_idx_images(path):
    """Load an IDX image file as an (n, h, w, 1) float64 array in [0, 1]."""
    with _open_maybe_gzip(path, "rb") as f:
        n, h, w = _read_header(f, path, IDX_IMAGES_MAGIC, 3)
        raw = _read_exact(f, n * h * w, path, "pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w)
    return pixels.astype(np.float64)[..., np.newaxis] / 255.0


def load_idx_labels(path):
    """Load an IDX label file as an (n,) int64 array."""
    with _open_maybe_gzip(path, "rb") as f:
        (n,) = _read_header(f, path, IDX_LABELS_MAGIC, 1)
        raw = _read_exact(f, n, path, "label data")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images):
    """Write a uint8 image array of shape (n, h, w) or (n, h, w, 1) as IDX."""
    images = np.asarray(images)
    if images.ndim == 4 and images.shape[3] == 1:
        images = images[..., 0]
    if images.ndim != 3:
        raise ValueError(f"expected (n, h, w[, 1]) images, got shape {images.shape}")
    images = images.astype(np.uint8)
    with _open_maybe_gzip(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    """Write an integer label array as an IDX label file."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"expected a 1-d label array, got shape {labels.shape}")
    with _open_maybe_gzip(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def load_dataset(images_path, labels_path):
    """Load paired image and label files, checking that counts agree."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} ({images_path}) does not match "
            f"label count {labels.shape[0]} ({labels_path})"
        )
    return images, labels


class DatasetSplit:
    """Seeded train/validation split with per-epoch shuffled minibatches.

    The split is a seeded permutation of all indices: the first
    round(val_fraction * n) become the validation set, fixed thereafter.
    Batch order for epoch e is a pure function of (seed, e), so iteration is
    reproducible regardless of how many epochs were consumed before.
    The last short batch of an epoch is kept.
    """

    def __init__(self, images, labels, val_fraction, batch_size, seed,
                 train_limit=0, val_limit=0):
        images = np.asarray(images)
        labels = np.asarray(labels)
        n = images.shape[0]
        if n == 0:
            raise ValueError("empty dataset")
        if labels.shape[0] != n:
            raise ValueError(f"image count {n} != label count {labels.shape[0]}")
        if not 0.0 < val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.batch_size = int(batch_size)
        self.seed = int(seed)

        n_val = int(round(val_fraction * n))
        perm = np.random.default_rng([self.seed, _SHUFFLE_STREAM]).permutation(n)
        val_idx = perm[:n_val]
        train_idx = perm[n_val:]
        if train_limit:
            train_idx = train_idx[:train_limit]
        if val_limit:
            val_idx = val_idx[:val_limit]
        if len(train_idx) == 0:
            raise ValueError("split left no training samples")
        if len(val_idx) == 0:
            raise ValueError(
                f"split left no validation samples (n={n}, val_fraction={val_fraction})"
            )
        self.train_images = images[train_idx]
        self.train_labels = labels[train_idx]
        self.val_images = images[val_idx]
        self.val_labels = labels[val_idx]

    @property
    def n_train(self):
        return self.train_images.shape[0]

    @property
    def n_batches(self):
        return -(-self.n_train // self.batch_size)

    def epoch_order(self, epoch):
        """The shuffled index order used for the given (1-based) epoch."""
        bitgen = np.random.Philox(counter=[int(epoch), 0, 0, 0],
                                  key=[self.seed, _SHUFFLE_STREAM])
        return np.random.Generator(bitgen).permutation(self.n_train)

    def batches(self, epoch):
        """Yield (images, labels) minibatches for one epoch."""
        order = self.epoch_order(epoch)
        for start in range(0, self.n_train, self.batch_size):
            sel = order[start:start + self.batch_size]
            yield self.train_images[sel], self.train_labels[sel]


def split_and_batch(images, labels, val_fraction, batch_size, seed,
                    train_limit=0, val_limit=0):
    """Build a :class:`DatasetSplit`; thin functional alias."""
    return DatasetSplit(images, labels, val_fraction, batch_size, seed,
                        train_limit=train_limit, val_limit=val_limit)


@dataclass
class MetricsRow:
    """One epoch of training metrics."""

    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    seconds: float


METRICS_HEADER = "epoch,train_loss,val_loss,val_acc,seconds"


def _fmt(x):
    return format(float(x), ".6g")


def write_metrics_csv(rows, path):
    """Write metrics rows with the fixed header, 6 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(METRICS_HEADER + "\n")
        for r in rows:
            f.write(f"{r.epoch},{_fmt(r.train_loss)},{_fmt(r.val_loss)},"
                    f"{_fmt(r.val_acc)},{_fmt(r.seconds)}\n")


def read_metrics_csv(path):
    """Read a metrics CSV back into MetricsRow objects."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRICS_HEADER.split(","):
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        for rec in reader:
            rows.append(MetricsRow(
                epoch=int(rec["epoch"]),
                train_loss=float(rec["train_loss"]),
                val_loss=float(rec["val_loss"]),
                val_acc=float(rec["val_acc"]),
                seconds=float(rec["seconds"]),
            ))
    return rows
