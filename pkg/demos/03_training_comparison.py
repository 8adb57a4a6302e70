# End-to-end training demo: the projection-reduction CNN vs its
# average-pooling twin, trained side by side with shared per-trial seeds.
# With the Fashion-MNIST IDX files present (see README) this runs a small
# slice of the real comparison protocol; without them it falls back to a
# synthetic dataset so the walkthrough always runs.
# Run: python demos/03_training_comparison.py

import os
import tempfile

import numpy as np

from tenproj import build_model, count_params
from tenproj.data import load_dataset, split_and_batch, write_idx_images, write_idx_labels
from tenproj.nn import RMSProp

rng = np.random.default_rng(0)


def locate_or_synthesize():
    for base in (os.environ.get("TENPROJ_DATA"), "data/fashion-mnist"):
        if not base:
            continue
        for suffix in ("", ".gz"):
            images = os.path.join(base, "train-images-idx3-ubyte" + suffix)
            labels = os.path.join(base, "train-labels-idx1-ubyte" + suffix)
            if os.path.exists(images) and os.path.exists(labels):
                print(f"using dataset under {base}")
                return images, labels, 4000, 800
    print("real dataset not found; synthesizing a stand-in (class = bright block)")
    tmp = tempfile.mkdtemp(prefix="tenproj_demo_")
    labels_arr = rng.integers(0, 10, size=1200)
    images_arr = rng.integers(0, 40, size=(1200, 28, 28), dtype=np.uint8)
    for i, label in enumerate(labels_arr):
        r, c = (int(label) % 5) * 5, (int(label) // 5) * 10
        images_arr[i, r:r + 5, c:c + 5] = 220
    images = os.path.join(tmp, "train-images.idx")
    labels = os.path.join(tmp, "train-labels.idx")
    write_idx_images(images, images_arr)
    write_idx_labels(labels, labels_arr.astype(np.uint8))
    return images, labels, 900, 200


images_path, labels_path, train_limit, val_limit = locate_or_synthesize()
images, labels = load_dataset(images_path, labels_path)
print(f"loaded {images.shape[0]} images of shape {images.shape[1:]}")

# %% Both architectures reduce (14, 14, 64) activations to (7, 7, 64); one
# learns the reduction (196 extra parameters), the other averages.
for name in ("model1_tp", "model2_avgpool"):
    model = build_model(name)
    print(f"{name}: {count_params(model):,} parameters, "
          f"per-layer {[c for c in model.layer_param_counts() if c]}")

# %% Train both for a few epochs with identical data and seed.
EPOCHS, BATCH, SEED = 3, 100, 0
histories = {}
for name in ("model1_tp", "model2_avgpool"):
    split = split_and_batch(images, labels, val_fraction=1 / 6, batch_size=BATCH,
                            seed=SEED, train_limit=train_limit, val_limit=val_limit)
    model = build_model(name, seed=SEED)
    optimizer = RMSProp()   # lr 1e-3, rho 0.9, delta 1e-7
    step = 0
    history = []
    for epoch in range(1, EPOCHS + 1):
        for xb, yb in split.batches(epoch):
            model.train_step(xb, yb, optimizer, step)
            step += 1
        val_loss, val_acc = model.evaluate(split.val_images, split.val_labels)
        history.append((epoch, val_loss, val_acc))
        print(f"{name} epoch {epoch}: val loss {val_loss:.4f}, "
              f"val accuracy {val_acc:.4f}")
    histories[name] = history

# %% Side-by-side validation loss: the projection model usually comes down
# faster in the early epochs.
print("\nepoch  projection-loss  pooling-loss")
for (epoch, l1, _), (_, l2, _) in zip(histories["model1_tp"],
                                      histories["model2_avgpool"]):
    print(f"{epoch:>5}  {l1:>15.4f}  {l2:>12.4f}")
