# Checkpoints and reproducibility: train briefly, save the parameters,
# reload them into a freshly built network, and show that (a) the restored
# model evaluates identically and (b) rebuilding and retraining with the
# same seed reproduces the run bit for bit.
# Run: python demos/04_checkpoints_and_reproducibility.py
#
# The CLI equivalents are:
#   tenproj train --config run.cfg                        (writes .ckpt files)
#   tenproj eval  --config run.cfg --checkpoint runs/model_trial01.ckpt

import os
import tempfile

import numpy as np

from tenproj import build_model
from tenproj.checkpoint import load_checkpoint, save_checkpoint
from tenproj.nn import RMSProp

rng = np.random.default_rng(0)

# A quick synthetic task: the class index sets which block of the image
# lights up, so a few dozen steps are enough to fit it.
n = 300
labels = rng.integers(0, 10, size=n)
images = rng.random((n, 28, 28, 1)) * 0.15
for i, label in enumerate(labels):
    r, c = (int(label) % 5) * 5, (int(label) // 5) * 10
    images[i, r:r + 5, c:c + 5, 0] = 0.9
train_x, train_y = images[:240], labels[:240]
val_x, val_y = images[240:], labels[240:]


def train(seed, steps=30):
    model = build_model("model1_tp", seed=seed)
    optimizer = RMSProp()
    losses = []
    for step in range(steps):
        sel = np.random.default_rng([seed, step]).choice(len(train_y), size=60,
                                                         replace=False)
        losses.append(model.train_step(train_x[sel], train_y[sel], optimizer, step))
    return model, losses


# %% Train and checkpoint.
model, losses = train(seed=1)
loss, acc = model.evaluate(val_x, val_y)
print(f"after {len(losses)} steps: val loss {loss:.4f}, val accuracy {acc:.4f}")

ckpt = os.path.join(tempfile.mkdtemp(prefix="tenproj_demo_"), "model.ckpt")
save_checkpoint(model, ckpt)
print("checkpoint written:", ckpt, f"({os.path.getsize(ckpt):,} bytes)")

# %% A fresh network starts from different weights...
fresh = build_model("model1_tp", seed=99)
fresh_loss, fresh_acc = fresh.evaluate(val_x, val_y)
print(f"fresh model before loading: val loss {fresh_loss:.4f}, "
      f"val accuracy {fresh_acc:.4f}")

# ...and becomes the trained model after loading the checkpoint.
load_checkpoint(fresh, ckpt)
restored_loss, restored_acc = fresh.evaluate(val_x, val_y)
print(f"after loading: val loss {restored_loss:.4f}, "
      f"val accuracy {restored_acc:.4f}")
assert restored_loss == loss and restored_acc == acc
print("restored evaluation is identical, value for value")

# %% Reproducibility: the same seed replays the whole run exactly.
again, losses_again = train(seed=1)
assert losses == losses_again
assert all(np.array_equal(a, b) for a, b in zip(model.params(), again.params()))
print("retraining with the same seed reproduced every loss and parameter "
      "bit for bit")
