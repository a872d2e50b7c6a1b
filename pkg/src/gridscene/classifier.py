"""Small convnet labeling grid cells; gates the constraint-satisfaction metric.

Three stride-2 convolutions, global average pooling, and a linear head,
trained by MSE against one-hot label rows.  A trained classifier is only
usable for metrics when its held-out accuracy clears ACCURACY_GATE; the
gate is checked both after training and again at load time.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ClassifierConfig
from .layers import Affine, Conv
from .optim import AdamState, adam_step, clip_global_norm
from .tensor import ContractError, ShapeError, Tensor, Tape, backward

ACCURACY_GATE = 0.95


class CellClassifier:
    def __init__(self, cell, channels, rng, widths=(16, 32, 64), num_labels=10, dtype=np.float64):
        if cell % (1 << len(widths)):
            raise ShapeError(f"cell size {cell} not divisible by 2^{len(widths)}")
        self.cell = cell
        self.channels = channels
        self.widths = tuple(widths)
        self.num_labels = num_labels
        self.dtype = dtype
        self.convs = []
        c_prev = channels
        for c in widths:
            self.convs.append(Conv(c_prev, c, 4, 2, 1, rng, dtype))
            c_prev = c
        self.head = Affine(widths[-1], num_labels, rng, dtype)

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != (self.channels, self.cell, self.cell):
            raise ShapeError(
                f"expected (batch, {self.channels}, {self.cell}, {self.cell}), got {x.shape}"
            )
        h = x
        for conv in self.convs:
            h = ops.relu(conv(h))
        h = ops.avg_pool2d(h, (h.shape[2], h.shape[3]))
        h = ops.reshape(h, (h.shape[0], self.widths[-1]))
        return self.head(h)

    def predict_batch(self, cells: np.ndarray) -> np.ndarray:
        """(batch, h, w, C) cell images -> label array."""
        x = Tensor(np.transpose(cells, (0, 3, 1, 2)), dtype=self.dtype)
        return np.argmax(self.logits(x).data, axis=1)

    def predict(self, cell: np.ndarray) -> int:
        return int(self.predict_batch(np.asarray(cell)[None])[0])

    def accuracy(self, cells: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict_batch(cells) == np.asarray(labels)))

    def named(self, prefix="clf") -> dict[str, Tensor]:
        out = {}
        for i, conv in enumerate(self.convs):
            out.update(conv.named(f"{prefix}.conv{i}"))
        out.update(self.head.named(f"{prefix}.head"))
        return out


def train_cell_classifier(
    cells: np.ndarray, labels: np.ndarray, config: ClassifierConfig, log=None
) -> tuple[CellClassifier, float, list[float]]:
    """Train on (count, h, w, C) cells; returns (model, held-out accuracy, curve)."""
    config.validate()
    cells = np.asarray(cells, float)
    labels = np.asarray(labels)
    if len(cells) != len(labels):
        raise ShapeError(f"{len(cells)} cells vs {len(labels)} labels")
    held = max(1, int(len(cells) * config.holdout))
    if len(cells) - held < 1:
        raise ContractError(f"{len(cells)} cells leave no training data after holdout")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(cells))
    train_idx, held_idx = order[held:], order[:held]
    num_labels = int(labels.max()) + 1
    clf = CellClassifier(cells.shape[1], cells.shape[3], rng, num_labels=num_labels)

    data = np.transpose(cells[train_idx], (0, 3, 1, 2))
    onehot = np.eye(num_labels)[labels[train_idx]]
    params = clf.named()
    opt = AdamState(params, lr=config.learning_rate)
    curve = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(data))
        total, batches = 0.0, 0
        for start in range(0, len(data), config.batch_size):
            take = perm[start : start + config.batch_size]
            with Tape() as tape:
                for p in params.values():
                    tape.watch(p)
                loss = ops.mse(clf.logits(Tensor(data[take])), Tensor(onehot[take]))
            grads = backward(tape, loss)
            named_grads = {name: grads[p] for name, p in params.items()}
            clip_global_norm(named_grads, 1.0)
            adam_step(params, named_grads, opt)
            total += loss.item()
            batches += 1
        curve.append(total / batches)
        if log:
            log(f"classifier epoch {epoch}: mse {curve[-1]:.6f}")
    held_acc = clf.accuracy(cells[held_idx], labels[held_idx])
    return clf, held_acc, curve


def save_classifier(path, clf: CellClassifier, accuracy: float) -> None:
    meta = {
        "kind": "classifier",
        "cell": clf.cell,
        "channels": clf.channels,
        "widths": list(clf.widths),
        "num_labels": clf.num_labels,
        "accuracy": accuracy,
    }
    save_checkpoint(path, {k: v.data for k, v in clf.named().items()}, meta)


def load_classifier(path) -> CellClassifier:
    """Rebuild a stored classifier; refuses models below the accuracy gate."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "classifier":
        raise ContractError(f"{path} holds a {meta.get('kind')!r} checkpoint, not a classifier")
    if meta["accuracy"] < ACCURACY_GATE:
        raise ContractError(
            f"classifier held-out accuracy {meta['accuracy']:.4f} below the "
            f"{ACCURACY_GATE} gate; retrain before using it for metrics"
        )
    clf = CellClassifier(
        meta["cell"],
        meta["channels"],
        np.random.default_rng(0),
        widths=tuple(meta["widths"]),
        num_labels=meta["num_labels"],
    )
    for name, param in clf.named().items():
        param.data = tensors[name]
    return clf
