"""Training loops, evaluation under attack and feature-difference metrics."""

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, perturb, pgd
from .errors import NonFiniteLossError

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "test_loss", "test_acc", "seconds")
REPORT_FIELDS = ("model", "dataset", "attack", "epsilon", "grad_mode", "seed", "accuracy")


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 1.0
    lr_decay_every: int = 1
    seed: int = 0
    adversarial: AttackConfig = None
    replace_fraction: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.replace_fraction <= 1.0:
            raise ValueError(f"replace_fraction must lie in [0, 1], got {self.replace_fraction}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def lr_at(self, epoch):
        return self.learning_rate * self.lr_decay ** (epoch // max(self.lr_decay_every, 1))


class SGD:
    """SGD with heavy-ball momentum over a network's parameter dict."""

    def __init__(self, params, momentum=0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads, lr):
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.momentum
            v += g
            self.params[name] -= lr * v


def _accuracy_and_loss(net, ds, batch_size=256):
    if len(ds) == 0:
        return float("nan"), float("nan")
    logits = net.logits(ds.images, batch_size)
    loss, _ = T.softmax_cross_entropy(logits, ds.labels)
    return float(np.mean(logits.argmax(1) == ds.labels)), loss


def train(net, train_ds, cfg, test_ds=None, on_step=None, on_epoch=None):
    """Train ``net`` in place and return ``(net, history)``.

    Edge kernels are projected back onto their constraint sets after every
    optimizer step. When ``cfg.adversarial`` is set, ``replace_fraction`` of
    each batch is swapped for PGD examples crafted against the current
    weights with straight-through threshold gradients.
    """
    rng = np.random.default_rng(cfg.seed)
    at_rng = np.random.default_rng([cfg.seed, 1])
    params = net.parameters()
    opt = SGD(params, cfg.momentum)
    at_cfg = None
    if cfg.adversarial is not None and cfg.replace_fraction > 0:
        at_cfg = replace(cfg.adversarial, kind="pgd", grad_mode="ste")
    history = []
    n = len(train_ds)
    x_all, y_all = train_ds.images, train_ds.labels
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            if at_cfg is not None:
                k = int(round(cfg.replace_fraction * len(idx)))
                if k:
                    pick = np.sort(at_rng.choice(len(idx), size=k, replace=False))
                    xb = xb.copy()
                    xb[pick] = pgd(net, xb[pick], yb[pick], at_cfg, rng=at_rng)
            loss, logits, grads, _ = net.loss_and_grads(xb, yb, "ste")
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, b, loss)
            opt.step(grads, lr)
            net.project_constraints()
            net.mark_updated()
            loss_sum += loss * len(idx)
            correct += int(np.sum(logits.argmax(1) == yb))
            step += 1
            if on_step is not None:
                on_step(step, net, xb)
        record = {
            "epoch": epoch + 1, "lr": lr,
            "train_loss": loss_sum / max(n, 1), "train_acc": correct / max(n, 1),
            "test_loss": float("nan"), "test_acc": float("nan"),
        }
        record["seconds"] = time.perf_counter() - t0
        if test_ds is not None:
            record["test_acc"], record["test_loss"] = _accuracy_and_loss(net, test_ds)
        log.info("%s epoch %d: %s", net.name, epoch + 1, record)
        history.append(record)
        if on_epoch is not None:
            on_epoch(epoch + 1, net, record)
    return net, history


def adversarial_train(net, train_ds, cfg, test_ds=None, **kwargs):
    if cfg.adversarial is None:
        raise ValueError("adversarial_train needs cfg.adversarial to be set")
    return train(net, train_ds, cfg, test_ds, **kwargs)


@dataclass
class EvalReport:
    model: str
    dataset: str
    clean_accuracy: float
    class_totals: list
    clean_class_correct: list
    robust: list = field(default_factory=list)
    seed: int = 0
    epoch_seconds: list = field(default_factory=list)

    def robust_accuracy(self, label):
        for row in self.robust:
            if row["attack"] == label:
                return row["accuracy"]
        raise KeyError(label)

    def rows(self):
        base = {"model": self.model, "dataset": self.dataset, "seed": self.seed}
        yield dict(base, attack="clean", epsilon=0.0, grad_mode="", accuracy=self.clean_accuracy)
        for row in self.robust:
            yield dict(base, attack=row["attack"], epsilon=row["epsilon"],
                       grad_mode=row["grad_mode"], accuracy=row["accuracy"])

    def to_dict(self):
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path, append=False):
        write_rows(path, self.rows(), REPORT_FIELDS, append)


def write_rows(path, rows, fields, append=False):
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        if not exists:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_history_csv(history, path):
    write_rows(path, history, HISTORY_FIELDS)


def _per_class(pred, labels, k):
    return np.bincount(labels[pred == labels], minlength=k).tolist()


def evaluate(net, ds, attacks=(), seed=0, batch_size=256, history=None):
    """Clean accuracy plus accuracy on each attack's perturbed copy of ``ds``.

    Does not modify ``net``.
    """
    x, y = ds.images, ds.labels
    k = net.class_count
    pred = net.predict(x, batch_size)
    report = EvalReport(
        model=net.name, dataset=ds.name,
        clean_accuracy=float(np.mean(pred == y)) if len(ds) else float("nan"),
        class_totals=np.bincount(y, minlength=k).tolist(),
        clean_class_correct=_per_class(pred, y, k), seed=seed,
        epoch_seconds=[h["seconds"] for h in history or []],
    )
    for cfg in attacks:
        rng = np.random.default_rng([seed, cfg.seed])
        x_adv = perturb(net, x, y, cfg, rng)
        p = net.predict(x_adv, batch_size)
        report.robust.append({
            "attack": cfg.label, "kind": cfg.kind,
            "epsilon": cfg.sigma if cfg.kind == "gaussian" else cfg.epsilon,
            "grad_mode": cfg.grad_mode if cfg.kind != "gaussian" else "",
            "accuracy": float(np.mean(p == y)),
            "class_correct": _per_class(p, y, k),
        })
    return report


def feature_diff_metrics(net, x_clean, x_adv, per_sample=False):
    """Texture-feature RMSE and count of differing branch-map entries.

    With ``per_sample`` both values are arrays over the batch; otherwise they
    are pooled over the whole batch.
    """
    if net.branch is None:
        raise ValueError(f"network {net.name!r} has no BEFB branch")
    tex_c, bin_c = net.features(x_clean)
    tex_a, bin_a = net.features(x_adv)
    sq = (tex_c - tex_a) ** 2
    diff = bin_c != bin_a
    if per_sample:
        return np.sqrt(sq.mean(axis=1)), diff.sum(axis=1)
    return float(np.sqrt(sq.mean())), int(diff.sum())
