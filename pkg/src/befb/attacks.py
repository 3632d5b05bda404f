"""FGSM, PGD and Gaussian-noise corruption.

Budgets ``epsilon`` and ``stepsize`` are given in pixel units (0-255) and
divided by 255 internally; images live on the [0, 1] scale.
"""

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .branch import GRAD_MODES

ATTACK_KINDS = ("fgsm", "pgd", "gaussian")

# Per-dataset FGSM/PGD budgets in pixel units.
STANDARD_BUDGETS = {
    "cifar10": {"epsilon": 8.0, "steps": 8, "stepsize": 2.0},
    "mnist": {"epsilon": 80.0, "steps": 8, "stepsize": 20.0},
    "svhn": {"epsilon": 8.0, "steps": 8, "stepsize": 2.0},
    "tinyin": {"epsilon": 8.0, "steps": 8, "stepsize": 2.0},
}
GAUSSIAN_SIGMA = {"cifar10": 0.08, "mnist": 0.35}


@dataclass
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 8.0
    steps: int = 8
    stepsize: float = 2.0
    grad_mode: str = "zero"
    random_init: bool = True
    sigma: float = 0.0
    mean: float = 0.0
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"unknown gradient mode {self.grad_mode!r}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.kind == "pgd":
            if self.steps < 1:
                raise ValueError(f"PGD needs at least one step, got {self.steps}")
            if self.stepsize > self.epsilon:
                warnings.warn(f"PGD stepsize {self.stepsize} exceeds epsilon {self.epsilon}")
        if self.kind == "gaussian" and self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    @classmethod
    def for_dataset(cls, kind, dataset, **overrides):
        params = dict(STANDARD_BUDGETS[dataset]) if kind != "gaussian" else {}
        if kind == "gaussian":
            params["sigma"] = GAUSSIAN_SIGMA[dataset]
        params.update(overrides)
        return cls(kind=kind, **params)

    @property
    def eps(self):
        return self.epsilon / 255.0

    @property
    def alpha(self):
        return self.stepsize / 255.0

    @property
    def label(self):
        if self.kind == "gaussian":
            return f"gaussian(sigma={self.sigma:g})"
        if self.kind == "fgsm":
            return f"fgsm(eps={self.epsilon:g},{self.grad_mode})"
        return f"pgd(eps={self.epsilon:g},steps={self.steps},step={self.stepsize:g},{self.grad_mode})"

    def to_dict(self):
        return asdict(self)


def _batched_gradient(net, x, labels, grad_mode, batch_size):
    out = np.empty_like(x)
    for i in range(0, len(x), batch_size):
        sl = slice(i, i + batch_size)
        # input_gradient divides by the batch size; only the sign is used.
        out[sl] = net.input_gradient(x[sl], labels[sl], grad_mode)
    return out


def fgsm(net, x, labels, cfg):
    """``clip01(x + eps * sign(grad))`` with the gradient taken under ``cfg.grad_mode``."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if cfg.eps == 0:
        return x.copy()
    g = _batched_gradient(net, x, labels, cfg.grad_mode, cfg.batch_size)
    return np.clip(x + cfg.eps * np.sign(g), 0.0, 1.0)


def pgd(net, x, labels, cfg, rng=None, on_step=None):
    """L-infinity PGD: signed-gradient ascent steps projected onto the eps-ball in [0, 1].

    ``on_step(step, x_adv)`` is called after the random start (step 0) and after
    each of the ``cfg.steps`` iterations.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    eps, alpha = cfg.eps, cfg.alpha
    lo, hi = np.maximum(x - eps, 0.0), np.minimum(x + eps, 1.0)
    if cfg.random_init and eps > 0:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        adv = np.clip(x + rng.uniform(-eps, eps, size=x.shape), lo, hi)
    else:
        adv = x.copy()
    if on_step is not None:
        on_step(0, adv)
    for step in range(1, cfg.steps + 1):
        g = _batched_gradient(net, adv, labels, cfg.grad_mode, cfg.batch_size)
        adv = np.clip(adv + alpha * np.sign(g), lo, hi)
        if on_step is not None:
            on_step(step, adv)
    return adv


def gaussian_perturb(x, cfg, rng=None):
    """Add i.i.d. N(mean, sigma^2) noise and clip to [0, 1]."""
    if cfg.sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {cfg.sigma}")
    x = np.asarray(x, dtype=np.float64)
    if cfg.sigma == 0 and cfg.mean == 0:
        return x.copy()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return np.clip(x + rng.normal(cfg.mean, cfg.sigma, size=x.shape), 0.0, 1.0)


def perturb(net, x, labels, cfg, rng=None):
    """Dispatch on ``cfg.kind``."""
    if cfg.kind == "fgsm":
        return fgsm(net, x, labels, cfg)
    if cfg.kind == "pgd":
        return pgd(net, x, labels, cfg, rng)
    return gaussian_perturb(x, cfg, rng)
