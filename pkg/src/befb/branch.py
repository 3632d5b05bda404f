"""Binary edge feature branch: constrained edge kernels, Sobel and threshold layers.

Each edge kernel is a 3x3 grid whose entries are split into a positive side
(values in [0, 1]), a zero line (exactly 0) and a negative side (values in
[-1, 0]). The four kinds differ only in the orientation of that split.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import Flatten, Layer

__all__ = [
    "EDGE_KINDS",
    "EdgeKernel",
    "edge_masks",
    "init_edge_kernel",
    "project_edge_kernel",
    "check_edge_kernel",
    "sobel_forward",
    "sobel_backward",
    "threshold_forward",
    "threshold_backward",
    "GRAD_MODES",
    "Grayscale",
    "SobelLayer",
    "ThresholdLayer",
    "build_befb_branch",
]

EDGE_KINDS = ("horizontal", "vertical", "pos_diagonal", "neg_diagonal")
GRAD_MODES = ("ste", "zero", "sigmoid")

# 0-based (row, col) positions of the positive and negative sides; the rest is zero.
_PATTERNS = {
    "horizontal": ([(0, 0), (0, 1), (0, 2)], [(2, 0), (2, 1), (2, 2)]),
    "vertical": ([(0, 0), (1, 0), (2, 0)], [(0, 2), (1, 2), (2, 2)]),
    "pos_diagonal": ([(0, 0), (0, 1), (1, 0)], [(1, 2), (2, 1), (2, 2)]),
    "neg_diagonal": ([(0, 1), (0, 2), (1, 2)], [(1, 0), (2, 0), (2, 1)]),
}
# The position getting the full Sobel weight (1.0) on each side.
_PEAKS = {
    "horizontal": ((0, 1), (2, 1)),
    "vertical": ((1, 0), (1, 2)),
    "pos_diagonal": ((0, 0), (2, 2)),
    "neg_diagonal": ((0, 2), (2, 0)),
}


def _check_kind(kind):
    if kind not in _PATTERNS:
        raise ValueError(f"unknown edge kernel kind {kind!r}; expected one of {EDGE_KINDS}")


def edge_masks(kind):
    """Boolean (positive, zero, negative) masks for ``kind``."""
    _check_kind(kind)
    pos, neg = np.zeros((3, 3), bool), np.zeros((3, 3), bool)
    for r, c in _PATTERNS[kind][0]:
        pos[r, c] = True
    for r, c in _PATTERNS[kind][1]:
        neg[r, c] = True
    return pos, ~(pos | neg), neg


@dataclass
class EdgeKernel:
    kind: str
    weights: np.ndarray

    def __post_init__(self):
        _check_kind(self.kind)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (3, 3):
            raise ShapeError(f"edge kernel weights must be 3x3, got {self.weights.shape}")

    def is_feasible(self):
        return check_edge_kernel(self.kind, self.weights)


def _project(kind, w):
    pos, zero, neg = edge_masks(kind)
    out = np.where(pos, np.clip(w, 0.0, 1.0), w)
    out = np.where(neg, np.clip(out, -1.0, 0.0), out)
    out[zero] = 0.0
    # clip(-0.0, 0, 1) keeps the sign bit; normalise so zeros compare bit-exact.
    return out + 0.0


def project_edge_kernel(k):
    """Clamp each weight into its interval and set the zero line to exactly 0."""
    return EdgeKernel(k.kind, _project(k.kind, k.weights))


def check_edge_kernel(kind, w):
    w = np.asarray(w, dtype=np.float64)
    pos, zero, neg = edge_masks(kind)
    return bool(
        np.all(w[zero] == 0.0)
        and np.all((w[pos] >= 0.0) & (w[pos] <= 1.0))
        and np.all((w[neg] >= -1.0) & (w[neg] <= 0.0))
    )


def init_edge_kernel(kind, rng=None, jitter=0.05):
    """Sobel-shaped kernel (0.5, 1, 0.5 on each side) plus uniform jitter, projected."""
    pos, _, neg = edge_masks(kind)
    w = np.zeros((3, 3))
    w[pos] = 0.5
    w[neg] = -0.5
    p_peak, n_peak = _PEAKS[kind]
    w[p_peak], w[n_peak] = 1.0, -1.0
    if jitter:
        rng = rng if rng is not None else np.random.default_rng()
        w = w + rng.uniform(-jitter, jitter, size=(3, 3))
    return EdgeKernel(kind, _project(kind, w))


def sobel_forward(x, kernels):
    """Shape-preserving sum of per-kernel correlations of single-channel ``x``.

    ``kernels`` is a (K, 3, 3) stack; the K parallel paths are fused by addition.
    """
    x = T.as_tensor(x)
    if x.shape[1] != 1:
        raise ShapeError(f"Sobel layer needs single-channel input, got shape {x.shape}")
    fused = np.asarray(kernels).sum(axis=0)[None, None]
    return T.conv2d(x, fused, None, T.ConvSpec(1, 1))


def sobel_backward(grad_out, x, kernels):
    """Return ``(grad_input, grad_kernels)``; every parallel path sees the same gradient."""
    kernels = np.asarray(kernels)
    fused = kernels.sum(axis=0)[None, None]
    gx, gw, _ = T.conv2d_backward(grad_out, x, fused, T.ConvSpec(1, 1))
    return gx, np.repeat(gw[0], kernels.shape[0], axis=0)


def _centers(x, t):
    return t * x.max(axis=(2, 3), keepdims=True)


def threshold_forward(x, t):
    """Per-channel binarisation at ``t`` times the channel maximum.

    Channels whose maximum is not positive produce all zeros.
    Returns ``(out, centers)`` where ``centers`` has shape (N, C, 1, 1).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold coefficient must lie in [0, 1], got {t}")
    x = T.as_tensor(x)
    x0 = _centers(x, t)
    live = x.max(axis=(2, 3), keepdims=True) > 0.0
    out = ((x >= x0) & live).astype(np.float64)
    return out, x0


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def threshold_backward(grad_out, x, centers, mode, sigmoid_sign=1.0):
    """Surrogate gradient of the threshold layer.

    ``ste`` passes ``grad_out`` through, ``zero`` blocks it, and ``sigmoid``
    scales it by the derivative of a unit-slope sigmoid centred at the
    channel threshold. ``sigmoid_sign=-1`` uses the decreasing orientation.
    """
    if mode == "ste":
        return grad_out
    if mode == "zero":
        return np.zeros_like(grad_out)
    if mode == "sigmoid":
        s = _sigmoid(np.asarray(x) - centers)
        return sigmoid_sign * grad_out * s * (1.0 - s)
    raise ValueError(f"unknown threshold gradient mode {mode!r}; expected one of {GRAD_MODES}")


class Grayscale(Layer):
    """Channel mean, producing a single-channel map."""

    kind = "grayscale"

    def forward(self, x):
        return x.mean(axis=1, keepdims=True), x.shape[1]

    def backward(self, grad_out, cache, grad_mode="ste"):
        return np.repeat(grad_out / cache, cache, axis=1), {}

    def output_shape(self, in_shape):
        return (1,) + tuple(in_shape[1:])


class SobelLayer(Layer):
    """One (``single``) or four (``multiple``) constrained 3x3 kernels fused by addition."""

    kind = "sobel"

    def __init__(self, mode="multiple", rng=None, jitter=0.05):
        super().__init__()
        if mode == "single":
            self.kinds = ("horizontal",)
        elif mode == "multiple":
            self.kinds = EDGE_KINDS
        else:
            raise ValueError(f"Sobel layer mode must be 'single' or 'multiple', got {mode!r}")
        self.mode = mode
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["kernels"] = np.stack(
            [init_edge_kernel(k, rng, jitter).weights for k in self.kinds]
        )

    def edge_kernels(self):
        return [EdgeKernel(k, w.copy()) for k, w in zip(self.kinds, self.params["kernels"])]

    def project(self):
        """Project every kernel onto its constraint set, in place."""
        w = self.params["kernels"]
        for i, kind in enumerate(self.kinds):
            w[i] = _project(kind, w[i])

    def is_feasible(self):
        return all(check_edge_kernel(k, w) for k, w in zip(self.kinds, self.params["kernels"]))

    def forward(self, x):
        return sobel_forward(x, self.params["kernels"]), x

    def backward(self, grad_out, cache, grad_mode="ste"):
        gx, gk = sobel_backward(grad_out, cache, self.params["kernels"])
        return gx, {"kernels": gk}

    def output_shape(self, in_shape):
        if in_shape[0] != 1:
            raise ShapeError(f"Sobel layer needs single-channel input, got shape {in_shape}")
        return in_shape

    def hyper(self):
        return {"mode": self.mode}


class ThresholdLayer(Layer):
    """Binarising activation; the backward pass uses the requested surrogate.

    Setting ``surrogate`` to ``"sigmoid"`` (with ``frozen_centers``) or
    ``"identity"`` replaces the step function in the forward pass as well.
    Gradient checks use this, because finite differences of a step function
    carry no information.
    """

    kind = "threshold"

    def __init__(self, t=0.8, sigmoid_sign=1.0):
        super().__init__()
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"threshold coefficient must lie in [0, 1], got {t}")
        self.t = float(t)
        self.sigmoid_sign = float(sigmoid_sign)
        self.surrogate = None
        self.frozen_centers = None

    def forward(self, x):
        if self.surrogate == "sigmoid":
            return _sigmoid(x - self.frozen_centers), (x, self.frozen_centers)
        if self.surrogate == "identity":
            return x, (x, None)
        out, x0 = threshold_forward(x, self.t)
        return out, (x, x0)

    def backward(self, grad_out, cache, grad_mode="ste"):
        x, x0 = cache
        if self.surrogate is not None:
            grad_mode = "sigmoid" if self.surrogate == "sigmoid" else "ste"
        return threshold_backward(grad_out, x, x0, grad_mode, self.sigmoid_sign), {}

    def hyper(self):
        return {"t": self.t}


def build_befb_branch(l, t, mode="multiple", rng=None, variant="full"):
    """Grayscale, ``l`` Sobel layers, one threshold layer, flatten.

    ``variant`` selects ablations: ``tlre`` drops the threshold layer and
    ``slre`` drops the Sobel layers.
    """
    if l < 1:
        raise ValueError(f"a BEFB branch needs at least one Sobel layer, got l={l}")
    if variant not in ("full", "tlre", "slre"):
        raise ValueError(f"unknown branch variant {variant!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = [Grayscale()]
    if variant != "slre":
        layers += [SobelLayer(mode, rng) for _ in range(l)]
    if variant != "tlre":
        layers.append(ThresholdLayer(t))
    layers.append(Flatten())
    return layers
