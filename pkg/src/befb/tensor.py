"""Dense float64 tensor primitives with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, laid out as
(batch, channel, height, width) for image data and (batch, features) for
dense data. Every function here is pure: inputs are never modified.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "ConvSpec",
    "as_tensor",
    "conv2d",
    "conv2d_with_cols",
    "conv2d_backward",
    "relu",
    "relu_backward",
    "maxpool2",
    "maxpool2_backward",
    "dense",
    "dense_backward",
    "softmax",
    "softmax_cross_entropy",
    "finite_difference",
    "relative_error",
]


@dataclass(frozen=True)
class ConvSpec:
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")

    def out_size(self, size, k):
        return (size + 2 * self.padding - k) // self.stride + 1


def as_tensor(x, ndim=4, name="input"):
    """Return ``x`` as a float64 array with ``ndim`` dimensions."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    return arr


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp, k, stride, ho, wo):
    # (C*k*k, N*ho*wo) matrix built from k*k strided slice copies.
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo))
    hspan, wspan = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + hspan:stride, j:j + wspan:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def _col2im(cols, shape, k, stride, padding, ho, wo):
    n, c, h, w = shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    cols = cols.reshape(c, k, k, n, ho, wo)
    hspan, wspan = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + hspan:stride, j:j + wspan:stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    if padding:
        xp = xp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(xp)


def _conv_shapes(x, kernels, spec, op):
    n, c, h, w = x.shape
    o, kc, kh, kw = kernels.shape
    if kc != c or kh != kw:
        raise ShapeError(
            f"{op}: input shape {x.shape} incompatible with kernel shape {kernels.shape}"
        )
    ho, wo = spec.out_size(h, kh), spec.out_size(w, kw)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"{op}: input shape {x.shape} too small for kernel shape {kernels.shape} with {spec}"
        )
    return n, o, kh, ho, wo


def conv2d_with_cols(x, kernels, bias=None, spec=ConvSpec()):
    """:func:`conv2d` that also returns the im2col matrix for reuse in backward."""
    x = as_tensor(x)
    kernels = as_tensor(kernels, name="kernels")
    n, o, k, ho, wo = _conv_shapes(x, kernels, spec, "conv2d")
    cols = _im2col(_pad(x, spec.padding), k, spec.stride, ho, wo)
    out = kernels.reshape(o, -1) @ cols
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} kernels")
        out += bias[None, :, None, None]
    return out, cols


def conv2d(x, kernels, bias=None, spec=ConvSpec()):
    """Cross-correlate ``x`` (N,C,H,W) with ``kernels`` (O,C,k,k).

    Zero padding is symmetric. No kernel flip is applied.
    """
    return conv2d_with_cols(x, kernels, bias, spec)[0]


def conv2d_backward(grad_out, x, kernels, spec=ConvSpec(), cols=None):
    """Return ``(grad_input, grad_kernels, grad_bias)`` for :func:`conv2d`.

    ``cols`` may carry the matrix from :func:`conv2d_with_cols` to skip rebuilding it.
    """
    grad_out = as_tensor(grad_out, name="grad_out")
    x = as_tensor(x)
    kernels = as_tensor(kernels, name="kernels")
    n, o, k, ho, wo = _conv_shapes(x, kernels, spec, "conv2d_backward")
    if grad_out.shape != (n, o, ho, wo):
        raise ShapeError(
            f"conv2d_backward: grad_out shape {grad_out.shape}, expected {(n, o, ho, wo)}"
        )
    if cols is None:
        cols = _im2col(_pad(x, spec.padding), k, spec.stride, ho, wo)
    g = grad_out.transpose(1, 0, 2, 3).reshape(o, -1)
    grad_kernels = (g @ cols.T).reshape(kernels.shape)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    gcols = kernels.reshape(o, -1).T @ g
    grad_x = _col2im(gcols, x.shape, k, spec.stride, spec.padding, ho, wo)
    return grad_x, grad_kernels, grad_bias


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x):
    # Subgradient at exactly 0 is 0.
    return np.where(np.asarray(x) > 0.0, grad_out, 0.0)


def maxpool2(x):
    """2x2 non-overlapping max pooling."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got shape {x.shape}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def maxpool2_backward(grad_out, x):
    """Route each window's gradient to its argmax (first in row-major order on ties)."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    onehot = np.eye(4)[blocks.argmax(axis=-1)]
    g = onehot * np.asarray(grad_out, dtype=np.float64)[..., None]
    g = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return g.reshape(n, c, h, w)


def dense(x, weights, bias):
    """Affine map of ``x`` (flattened to N x D) by ``weights`` (D x M) plus ``bias``."""
    x = np.asarray(x, dtype=np.float64)
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense: input width {x2.shape[1]} (shape {x.shape}) does not match "
            f"weights shape {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} vs weights shape {weights.shape}")
    return x2 @ weights + bias


def dense_backward(grad_out, x, weights):
    """Return ``(grad_input, grad_weights, grad_bias)``; grad_input has ``x``'s shape."""
    x = np.asarray(x, dtype=np.float64)
    x2 = x.reshape(x.shape[0], -1)
    grad_x = (grad_out @ weights.T).reshape(x.shape)
    return grad_x, x2.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of ``logits`` (N x K) against integer ``labels``.

    Returns ``(loss, grad_logits)`` where the gradient already carries the 1/N.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits shape {logits.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
