"""Layer objects wrapping the tensor primitives.

A layer owns named parameter arrays in ``params``. ``forward`` returns the
output together with a cache; ``backward`` consumes that cache and returns
the input gradient plus a dict of parameter gradients keyed like ``params``.
Layers hold no per-call state, so one instance may serve concurrent
forward passes.
"""

import numpy as np

from . import tensor as T
from .errors import ShapeError


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_out, cache, grad_mode="ste"):
        raise NotImplementedError

    def output_shape(self, in_shape):
        return in_shape

    def hyper(self):
        """Kind-specific hyperparameters, serialized into checkpoints."""
        return {}

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in self.hyper().items())
        return f"{type(self).__name__}({hp})"


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1,
                 rng=None, bias=True):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size = kernel_size
        self.spec = T.ConvSpec(stride, padding)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = he_normal(rng, shape, fan_in)
        if bias:
            self.params["bias"] = np.zeros(out_channels)

    def forward(self, x):
        out, cols = T.conv2d_with_cols(x, self.params["weight"], self.params.get("bias"), self.spec)
        return out, (x, cols)

    def backward(self, grad_out, cache, grad_mode="ste"):
        x, cols = cache
        gx, gw, gb = T.conv2d_backward(grad_out, x, self.params["weight"], self.spec, cols)
        grads = {"weight": gw}
        if "bias" in self.params:
            grads["bias"] = gb
        return gx, grads

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got shape {in_shape}")
        k = self.kernel_size
        return self.out_channels, self.spec.out_size(h, k), self.spec.out_size(w, k)

    def hyper(self):
        return {
            "in": self.in_channels, "out": self.out_channels, "k": self.kernel_size,
            "stride": self.spec.stride, "pad": self.spec.padding,
            "bias": int("bias" in self.params),
        }


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return T.relu(x), x

    def backward(self, grad_out, cache, grad_mode="ste"):
        return T.relu_backward(grad_out, cache), {}


class MaxPool2(Layer):
    kind = "maxpool"

    def forward(self, x):
        return T.maxpool2(x), x

    def backward(self, grad_out, cache, grad_mode="ste"):
        return T.maxpool2_backward(grad_out, cache), {}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 needs even spatial dims, got shape {in_shape}")
        return c, h // 2, w // 2


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache, grad_mode="ste"):
        return grad_out.reshape(cache), {}

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = he_normal(rng, (in_features, out_features), in_features)
        self.params["bias"] = np.zeros(out_features)

    def forward(self, x):
        return T.dense(x, self.params["weight"], self.params["bias"]), x

    def backward(self, grad_out, cache, grad_mode="ste"):
        gx, gw, gb = T.dense_backward(grad_out, cache, self.params["weight"])
        return gx, {"weight": gw, "bias": gb}

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} features, got shape {in_shape}")
        return (self.out_features,)

    def hyper(self):
        return {"in": self.in_features, "out": self.out_features}


class ResidualBlock(Layer):
    """``skip(x) + conv2(relu(conv1(x)))`` with a 1x1 projection skip on width change."""

    kind = "residual-block"

    def __init__(self, in_channels, out_channels, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.conv1 = Conv2D(in_channels, out_channels, 3, 1, 1, rng=rng)
        self.conv2 = Conv2D(out_channels, out_channels, 3, 1, 1, rng=rng)
        self.proj = (
            Conv2D(in_channels, out_channels, 1, 1, 0, rng=rng, bias=False)
            if in_channels != out_channels else None
        )
        # Shared arrays: mutating self.params[...] in place updates the convs.
        for prefix, conv in self._convs():
            for name, arr in conv.params.items():
                self.params[f"{prefix}.{name}"] = arr

    def _convs(self):
        convs = [("conv1", self.conv1), ("conv2", self.conv2)]
        if self.proj is not None:
            convs.append(("proj", self.proj))
        return convs

    def _sync(self):
        for prefix, conv in self._convs():
            for name in conv.params:
                conv.params[name] = self.params[f"{prefix}.{name}"]

    def forward(self, x):
        self._sync()
        h1, c1 = self.conv1.forward(x)
        a, ca = T.relu(h1), h1
        h2, c2 = self.conv2.forward(a)
        if self.proj is not None:
            skip, cp = self.proj.forward(x)
        else:
            skip, cp = x, None
        return h2 + skip, (c1, ca, c2, cp)

    def backward(self, grad_out, cache, grad_mode="ste"):
        self._sync()
        c1, ca, c2, cp = cache
        grads = {}
        ga, g2 = self.conv2.backward(grad_out, c2)
        gh1 = T.relu_backward(ga, ca)
        gx, g1 = self.conv1.backward(gh1, c1)
        for name, g in g1.items():
            grads[f"conv1.{name}"] = g
        for name, g in g2.items():
            grads[f"conv2.{name}"] = g
        if self.proj is not None:
            gxs, gp = self.proj.backward(grad_out, cp)
            grads["proj.weight"] = gp["weight"]
            gx = gx + gxs
        else:
            gx = gx + grad_out
        return gx, grads

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"residual block expects {self.in_channels} channels, got {in_shape}")
        return self.out_channels, h, w

    def hyper(self):
        return {"in": self.in_channels, "out": self.out_channels}
