"""Two-branch network: backbone and optional BEFB branch merged into a dense head."""

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .branch import SobelLayer, ThresholdLayer, GRAD_MODES
from .errors import ShapeError, StaleCacheError
from .layers import Dense, Flatten, ReLU

def _flat_width(layers, in_shape):
    shape = tuple(in_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
    return int(np.prod(shape))


def build_head(in_features, head_width, class_count, rng):
    return [Dense(in_features, head_width, rng), ReLU(), Dense(head_width, class_count, rng)]


class Network:
    """Backbone features first, then branch features, concatenated into the head.

    ``meta`` holds the builder arguments and is what the checkpoint writer
    serializes as the architecture descriptor.
    """

    def __init__(self, backbone, head, input_shape, class_count, branch=None, meta=None):
        # backbone=None builds a branch-only network (texture width 0).
        self.backbone = list(backbone) if backbone is not None else None
        self.branch = list(branch) if branch else None
        self.head = list(head)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.class_count = int(class_count)
        self.meta = dict(meta or {})
        self.version = 0
        if self.backbone is None:
            if branch is None:
                raise ValueError("a network needs a backbone or a branch")
            self.backbone = []
        elif not self.backbone or self.backbone[-1].kind != "flatten":
            self.backbone.append(Flatten())
        if self.branch is not None and self.branch[-1].kind != "flatten":
            self.branch.append(Flatten())
        expect = self.texture_width + self.branch_width
        head_in = self.head[0]
        if getattr(head_in, "in_features", expect) != expect:
            raise ShapeError(
                f"head input width {head_in.in_features} != backbone width "
                f"{self.texture_width} + branch width {self.branch_width}"
            )
        _flat_width(self.head, (expect,))
        names = list(self.parameters())
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names")

    # ------------------------------------------------------------------ shape info
    @property
    def texture_width(self):
        return _flat_width(self.backbone, self.input_shape) if self.backbone else 0

    @property
    def branch_width(self):
        return 0 if self.branch is None else _flat_width(self.branch, self.input_shape)

    @property
    def name(self):
        return self.meta.get("name", "network")

    def sections(self):
        yield "backbone", self.backbone
        if self.branch is not None:
            yield "branch", self.branch
        yield "head", self.head

    def layers(self):
        for section, layers in self.sections():
            for i, layer in enumerate(layers):
                yield f"{section}.{i}", layer

    def parameters(self):
        """Ordered mapping of unique parameter names to live arrays."""
        out = OrderedDict()
        for prefix, layer in self.layers():
            for name, arr in layer.params.items():
                out[f"{prefix}.{name}"] = arr
        return out

    def parameter_count(self):
        return int(sum(a.size for a in self.parameters().values()))

    def set_parameter(self, name, value):
        target = self.parameters()[name]
        if target.shape != np.shape(value):
            raise ShapeError(f"parameter {name}: shape {np.shape(value)} != {target.shape}")
        target[...] = value
        self.mark_updated()

    def mark_updated(self):
        """Invalidate outstanding caches after parameters change."""
        self.version += 1

    def sobel_layers(self):
        return [l for l in (self.branch or []) if isinstance(l, SobelLayer)]

    def threshold_layers(self):
        return [l for l in (self.branch or []) if isinstance(l, ThresholdLayer)]

    def project_constraints(self):
        for layer in self.sobel_layers():
            layer.project()

    def constraints_satisfied(self):
        return all(layer.is_feasible() for layer in self.sobel_layers())

    # ------------------------------------------------------------------ passes
    def _check_input(self, x):
        x = T.as_tensor(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        return x

    def _texture(self, x):
        if not self.backbone:
            return np.zeros((x.shape[0], 0)), []
        return self._run(self.backbone, x)

    @staticmethod
    def _run(layers, x):
        caches = []
        for layer in layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    @staticmethod
    def _run_back(layers, caches, grad, grad_mode, prefix, grads):
        for i in range(len(layers) - 1, -1, -1):
            grad, g = layers[i].backward(grad, caches[i], grad_mode)
            for name, arr in g.items():
                grads[f"{prefix}.{i}.{name}"] = arr
        return grad

    def features(self, x):
        """Return ``(texture, branch_features)``; the latter is None without a branch."""
        x = self._check_input(x)
        texture, _ = self._texture(x)
        edges = self._run(self.branch, x)[0] if self.branch is not None else None
        return texture, edges

    def forward(self, x):
        x = self._check_input(x)
        texture, bb_cache = self._texture(x)
        if self.branch is not None:
            edges, br_cache = self._run(self.branch, x)
            merged = np.concatenate([texture, edges], axis=1)
        else:
            br_cache, merged = None, texture
        logits, head_cache = self._run(self.head, merged)
        cache = {
            "net": id(self), "version": self.version, "split": texture.shape[1],
            "backbone": bb_cache, "branch": br_cache, "head": head_cache,
        }
        return logits, cache

    def backward(self, cache, grad_logits, grad_mode="ste"):
        """Return ``(param_grads, grad_input)``.

        The threshold layer uses ``grad_mode``; backbone layers always use exact
        gradients. Both branches' input gradients are summed.
        """
        if grad_mode not in GRAD_MODES:
            raise ValueError(f"unknown gradient mode {grad_mode!r}")
        if cache.get("net") != id(self) or cache.get("version") != self.version:
            raise StaleCacheError(
                f"cache from network version {cache.get('version')} used with version {self.version}"
            )
        grads = OrderedDict()
        g = self._run_back(self.head, cache["head"], np.asarray(grad_logits, float),
                           grad_mode, "head", grads)
        split = cache["split"]
        if self.backbone:
            gx = self._run_back(self.backbone, cache["backbone"], g[:, :split], grad_mode,
                                "backbone", grads)
        else:
            gx = np.zeros((g.shape[0],) + self.input_shape)
        if self.branch is not None:
            gx = gx + self._run_back(self.branch, cache["branch"], g[:, split:], grad_mode,
                                     "branch", grads)
        ordered = OrderedDict((name, grads[name]) for name in self.parameters())
        return ordered, gx

    def loss_and_grads(self, x, labels, grad_mode="ste"):
        logits, cache = self.forward(x)
        loss, g = T.softmax_cross_entropy(logits, labels)
        grads, gx = self.backward(cache, g, grad_mode)
        return loss, logits, grads, gx

    def input_gradient(self, x, labels, grad_mode="zero"):
        """Gradient of the mean cross-entropy loss with respect to the input."""
        return self.loss_and_grads(x, labels, grad_mode)[3]

    def logits(self, x, batch_size=256):
        x = self._check_input(x)
        out = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.class_count))

    def predict(self, x, batch_size=256):
        return self.logits(x, batch_size).argmax(axis=1)

    def __repr__(self):
        return (f"Network(name={self.name!r}, input_shape={self.input_shape}, "
                f"classes={self.class_count}, params={self.parameter_count()})")
