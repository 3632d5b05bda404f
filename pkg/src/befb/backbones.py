"""Desk-scale VGG- and ResNet-style backbones and BEFB model assembly."""

from dataclasses import dataclass, field

import numpy as np

from .branch import build_befb_branch
from .errors import ShapeError
from .layers import Conv2D, Flatten, MaxPool2, ReLU, ResidualBlock
from .network import Network, build_head

FAMILIES = ("vgg_small", "resnet_small")


@dataclass
class BackboneConfig:
    family: str = "vgg_small"
    widths: tuple = (8, 16)
    head_width: int = 64
    stem_width: int = 8  # resnet only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown backbone family {self.family!r}; expected one of {FAMILIES}")
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 1 or min(self.widths) < 1:
            raise ValueError(f"widths must be a non-empty list of positive ints, got {self.widths}")
        if self.head_width < 1:
            raise ValueError("head_width must be positive")

    @property
    def stages(self):
        return len(self.widths)


def _rng(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    return rng


def _check_spatial(input_shape, stages):
    _, h, w = input_shape
    for _ in range(stages):
        if h % 2 or w % 2 or h < 2 or w < 2:
            raise ShapeError(
                f"input {input_shape} cannot be halved {stages} times (got {h}x{w} before a pool)"
            )
        h, w = h // 2, w // 2


def _meta(cfg, input_shape, classes, **extra):
    meta = {
        "family": cfg.family, "widths": ",".join(map(str, cfg.widths)),
        "head_width": cfg.head_width, "stem_width": cfg.stem_width,
        "input_shape": ",".join(map(str, input_shape)), "classes": classes,
        "branch": "none", "name": cfg.family,
    }
    meta.update(extra)
    return meta


def _vgg_layers(cfg, input_shape, rng):
    layers, c = [], input_shape[0]
    for width in cfg.widths:
        layers += [Conv2D(c, width, 3, 1, 1, rng=rng), ReLU(),
                   Conv2D(width, width, 3, 1, 1, rng=rng), ReLU(), MaxPool2()]
        c = width
    return layers + [Flatten()]


def _resnet_layers(cfg, input_shape, rng):
    layers = [Conv2D(input_shape[0], cfg.stem_width, 3, 1, 1, rng=rng), ReLU()]
    c = cfg.stem_width
    for width in cfg.widths:
        layers += [ResidualBlock(c, width, rng=rng), ReLU(), MaxPool2()]
        c = width
    return layers + [Flatten()]


def build_backbone_layers(cfg, input_shape, rng=None):
    rng = _rng(rng)
    _check_spatial(input_shape, cfg.stages)
    if cfg.family == "vgg_small":
        return _vgg_layers(cfg, input_shape, rng)
    return _resnet_layers(cfg, input_shape, rng)


def _build(cfg, input_shape, classes, rng):
    rng = _rng(rng)
    input_shape = tuple(input_shape)
    layers = build_backbone_layers(cfg, input_shape, rng)
    width = _texture_width(layers, input_shape)
    head = build_head(width, cfg.head_width, classes, rng)
    return Network(layers, head, input_shape, classes, meta=_meta(cfg, input_shape, classes))


def _texture_width(layers, input_shape):
    shape = input_shape
    for layer in layers:
        shape = layer.output_shape(shape)
    return int(np.prod(shape))


def build_small_vgg(cfg, input_shape, classes, rng=None):
    """Stages of conv3x3-relu-conv3x3-relu-maxpool2 followed by the dense head."""
    if cfg.family != "vgg_small":
        cfg = BackboneConfig("vgg_small", cfg.widths, cfg.head_width, cfg.stem_width)
    return _build(cfg, input_shape, classes, rng)


def build_small_resnet(cfg, input_shape, classes, rng=None):
    """Stem conv, then per stage a residual block, ReLU and maxpool2."""
    if cfg.family != "resnet_small":
        cfg = BackboneConfig("resnet_small", cfg.widths, cfg.head_width, cfg.stem_width)
    return _build(cfg, input_shape, classes, rng)


def build_backbone(cfg, input_shape, classes, rng=None):
    builder = build_small_vgg if cfg.family == "vgg_small" else build_small_resnet
    return builder(cfg, input_shape, classes, rng)


def model_name(family, mode, variant="full"):
    name = f"{family}-BEFB-{mode}"
    return name if variant == "full" else f"{name}-{variant}"


def build_integrated(backbone, l=2, t=0.8, mode="multiple", rng=None, variant="full"):
    """Attach a BEFB branch to ``backbone`` and rebuild the head for the wider input.

    Backbone layers are shared with ``backbone`` (not copied).
    """
    if backbone.branch is not None:
        raise ValueError(f"network {backbone.name!r} already has a BEFB branch")
    rng = _rng(rng)
    branch = build_befb_branch(l, t, mode, rng, variant)
    branch_width = _texture_width(branch, backbone.input_shape)
    old_in, old_out = backbone.head[0], backbone.head[-1]
    head = build_head(backbone.texture_width + branch_width, old_in.out_features,
                      backbone.class_count, rng)
    # Texture rows and the output layer start from the backbone's own head, so
    # zeroing the branch rows reproduces the backbone-only logits.
    head[0].params["weight"][:backbone.texture_width] = old_in.params["weight"]
    head[0].params["bias"][...] = old_in.params["bias"]
    head[-1].params["weight"][...] = old_out.params["weight"]
    head[-1].params["bias"][...] = old_out.params["bias"]
    meta = dict(backbone.meta)
    meta.update({
        "branch": mode, "sobel_layers": l, "t": t, "variant": variant,
        "name": model_name(meta.get("family", "net"), mode, variant),
    })
    return Network(backbone.backbone, head, backbone.input_shape, backbone.class_count,
                   branch=branch, meta=meta)


@dataclass
class ModelSpec:
    """Everything needed to build a network from scratch."""

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    branch: str = "multiple"  # "none", "single" or "multiple"
    sobel_layers: int = 2
    t: float = 0.8
    variant: str = "full"

    def build(self, input_shape, classes, seed=0):
        rng = np.random.default_rng(seed)
        net = build_backbone(self.backbone, input_shape, classes, rng)
        if self.branch == "none":
            return net
        return build_integrated(net, self.sobel_layers, self.t, self.branch, rng, self.variant)
