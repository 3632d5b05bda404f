"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"BEFB" | version | descriptor length | descriptor (UTF-8 ``key=value`` lines)
    | tensor count | per tensor: name length, name, 4 shape dims, f64 LE payload

Shapes with fewer than four dimensions are left-padded with ones. The
descriptor carries the builder arguments plus the layer kinds of each
section, so loading rebuilds the architecture and then overwrites every
parameter.
"""

import io
import struct
from pathlib import Path

import numpy as np

from .backbones import BackboneConfig, ModelSpec
from .errors import CheckpointError, CheckpointVersionError

MAGIC = b"BEFB"
VERSION = 1
KNOWN_KINDS = {"conv", "relu", "maxpool", "dense", "sobel", "threshold", "grayscale",
               "flatten", "concat-merge", "residual-block"}


def describe(net):
    meta = {k: str(v) for k, v in net.meta.items()}
    for section, layers in net.sections():
        meta[f"layers.{section}"] = ",".join(layer.kind for layer in layers)
    return meta


def _descriptor_text(meta):
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value or "=" in key:
            raise CheckpointError(f"descriptor entry {key!r} cannot be serialized")
        lines.append(f"{key}={value}")
    return "\n".join(lines)


def _parse_descriptor(text):
    meta = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed descriptor line {line!r}")
        meta[key] = value
    return meta


def save_checkpoint(net, path):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    desc = _descriptor_text(describe(net)).encode("utf-8")
    buf.write(struct.pack("<I", len(desc)))
    buf.write(desc)
    params = net.parameters()
    buf.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        shape = (1,) * (4 - arr.ndim) + arr.shape
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<4I", *shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def spec_from_meta(meta):
    try:
        backbone = BackboneConfig(
            family=meta["family"],
            widths=tuple(int(w) for w in meta["widths"].split(",")),
            head_width=int(meta["head_width"]),
            stem_width=int(meta.get("stem_width", 8)),
        )
        branch = meta.get("branch", "none")
        spec = ModelSpec(backbone, branch)
        if branch != "none":
            spec.sobel_layers = int(meta["sobel_layers"])
            spec.t = float(meta["t"])
            spec.variant = meta.get("variant", "full")
        input_shape = tuple(int(s) for s in meta["input_shape"].split(","))
        classes = int(meta["classes"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad architecture descriptor: {exc}") from exc
    return spec, input_shape, classes


def load_checkpoint(path):
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointVersionError(VERSION, version)
    try:
        meta = _parse_descriptor(r.take(r.u32("descriptor length"), "descriptor").decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"descriptor is not UTF-8: {exc}") from exc

    for key, value in meta.items():
        if key.startswith("layers."):
            unknown = set(value.split(",")) - KNOWN_KINDS
            if unknown:
                raise CheckpointError(f"unknown layer kind(s) {sorted(unknown)} in {key}")

    spec, input_shape, classes = spec_from_meta(meta)
    net = spec.build(input_shape, classes, seed=0)
    expected = describe(net)
    for key in (k for k in meta if k.startswith("layers.")):
        if expected.get(key) != meta[key]:
            raise CheckpointError(
                f"layer list {key} in file ({meta[key]}) does not match rebuilt "
                f"architecture ({expected.get(key)})"
            )
    net.meta.update({k: v for k, v in meta.items() if not k.startswith("layers.")})

    params = net.parameters()
    count = r.u32("tensor count")
    if count != len(params):
        raise CheckpointError(f"checkpoint has {count} tensors; architecture needs {len(params)}")
    loaded = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8", "replace")
        shape = struct.unpack("<4I", r.take(16, f"shape of {name}"))
        size = int(np.prod(shape))
        payload = r.take(8 * size, f"payload of {name}")
        if name not in params:
            raise CheckpointError(f"unexpected tensor {name!r}")
        target = params[name]
        if shape != (1,) * (4 - target.ndim) + target.shape:
            raise CheckpointError(f"tensor {name}: stored shape {shape} vs expected {target.shape}")
        loaded[name] = np.frombuffer(payload, dtype="<f8").reshape(target.shape)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    missing = set(params) - set(loaded)
    if missing:
        raise CheckpointError(f"missing tensors {sorted(missing)}")
    # Only mutate once everything decoded cleanly.
    for name, arr in loaded.items():
        params[name][...] = arr
    net.mark_updated()
    return net
