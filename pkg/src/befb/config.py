"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Unknown keys are rejected. ``RunConfig.to_text`` emits the fully resolved
document that every run writes next to its results.

Example::

    dataset = mnist
    idx_images = data/train-images-idx3-ubyte
    idx_labels = data/train-labels-idx1-ubyte
    n_train = 10000
    n_test = 2000
    branch = multiple
    sobel_layers = 2
    threshold = 0.8
    attacks = fgsm eps=80 grad=zero; gaussian sigma=0.35
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

from .attacks import STANDARD_BUDGETS, AttackConfig
from .backbones import FAMILIES, BackboneConfig, ModelSpec
from .data import load_cifar10_bin, load_idx, mnist_sample_subset, subset, synthetic_shapes
from .errors import ConfigError
from .train import TrainConfig

DATASETS = ("mnist", "mnist_sample", "cifar10", "shapes")
BRANCHES = ("none", "single", "multiple")
VARIANTS = ("full", "tlre", "slre")


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _paths(text):
    return tuple(text.split())


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


_ATTACK_KEYS = {
    "eps": ("epsilon", float), "epsilon": ("epsilon", float),
    "steps": ("steps", int), "step": ("stepsize", float), "stepsize": ("stepsize", float),
    "grad": ("grad_mode", str), "grad_mode": ("grad_mode", str),
    "init": ("random_init", _bool), "random_init": ("random_init", _bool),
    "sigma": ("sigma", float), "mean": ("mean", float), "seed": ("seed", int),
}


def parse_attacks(text, dataset="mnist"):
    """Parse ``"fgsm eps=80 grad=zero; pgd steps=8; gaussian sigma=0.35"``.

    Unspecified FGSM/PGD budgets default to the dataset's standard values.
    """
    out = []
    for chunk in text.split(";"):
        tokens = chunk.split()
        if not tokens:
            continue
        kind, kwargs = tokens[0].lower(), {}
        if kind in ("fgsm", "pgd"):
            kwargs.update(STANDARD_BUDGETS.get(dataset, STANDARD_BUDGETS["mnist"]))
        for tok in tokens[1:]:
            key, sep, value = tok.partition("=")
            if not sep or key not in _ATTACK_KEYS:
                raise ConfigError(f"bad attack option {tok!r} in {chunk.strip()!r}", "attacks")
            name, conv = _ATTACK_KEYS[key]
            kwargs[name] = conv(value)
        try:
            out.append(AttackConfig(kind=kind, **kwargs))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{exc} in {chunk.strip()!r}", "attacks") from exc
    return out


def format_attacks(attacks):
    parts = []
    for a in attacks:
        if a.kind == "gaussian":
            parts.append(f"gaussian sigma={a.sigma:g} mean={a.mean:g} seed={a.seed}")
        else:
            s = f"{a.kind} eps={a.epsilon:g} grad={a.grad_mode}"
            if a.kind == "pgd":
                s += f" steps={a.steps} step={a.stepsize:g} init={_fmt(a.random_init)}"
            parts.append(s + f" seed={a.seed}")
    return "; ".join(parts)


@dataclass
class RunConfig:
    dataset: str = "shapes"
    idx_images: str = ""
    idx_labels: str = ""
    cifar_batches: tuple = ()
    n_train: int = 300
    n_test: int = 150
    data_seed: int = 0
    shapes_size: int = 16
    family: str = "vgg_small"
    widths: tuple = (8, 16)
    head_width: int = 64
    stem_width: int = 8
    branch: str = "multiple"
    sobel_layers: int = 2
    threshold: float = 0.8
    variant: str = "full"
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 1.0
    lr_decay_every: int = 1
    seeds: tuple = (0,)
    adversarial: bool = False
    at_epsilon: float = -1.0
    at_steps: int = -1
    at_stepsize: float = -1.0
    replace_fraction: float = 0.5
    attacks: str = ""
    output_dir: str = "runs/befb"
    _sources: dict = field(default_factory=dict, repr=False, compare=False)

    _CONVERTERS = None  # filled below

    @classmethod
    def from_text(cls, text, origin="<config>"):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip().strip('"').strip("'")
            if not sep or not key:
                raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
            if key not in cls._CONVERTERS:
                raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}", key)
            if key in values:
                raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}", key)
            try:
                values[key] = cls._CONVERTERS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{origin}:{lineno}: bad value for {key!r}: {exc}", key) from exc
        cfg = cls(**values)
        cfg._sources = {"origin": origin}
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.from_text(text, str(path))

    def validate(self):
        checks = [
            ("dataset", self.dataset in DATASETS, f"must be one of {DATASETS}"),
            ("family", self.family in FAMILIES, f"must be one of {FAMILIES}"),
            ("branch", self.branch in BRANCHES, f"must be one of {BRANCHES}"),
            ("variant", self.variant in VARIANTS, f"must be one of {VARIANTS}"),
            ("threshold", 0.0 <= self.threshold <= 1.0, "must lie in [0, 1]"),
            ("sobel_layers", self.sobel_layers >= 1, "must be >= 1"),
            ("widths", len(self.widths) >= 1, "needs at least one stage width"),
            ("seeds", len(self.seeds) >= 1, "needs at least one seed"),
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("replace_fraction", 0.0 <= self.replace_fraction <= 1.0, "must lie in [0, 1]"),
            ("n_train", self.n_train >= 0, "must be >= 0"),
            ("n_test", self.n_test >= 0, "must be >= 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{key} = {_fmt(getattr(self, key))!s}: {msg}", key)
        if self.dataset == "mnist":
            for key in ("idx_images", "idx_labels"):
                self._require_file(key, getattr(self, key))
        if self.dataset == "cifar10":
            if not self.cifar_batches:
                raise ConfigError("cifar10 needs cifar_batches", "cifar_batches")
            for p in self.cifar_batches:
                self._require_file("cifar_batches", p)
        self.attack_list()
        return self

    @staticmethod
    def _require_file(key, path):
        if not path:
            raise ConfigError(f"missing required key {key!r}", key)
        if not Path(path).is_file():
            raise ConfigError(f"{key} = {path}: no such file", key)

    def attack_list(self):
        return parse_attacks(self.attacks, self.attack_family)

    @property
    def attack_family(self):
        return "cifar10" if self.dataset == "cifar10" else "mnist"

    def to_text(self):
        lines = ["# resolved configuration"]
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            value = getattr(self, f.name)
            if f.name == "attacks":
                value = format_attacks(self.attack_list())
            lines.append(f"{f.name} = {_fmt(value)}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, path):
        Path(path).write_text(self.to_text())

    def backbone_config(self):
        return BackboneConfig(self.family, self.widths, self.head_width, self.stem_width)

    def model_spec(self, branch=None, variant=None):
        return ModelSpec(self.backbone_config(), branch or self.branch, self.sobel_layers,
                         self.threshold, variant or self.variant)

    def adversarial_attack(self):
        base = STANDARD_BUDGETS[self.attack_family]
        return AttackConfig(
            kind="pgd",
            epsilon=self.at_epsilon if self.at_epsilon >= 0 else base["epsilon"],
            steps=self.at_steps if self.at_steps >= 1 else base["steps"],
            stepsize=self.at_stepsize if self.at_stepsize >= 0 else base["stepsize"],
            grad_mode="ste",
        )

    def train_config(self, seed):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            momentum=self.momentum, lr_decay=self.lr_decay, lr_decay_every=self.lr_decay_every,
            seed=seed, adversarial=self.adversarial_attack() if self.adversarial else None,
            replace_fraction=self.replace_fraction,
        )

    def load_data(self):
        """Return ``(train, test)`` datasets per the data keys."""
        if self.dataset == "shapes":
            full = synthetic_shapes(self.n_train + self.n_test + 3, self.shapes_size, self.data_seed)
            return subset(full, self.n_train, self.n_test, self.data_seed)
        if self.dataset == "mnist":
            full = load_idx(self.idx_images, self.idx_labels)
        elif self.dataset == "mnist_sample":
            full = mnist_sample_subset()
        else:
            full = load_cifar10_bin(self.cifar_batches)
        try:
            return subset(full, self.n_train, self.n_test, self.data_seed)
        except ValueError as exc:
            raise ConfigError(str(exc), "n_train") from exc


RunConfig._CONVERTERS = {
    f.name: {int: int, float: float, str: str, bool: _bool}.get(f.type, None)
    for f in fields(RunConfig) if not f.name.startswith("_")
}
RunConfig._CONVERTERS.update(
    widths=_ints, seeds=_ints, cifar_batches=_paths,
)
