"""Binary edge feature branches for CNNs, on a from-scratch numpy engine."""

__version__ = "0.1.0"

from .attacks import AttackConfig, fgsm, gaussian_perturb, pgd
from .backbones import BackboneConfig, ModelSpec, build_integrated, build_small_resnet, build_small_vgg
from .branch import EdgeKernel, SobelLayer, ThresholdLayer, build_befb_branch
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_cifar10_bin, load_idx, subset, synthetic_shapes
from .estimator import BEFBClassifier, BinaryEdgeTransformer
from .network import Network
from .train import TrainConfig, adversarial_train, evaluate, feature_diff_metrics, train

__all__ = [
    "AttackConfig", "fgsm", "pgd", "gaussian_perturb",
    "BackboneConfig", "ModelSpec", "build_small_vgg", "build_small_resnet", "build_integrated",
    "EdgeKernel", "SobelLayer", "ThresholdLayer", "build_befb_branch",
    "save_checkpoint", "load_checkpoint",
    "Dataset", "load_idx", "load_cifar10_bin", "subset", "synthetic_shapes",
    "BEFBClassifier", "BinaryEdgeTransformer",
    "Network", "TrainConfig", "train", "adversarial_train", "evaluate", "feature_diff_metrics",
]
