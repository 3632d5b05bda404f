"""scikit-learn compatible wrappers around the network and the edge branch."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .backbones import BackboneConfig, ModelSpec
from .branch import build_befb_branch
from .data import Dataset
from .errors import ShapeError
from .train import TrainConfig, train


def check_images(X, image_shape=None):
    """Coerce ``X`` to float64 (N, C, H, W) in [0, 1].

    Accepts (N, H, W) or flat (N, D) input when ``image_shape`` is given.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and image_shape is not None:
        if X.shape[1] != int(np.prod(image_shape)):
            raise ShapeError(f"flat input width {X.shape[1]} does not match image shape {image_shape}")
        X = X.reshape((-1,) + tuple(image_shape))
    elif X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ShapeError(f"expected images of shape (N, C, H, W), got {X.shape}")
    if image_shape is not None and X.shape[1:] != tuple(image_shape):
        raise ShapeError(f"expected images of shape (N, {image_shape}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return X


class BEFBClassifier(ClassifierMixin, BaseEstimator):
    """Small CNN, optionally with a binary edge feature branch.

    ``branch`` is ``"none"``, ``"single"`` or ``"multiple"``. Labels may be any
    hashable values; they are encoded internally.
    """

    def __init__(self, family="vgg_small", widths=(8, 16), head_width=64, branch="multiple",
                 sobel_layers=2, threshold=0.8, variant="full", epochs=5, batch_size=64,
                 learning_rate=0.01, momentum=0.9, random_state=0):
        self.family = family
        self.widths = widths
        self.head_width = head_width
        self.branch = branch
        self.sobel_layers = sobel_layers
        self.threshold = threshold
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.random_state = random_state

    def _spec(self):
        return ModelSpec(BackboneConfig(self.family, self.widths, self.head_width),
                         self.branch, self.sobel_layers, self.threshold, self.variant)

    def fit(self, X, y):
        X = check_images(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ShapeError(f"{X.shape[0]} images but y has shape {y.shape}")
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.image_shape_ = X.shape[1:]
        seed = int(self.random_state or 0)
        self.network_ = self._spec().build(self.image_shape_, len(self.classes_), seed=seed)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          learning_rate=self.learning_rate, momentum=self.momentum, seed=seed)
        ds = Dataset(X, codes, len(self.classes_), "fit")
        _, self.history_ = train(self.network_, ds, cfg)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        return self.network_.logits(check_images(X, self.image_shape_))

    def predict_proba(self, X):
        return T.softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]


class BinaryEdgeTransformer(TransformerMixin, BaseEstimator):
    """Fixed (untrained) edge branch as a feature extractor: images to flat binary maps."""

    def __init__(self, sobel_layers=2, threshold=0.8, mode="multiple", random_state=0):
        self.sobel_layers = sobel_layers
        self.threshold = threshold
        self.mode = mode
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_images(X)
        self.image_shape_ = X.shape[1:]
        self.layers_ = build_befb_branch(self.sobel_layers, self.threshold, self.mode,
                                         np.random.default_rng(self.random_state))
        return self

    def transform(self, X):
        check_is_fitted(self, "layers_")
        h = check_images(X, self.image_shape_)
        for layer in self.layers_:
            h, _ = layer.forward(h)
        return h
