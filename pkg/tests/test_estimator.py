import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.linear_model import LogisticRegression

from befb.data import synthetic_shapes
from befb.errors import ShapeError
from befb.estimator import BEFBClassifier, BinaryEdgeTransformer, check_images


@pytest.fixture(scope="module")
def shapes():
    ds = synthetic_shapes(60, 16, seed=2)
    names = np.array(["rect", "disc", "tri"])
    return ds.images, names[ds.labels]


def test_check_images_shapes():
    assert check_images(np.zeros((2, 4, 4))).shape == (2, 1, 4, 4)
    assert check_images(np.zeros((2, 16)), (1, 4, 4)).shape == (2, 1, 4, 4)
    with pytest.raises(ShapeError):
        check_images(np.zeros(5))
    with pytest.raises(ShapeError):
        check_images(np.zeros((2, 1, 4, 4)), (1, 5, 5))
    with pytest.raises(ValueError):
        check_images(np.full((1, 1, 2, 2), np.nan))
    with pytest.raises(ValueError):
        check_images(np.full((1, 1, 2, 2), 2.0))


def test_params_round_trip():
    clf = BEFBClassifier(epochs=2, threshold=0.6)
    params = clf.get_params()
    assert params["threshold"] == 0.6 and params["epochs"] == 2
    assert clone(clf).get_params() == params
    assert clf.set_params(sobel_layers=3).sobel_layers == 3


def test_fit_predict_score(shapes):
    x, y = shapes
    clf = BEFBClassifier(widths=(4,), head_width=8, epochs=2, batch_size=20).fit(x, y)
    pred = clf.predict(x)
    assert set(pred) <= {"rect", "disc", "tri"}
    proba = clf.predict_proba(x)
    np.testing.assert_allclose(proba.sum(1), 1.0)
    assert 0.0 <= clf.score(x, y) <= 1.0
    assert len(clf.history_) == 2
    assert clf.network_.name == "vgg_small-BEFB-multiple"


def test_not_fitted():
    with pytest.raises(NotFittedError):
        BEFBClassifier().predict(np.zeros((1, 1, 16, 16)))
    with pytest.raises(NotFittedError):
        BinaryEdgeTransformer().transform(np.zeros((1, 1, 16, 16)))


def test_binary_edge_transformer_in_pipeline(shapes):
    x, y = shapes
    feats = BinaryEdgeTransformer(sobel_layers=1, threshold=0.4).fit_transform(x)
    assert feats.shape == (60, 256) and set(np.unique(feats)) <= {0.0, 1.0}
    flat = x.reshape(60, -1)
    pipe = make_pipeline(BinaryEdgeTransformer(1, 0.4), LogisticRegression(max_iter=200))
    pipe.fit(x, y)
    assert pipe.score(x, y) > 0.5
    with pytest.raises(ShapeError):
        BinaryEdgeTransformer().fit(x).transform(flat[:, :10])
