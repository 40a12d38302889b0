import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from essm import ESSMRegressor, ESSMTransformer, InvalidShapeError, init_multi_head_layer, multi_head_forward


def _teacher_data(seed=0, batch=3, length=24):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(batch, length, 2))
    teacher = init_multi_head_layer(2, 4, seed=seed + 50)
    y = np.stack([multi_head_forward(teacher, x) for x in X])
    return X, y


def test_params_and_clone():
    est = ESSMRegressor(n_state=6, steps=3)
    assert est.get_params()["n_state"] == 6
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    assert ESSMTransformer(norm="layer").set_params(n_heads=2).n_heads == 2


def test_regressor_fits_a_teacher():
    X, y = _teacher_data()
    est = ESSMRegressor(n_state=4, steps=150, learning_rate=0.05).fit(X, y)
    assert est.loss_curve_[-1] < est.loss_curve_[0]
    assert est.predict(X).shape == y.shape
    assert est.predict(X[0]).shape == y[0].shape
    assert est.score(X, y) > 0.5


def test_regressor_is_deterministic():
    X, y = _teacher_data(1)
    a = ESSMRegressor(steps=5).fit(X, y).predict(X)
    b = ESSMRegressor(steps=5).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)


def test_regressor_validation():
    X, y = _teacher_data()
    with pytest.raises(NotFittedError):
        ESSMRegressor().predict(X)
    with pytest.raises(InvalidShapeError):
        ESSMRegressor(steps=1).fit(X, y[:, :5])
    est = ESSMRegressor(steps=1).fit(X, y)
    with pytest.raises(InvalidShapeError):
        est.predict(np.ones((2, 5, 3)))


def test_transformer_shapes():
    X = np.random.default_rng(2).normal(size=(2, 16, 4))
    tr = ESSMTransformer(n_state=4, n_heads=2, bidirectional=True)
    out = tr.fit_transform(X)
    assert out.shape == X.shape and np.all(np.isfinite(out))
    assert tr.transform(X[1]).shape == (16, 4)
    with pytest.raises(InvalidShapeError):
        tr.transform(np.ones((16, 3)))
