import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from dwformer.data import SyntheticSpec, generate
from dwformer.estimator import DWFormerClassifier, check_sequences

SPEC = SyntheticSpec(t_min=10, t_max=16, d_model=16, event_min=3, event_max=6, per_class=10)


@pytest.fixture(scope="module")
def data():
    recs = generate(SPEC)
    names = np.array(["anger", "joy", "neutral", "sad"])
    return [r.features for r in recs], names[[r.label for r in recs]]


def make(**kw):
    base = dict(n_heads=2, n_blocks=1, epochs=3, batch_size=8, base_lr=0.05)
    base.update(kw)
    return DWFormerClassifier(**base)


def test_get_set_params_and_clone():
    est = make()
    params = est.get_params()
    assert params["n_blocks"] == 1 and params["variant"] == "dwformer"
    est.set_params(weak_weight=0.5)
    assert clone(est).weak_weight == 0.5


def test_fit_predict_variable_length(data):
    X, y = data
    est = make().fit(X, y)
    pred = est.predict(X)
    assert set(pred) <= set(est.classes_)
    proba = est.predict_proba(X[:5])
    np.testing.assert_allclose(proba.sum(1), 1.0)
    assert 0 <= est.score(X, y) <= 1
    imp = est.importance(X[:3])
    assert [len(v) for v in imp] == [len(x) for x in X[:3]]
    assert all(abs(v.sum() - 1) < 1e-9 for v in imp)


def test_dense_array_input(data):
    X, y = data
    dense = np.stack([x[:10] for x in X])
    est = make(epochs=1).fit(dense, y)
    assert est.predict(dense).shape == (len(y),)


def test_cross_val_score_composes(data):
    X, y = data
    scores = cross_val_score(make(epochs=1), X, y, cv=2)
    assert scores.shape == (2,)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        make().predict([np.zeros((3, 16))])


def test_input_validation(data):
    X, y = data
    with pytest.raises(ValueError):
        check_sequences([])
    with pytest.raises(ValueError):
        check_sequences([np.zeros((3, 4)), np.zeros((3, 5))])
    with pytest.raises(ValueError):
        check_sequences([np.full((3, 4), np.nan)])
    with pytest.raises(ValueError):
        make().fit(X, y[:-1])
    est = make(epochs=1).fit(X, y)
    with pytest.raises(ValueError):
        est.predict([np.zeros((3, 8))])
