"""The sklearn-style facade: params, cloning, label mapping, determinism."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from protoadapt import PrototypeAdaptationEnsemble
from protoadapt.errors import InvalidDimension


def _quick(**overrides):
    params = dict(
        hidden=(8,),
        latent_dim=4,
        epochs=5,
        batch_size=16,
        lr=5e-3,
        adapt_steps=10,
        adapt_batch=32,
        adapt_lr=5e-3,
        n_projections=16,
        random_state=0,
    )
    params.update(overrides)
    return PrototypeAdaptationEnsemble(**params)


def _make_data(labels=(0, 1), seed=90, n=60):
    gen = np.random.default_rng(seed)
    half = n // 2
    centers = [[3, 0], [-3, 0]]

    def domain(shift):
        x = np.vstack([gen.standard_normal((half, 2)) + centers[0],
                       gen.standard_normal((half, 2)) + centers[1]]) + shift
        y = np.repeat(list(labels), half)
        return x, y

    xs, ys = zip(domain(0.0), domain(0.3))
    xt, yt = domain(0.5)
    return list(xs), list(ys), xt, yt


class TestSklearnContract:
    def test_get_params_round_trip(self):
        est = _quick(adapt_steps=7)
        params = est.get_params()
        assert params["adapt_steps"] == 7
        assert params["hidden"] == (8,)
        rebuilt = PrototypeAdaptationEnsemble(**params)
        assert rebuilt.get_params() == params

    def test_set_params_chains(self):
        est = _quick()
        out = est.set_params(epochs=3, weight_strategy="uniform")
        assert out is est
        assert est.epochs == 3 and est.weight_strategy == "uniform"

    def test_clone_copies_params_not_state(self):
        xs, ys, xt, _ = _make_data()
        est = _quick().fit(xs, ys, xt)
        fresh = clone(est)
        assert fresh.get_params() == est.get_params()
        assert not hasattr(fresh, "result_")

    def test_unfitted_raises(self):
        est = _quick()
        with pytest.raises(NotFittedError):
            est.predict_proba(np.zeros((2, 2)))
        with pytest.raises(NotFittedError):
            est.evaluate(np.zeros((2, 2)), np.array([0, 1]))


class TestFitPredict:
    def test_fit_returns_self_and_sets_attributes(self):
        xs, ys, xt, _ = _make_data()
        est = _quick()
        assert est.fit(xs, ys, xt) is est
        assert est.classes_.tolist() == [0, 1]
        assert est.n_features_in_ == 2
        assert_allclose(est.weights_.sum(), 1.0, atol=1e-12)
        assert len(est.result_.models) == 2

    def test_probabilities_are_a_distribution(self):
        xs, ys, xt, _ = _make_data()
        est = _quick().fit(xs, ys, xt)
        p = est.predict_proba(xt)
        assert p.shape == (xt.shape[0], 2)
        assert (p >= 0).all()
        assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_learns_the_separable_task(self):
        xs, ys, xt, yt = _make_data()
        est = _quick().fit(xs, ys, xt)
        assert est.score(xt, yt) > 0.9

    def test_non_contiguous_labels_round_trip(self):
        xs, ys, xt, yt = _make_data(labels=(3, 9))
        est = _quick().fit(xs, ys, xt)
        assert est.classes_.tolist() == [3, 9]
        preds = est.predict(xt)
        assert set(np.unique(preds)) <= {3, 9}
        assert est.score(xt, yt) > 0.9
        # probability columns align to classes_
        p = est.predict_proba(xt)
        assert p.shape[1] == 2

    def test_single_source_pair_accepted(self):
        xs, ys, xt, _ = _make_data()
        est = _quick().fit(xs[0], ys[0], xt)
        assert est.weights_.tolist() == [1.0]

    def test_evaluate_reports_consistent_metrics(self):
        xs, ys, xt, yt = _make_data()
        est = _quick().fit(xs, ys, xt)
        metrics = est.evaluate(xt, yt)
        assert metrics["jensen_ok"]
        assert metrics["accuracy"] == pytest.approx(est.score(xt, yt))
        assert metrics["ce_risk"] > 0


class TestDeterminism:
    def test_same_seed_same_model(self):
        xs, ys, xt, _ = _make_data()
        a = _quick(random_state=4).fit(xs, ys, xt)
        b = _quick(random_state=4).fit(xs, ys, xt)
        assert np.array_equal(a.weights_, b.weights_)
        assert np.array_equal(a.predict_proba(xt), b.predict_proba(xt))

    def test_different_seed_different_model(self):
        xs, ys, xt, _ = _make_data()
        a = _quick(random_state=4).fit(xs, ys, xt)
        b = _quick(random_state=5).fit(xs, ys, xt)
        assert not np.array_equal(a.predict_proba(xt), b.predict_proba(xt))


class TestValidation:
    def test_target_width_mismatch(self):
        xs, ys, _, _ = _make_data()
        with pytest.raises(ValueError):
            _quick().fit(xs, ys, np.zeros((10, 3)))

    def test_source_width_mismatch(self):
        xs, ys, xt, _ = _make_data()
        xs = [xs[0], np.zeros((10, 3))]
        ys = [ys[0], np.zeros(10, dtype=int)]
        with pytest.raises(InvalidDimension):
            _quick().fit(xs, ys, xt)

    def test_label_length_mismatch(self):
        xs, ys, xt, _ = _make_data()
        with pytest.raises(InvalidDimension):
            _quick().fit(xs[0], ys[0][:-1], xt)

    def test_non_finite_features_rejected(self):
        xs, ys, xt, _ = _make_data()
        bad = xs[0].copy()
        bad[0, 0] = np.inf
        with pytest.raises(ValueError):
            _quick().fit(bad, ys[0], xt)

    def test_predict_width_mismatch_after_fit(self):
        xs, ys, xt, _ = _make_data()
        est = _quick().fit(xs, ys, xt)
        with pytest.raises(InvalidDimension):
            est.predict_proba(np.zeros((4, 7)))
