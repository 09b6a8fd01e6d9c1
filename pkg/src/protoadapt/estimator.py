"""scikit-learn facade over the adaptation pipeline.

Wraps the functional pipeline in an estimator so it slots into sklearn
tooling (``get_params``/``set_params``, cloning, metric helpers). The fit
signature follows the transfer-learning convention of passing the
unlabeled target alongside the labeled sources.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_matrix, check_sources
from .nets import TrainConfig
from .pipeline import RunConfig, evaluate_ensemble, run_algorithm1

__all__ = ["PrototypeAdaptationEnsemble"]


class PrototypeAdaptationEnsemble(BaseEstimator, ClassifierMixin):
    """Multi-source domain adaptation ensemble with private source handling.

    Trains one classifier per labeled source domain, summarizes each
    source's latent features as class-conditional Gaussians, releases the
    source data, aligns each encoder to the unlabeled target by minimizing
    a sliced Wasserstein distance to Gaussian draws, and predicts with a
    distance-weighted mixture of the adapted models.

    Parameters
    ----------
    hidden : tuple of int, default=(64,)
        Encoder hidden layer widths; every affine layer is followed by ReLU.
    latent_dim : int, default=16
        Encoder output dimensionality.
    epochs : int, default=200
        Supervised training epochs per source.
    batch_size : int, default=16
        Supervised training batch size.
    lr : float, default=1e-3
        Supervised training learning rate (Adam).
    adapt_steps : int, default=500
        Maximum encoder alignment steps per source.
    adapt_batch : int, default=64
        Batch size during alignment (target batch and Gaussian draw alike).
    adapt_lr : float, default=1e-3
        Alignment learning rate.
    n_projections : int, default=100
        Random projection directions per sliced-distance evaluation.
    conf_threshold : float, default=0.8
        Probability above which a target prediction counts as confident.
    frac_threshold : float, default=0.8
        Confident fraction required to sample prototypes from pseudo-labels.
    weight_strategy : {"swd", "uniform", "single-best"}, default="swd"
        How the per-source mixing weights are chosen.
    random_state : int, default=0
        Master seed; fits are exactly reproducible.
    workers : int, default=1
        Threads for the per-source stages.

    Attributes
    ----------
    classes_ : ndarray
        Sorted unique labels seen across the sources.
    weights_ : ndarray
        Mixing weight per retained source.
    result_ : RunResult
        Full pipeline output (models, report, weights).
    n_features_in_ : int
        Feature dimensionality.

    Examples
    --------
    >>> est = PrototypeAdaptationEnsemble(epochs=5, adapt_steps=10)
    >>> est.fit(Xs, ys, Xt)            # doctest: +SKIP
    >>> proba = est.predict_proba(Xt)  # doctest: +SKIP
    """

    def __init__(
        self,
        hidden=(64,),
        latent_dim=16,
        epochs=200,
        batch_size=16,
        lr=1e-3,
        adapt_steps=500,
        adapt_batch=64,
        adapt_lr=1e-3,
        n_projections=100,
        conf_threshold=0.8,
        frac_threshold=0.8,
        weight_strategy="swd",
        random_state=0,
        workers=1,
    ):
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.adapt_steps = adapt_steps
        self.adapt_batch = adapt_batch
        self.adapt_lr = adapt_lr
        self.n_projections = n_projections
        self.conf_threshold = conf_threshold
        self.frac_threshold = frac_threshold
        self.weight_strategy = weight_strategy
        self.random_state = random_state
        self.workers = workers

    def _config(self) -> RunConfig:
        return RunConfig(
            hidden=tuple(self.hidden),
            latent_dim=self.latent_dim,
            train=TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr),
            n_projections=self.n_projections,
            adapt_steps=self.adapt_steps,
            adapt_batch=self.adapt_batch,
            adapt_lr=self.adapt_lr,
            conf_threshold=self.conf_threshold,
            frac_threshold=self.frac_threshold,
            weight_strategy=self.weight_strategy,
            seed=self.random_state,
            workers=self.workers,
        )

    def fit(self, X, y, Xt):
        """Fit on labeled sources and the unlabeled target.

        Parameters
        ----------
        X : array-like of shape (n, d) or sequence of such arrays
            One feature matrix per source domain.
        y : array-like or sequence of array-likes
            Labels parallel to ``X``; any hashable-sortable values.
        Xt : array-like of shape (m, d)
            Unlabeled target features the encoders align to.
        """
        sources, width = check_sources(X, y)
        xt = check_feature_matrix(Xt, name="Xt")
        if xt.shape[1] != width:
            raise ValueError(f"Xt has {xt.shape[1]} features, sources have {width}")
        self.classes_ = np.unique(np.concatenate([s[1] for s in sources]))
        encoded = [
            (x, np.searchsorted(self.classes_, yk)) for x, yk in sources
        ]
        cfg = self._config()
        cfg.n_classes = len(self.classes_)
        self.result_ = run_algorithm1(encoded, xt, cfg)
        self.weights_ = self.result_.weights
        self.n_features_in_ = width
        return self

    def predict_proba(self, X):
        """Weighted mixture of per-source class probabilities."""
        self._check_fitted()
        x = check_feature_matrix(X)
        return self.result_.predict_proba(x)

    def predict(self, X):
        """Most probable class under the ensemble mixture."""
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def evaluate(self, X, y) -> dict:
        """Accuracy, cross-entropy, and the mixture-bound check on (X, y)."""
        self._check_fitted()
        x = check_feature_matrix(X)
        encoded = np.searchsorted(self.classes_, np.asarray(y))
        return evaluate_ensemble(self.result_, x, encoded)

    def _check_fitted(self):
        check_is_fitted(self, "result_")
