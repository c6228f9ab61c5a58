"""scikit-learn compatible front end.

:class:`IMUDAClassifier` wraps pretraining, GMM estimation, pseudo-dataset
generation and adaptation behind ``fit``/``predict``/``transform`` so the model
can sit inside pipelines and grid searches.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .adapt import AdaptConfig, pretrain, run_pipeline
from .data import Dataset
from .nn import ArchSpec, forward_classifier, forward_encoder


class IMUDAClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Domain-adapted MLP classifier.

    Parameters
    ----------
    hidden_dims : tuple of int, default=(32, 32)
        Widths of the encoder's hidden layers.
    embedding_dim : int, default=8
        Width of the embedding layer the alignment terms act on.
    activation : {"tanh", "relu"}, default="tanh"
    lam : float, default=0.01
        Weight of both cross-entropy terms; the alignment terms are unweighted.
    tau : float, default=0.95
        Confidence a GMM sample needs to enter the pseudo-dataset.
    n_projections : int, default=100
        Random directions per sliced Wasserstein evaluation.
    pretrain_epochs, adapt_epochs : int
        Epoch budgets for the two phases.
    batch_size : int, default=500
        Mini-batch size, clipped to the smallest dataset in play.
    learning_rate, adapt_learning_rate : float
        Adam step sizes for pretraining and adaptation.
    cov_reg : float or None
        Covariance ridge for the GMM; ``None`` scales it to each class.
    n_pseudo : int or None
        Pseudo-dataset size; ``None`` uses the source size.
    drop_terms : tuple of str, default=()
        Any of ``"source_ce"``, ``"pseudo_ce"``, ``"target_pseudo_swd"``,
        ``"source_pseudo_swd"`` to switch off.
    baseline : bool, default=False
        Align source and target embeddings directly instead of going through
        the pseudo-dataset.
    random_state : int or None, default=0

    Attributes
    ----------
    classes_ : ndarray of shape (n_classes,)
    params_ : ModelParams
        Final network parameters.
    gmm_, pseudo_ : fitted GMM and pseudo-dataset, ``None`` without target data.
    pretrain_report_, adapt_report_ : TrainReport
    """

    def __init__(self, hidden_dims=(32, 32), embedding_dim=8, activation="tanh", lam=0.01,
                 tau=0.95, n_projections=100, pretrain_epochs=60, adapt_epochs=40,
                 batch_size=500, learning_rate=1e-2, adapt_learning_rate=5e-4, cov_reg=None,
                 covariance="full", n_pseudo=None, drop_terms=(), baseline=False,
                 early_stop=True, random_state=0):
        self.hidden_dims = hidden_dims
        self.embedding_dim = embedding_dim
        self.activation = activation
        self.lam = lam
        self.tau = tau
        self.n_projections = n_projections
        self.pretrain_epochs = pretrain_epochs
        self.adapt_epochs = adapt_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adapt_learning_rate = adapt_learning_rate
        self.cov_reg = cov_reg
        self.covariance = covariance
        self.n_pseudo = n_pseudo
        self.drop_terms = drop_terms
        self.baseline = baseline
        self.early_stop = early_stop
        self.random_state = random_state

    def _config(self, batch_size):
        seed = self.random_state
        if seed is None:
            seed = int(np.random.randint(0, 2**31 - 1))
        drop = set(self.drop_terms)
        unknown = drop - {"source_ce", "pseudo_ce", "target_pseudo_swd", "source_pseudo_swd"}
        if unknown:
            raise ValueError(f"unknown terms in drop_terms: {sorted(unknown)}")
        return AdaptConfig(
            lam=self.lam, tau=self.tau, num_projections=self.n_projections,
            pretrain_epochs=self.pretrain_epochs, adapt_epochs=self.adapt_epochs,
            batch_size=batch_size, learning_rate=self.learning_rate,
            adapt_learning_rate=self.adapt_learning_rate, seed=seed, cov_reg=self.cov_reg,
            covariance=self.covariance, n_pseudo=self.n_pseudo,
            enable_source_ce="source_ce" not in drop, enable_pseudo_ce="pseudo_ce" not in drop,
            enable_target_pseudo_swd="target_pseudo_swd" not in drop,
            enable_source_pseudo_swd="source_pseudo_swd" not in drop,
            early_stop=self.early_stop,
        )

    def fit(self, X, y, X_target=None):
        """Pretrain on ``(X, y)`` and, when ``X_target`` is given, adapt to it."""
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("only one class present in y; need at least two classes")
        arch = ArchSpec(X.shape[1], tuple(self.hidden_dims), self.embedding_dim,
                        self.classes_.size, self.activation)
        source = Dataset(X, y_enc, self.classes_.size, "source")
        sizes = [source.n]
        if X_target is not None:
            X_target = check_array(X_target, dtype=np.float64)
            if X_target.shape[1] != self.n_features_in_:
                raise ValueError(
                    f"X_target has {X_target.shape[1]} features, X has {self.n_features_in_}"
                )
            sizes.append(X_target.shape[0])
            if not self.baseline:
                sizes.append(self.n_pseudo or source.n)
        config = self._config(max(2, min(self.batch_size, *sizes)))

        self.gmm_ = self.pseudo_ = self.adapt_report_ = None
        if X_target is None:
            self.params_, self.pretrain_report_ = pretrain(config, arch, source)
        else:
            target = Dataset(X_target, name="target")
            result = run_pipeline(arch, config, source, target, baseline=self.baseline)
            self.params_ = result.adapted
            self.pretrain_report_ = result.pretrain_report
            self.adapt_report_ = result.adapt_report
            self.gmm_, self.pseudo_ = result.gmm, result.pseudo
        return self

    def _validate(self, X):
        check_is_fitted(self, "params_")
        return validate_data(self, X, dtype=np.float64, reset=False)

    def transform(self, X):
        """Embeddings of ``X``, shape ``(n_samples, embedding_dim)``."""
        X = self._validate(X)
        return forward_encoder(self.params_, X)

    def predict_proba(self, X):
        Z = self.transform(X)
        return forward_classifier(self.params_, Z)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
