"""scikit-learn wrappers around the functional core."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset, PreprocessSpec, encode_batch
from .residual import ResidualModel, forward
from .training import TrainingConfig, train


def _qubits_for(n_features: int) -> int:
    return max(1, math.ceil(math.log2(max(n_features, 2))))


class AmplitudeEncoder(TransformerMixin, BaseEstimator):
    """Zero-pad to a power of two and L2-normalize each row.

    Args:
        pad_to: Target length. ``None`` picks the smallest power of two that
            holds the features seen in ``fit``.
    """

    def __init__(self, pad_to=None):
        self.pad_to = pad_to

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=float)
        pad = self.pad_to if self.pad_to is not None else 2 ** _qubits_for(X.shape[1])
        self.spec_ = PreprocessSpec(int(pad))
        if X.shape[1] > self.spec_.pad_to:
            raise ValueError(f"{X.shape[1]} features do not fit in {self.spec_.pad_to} amplitudes")
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = validate_data(self, X, dtype=float, reset=False)
        return encode_batch(X, self.spec_)


class QResNetClassifier(ClassifierMixin, BaseEstimator):
    """Residual quantum classifier trained by exact gradients.

    Features must lie in [0, 1] (scale them first if needed). Binary
    problems use a single sigmoid logit; ``k > 2`` classes use ``k`` logits
    read from the first ``k`` data qubits, so ``k`` may not exceed the qubit
    count.

    Args:
        n_blocks: Number of residual blocks.
        backbone_depth: QVC layers applied before the blocks.
        n_qubits: Data qubits; ``None`` derives it from the feature count.
        learning_rate, weight_decay: Adam settings.
        batch_size, epochs: ``None`` uses 32/30 for binary and 256/5 otherwise.
        beta_init: Initial residual strength of every block.
        beta_parameterization: ``"bounded"`` (tanh) or ``"free"``.
        random_state: Seeds both the initial angles and the batch order.
    """

    def __init__(
        self,
        n_blocks=5,
        backbone_depth=0,
        n_qubits=None,
        learning_rate=5e-3,
        weight_decay=1e-4,
        batch_size=None,
        epochs=None,
        beta_init=0.5,
        beta_parameterization="bounded",
        random_state=0,
    ):
        self.n_blocks = n_blocks
        self.backbone_depth = backbone_depth
        self.n_qubits = n_qubits
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.beta_init = beta_init
        self.beta_parameterization = beta_parameterization
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=float)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        k = len(self.classes_)
        if k < 2:
            raise ValueError("need at least two classes")
        n = self.n_qubits if self.n_qubits is not None else _qubits_for(X.shape[1])
        if X.shape[1] > 2**n:
            raise ValueError(f"{X.shape[1]} features do not fit in {n} qubits")
        n_out = 1 if k == 2 else k
        if n_out > n:
            raise ValueError(f"{k} classes need at least {k} qubits, got {n}")
        task = "binary" if k == 2 else "multiclass"
        overrides = {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "seed": int(self.random_state or 0),
            "beta_parameterization": self.beta_parameterization,
        }
        if self.batch_size is not None:
            overrides["batch_size"] = self.batch_size
        if self.epochs is not None:
            overrides["epochs"] = self.epochs
        config = TrainingConfig.for_task(task, **overrides)
        rng = np.random.default_rng(self.random_state)
        model = ResidualModel.random(n, self.n_blocks, self.backbone_depth, n_out, self.beta_init, rng)
        result = train(model, Dataset(X, y_idx, "estimator"), config)
        self.model_ = result.model
        self.history_ = result.history
        self.config_ = config
        self.n_qubits_ = n
        return self

    def decision_function(self, X):
        """Raw logits: shape ``(n,)`` for binary problems, ``(n, k)`` otherwise."""
        check_is_fitted(self, "model_")
        X = validate_data(self, X, dtype=float, reset=False)
        logits = forward(self.model_, encode_batch(X, PreprocessSpec(2**self.n_qubits_)))
        return logits[:, 0] if logits.shape[1] == 1 else logits

    def predict_proba(self, X):
        z = self.decision_function(X)
        if z.ndim == 1:
            p = expit(z)
            return np.column_stack([1.0 - p, p])
        return softmax(z, axis=1)

    def predict(self, X):
        z = self.decision_function(X)
        idx = (expit(z) > 0.5).astype(int) if z.ndim == 1 else np.argmax(z, axis=1)
        return self.classes_[idx]
