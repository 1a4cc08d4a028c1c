"""FGSM attacks on residual classifiers.

Perturbations live in raw pixel space; the quantum model re-pads and
re-normalizes whatever it is given. White-box directions come from exact
input gradients of the task loss, black-box directions from a classical MLP
trained on the same pixels.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Protocol, Sequence

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPClassifier

from .data import Dataset, PreprocessSpec, encode_batch
from .gradients import batch_gradients, pull_back_amplitude_grad
from .residual import ResidualModel, forward
from .training import predict_labels, task_loss

DEFAULT_EPSILONS = (0.0, 0.05, 0.1, 0.2, 0.3)


@dataclass(frozen=True)
class AttackConfig:
    epsilons: Sequence[float] = DEFAULT_EPSILONS
    mode: str = "whitebox"
    clip: tuple = (0.0, 1.0)

    def __post_init__(self):
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilon must be non-negative")
        if self.mode not in ("whitebox", "blackbox"):
            raise ValueError("mode must be 'whitebox' or 'blackbox'")
        if self.clip[0] >= self.clip[1]:
            raise ValueError("clip range is empty")


def fgsm(x, grad, epsilon: float, clip=(0.0, 1.0)) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != x.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match input {x.shape}")
    return np.clip(x + epsilon * np.sign(grad), clip[0], clip[1])


class GradientSource(Protocol):
    def input_gradient(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray: ...


# -- quantum model ------------------------------------------------------------


def model_loss_and_input_grad(model: ResidualModel, x: np.ndarray, labels: np.ndarray):
    """Per-sample task loss and its gradient with respect to raw pixels."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.asarray(labels)
    spec = PreprocessSpec(2**model.n_data)
    padded = np.zeros((x.shape[0], spec.pad_to))
    padded[:, : x.shape[1]] = x
    norms = np.linalg.norm(padded, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot encode an all-zero feature vector")
    x_hat = padded / norms[:, None]
    losses = np.empty(x.shape[0])

    def weights_fn(logits, rows):
        losses[rows], g = task_loss(logits, labels[rows])
        return g

    bg = batch_gradients(model, x_hat, weights_fn)
    return losses, pull_back_amplitude_grad(bg.d_amplitudes, x_hat, norms, x.shape[1])


@dataclass
class ModelGradientSource:
    """Loss gradients of the attacked model itself (white-box, or self-transfer)."""

    model: ResidualModel

    def input_gradient(self, x, labels):
        return model_loss_and_input_grad(self.model, x, labels)[1]


# -- classical surrogate --------------------------------------------------------


@dataclass
class SurrogateMlp:
    """One-hidden-layer ReLU network with exact input gradients.

    Fitting is delegated to scikit-learn; the input gradient of the log loss
    is back-propagated by hand from the fitted weights.
    """

    hidden: int = 128
    seed: int = 0
    clf: Optional[MLPClassifier] = None

    def fit(self, x, labels, epochs: int = 30) -> "SurrogateMlp":
        self.clf = MLPClassifier(
            hidden_layer_sizes=(self.hidden,),
            activation="relu",
            max_iter=max(epochs, 1),
            random_state=self.seed,
            learning_rate_init=1e-3,
        )
        if epochs == 0:
            # a single partial step leaves the network essentially at its initialization
            self.clf.partial_fit(x[:1], labels[:1], classes=np.unique(labels))
            return self
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.clf.fit(x, labels)
        return self

    def predict(self, x) -> np.ndarray:
        return self.clf.predict(np.atleast_2d(x))

    def accuracy(self, dataset: Dataset) -> float:
        return float(np.mean(self.predict(dataset.samples) == dataset.labels))

    def input_gradient(self, x, labels) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        labels = np.asarray(labels)
        (w1, w2), (b1, b2) = self.clf.coefs_, self.clf.intercepts_
        pre = x @ w1 + b1
        h = np.maximum(pre, 0.0)
        out = h @ w2 + b2
        if out.shape[1] == 1:
            # logistic output unit for binary problems
            p = 1.0 / (1.0 + np.exp(-out))
            y = (labels == self.clf.classes_[1]).astype(float)[:, None]
            d_out = p - y
        else:
            p = np.exp(out - out.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            onehot = (labels[:, None] == self.clf.classes_[None, :]).astype(float)
            d_out = p - onehot
        d_h = (d_out @ w2.T) * (pre > 0)
        return d_h @ w1.T


def train_surrogate(dataset: Dataset, epochs: int = 30, seed: int = 0, hidden: int = 128) -> SurrogateMlp:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    mlp = SurrogateMlp(hidden, seed).fit(dataset.samples, dataset.labels, epochs)
    if epochs > 0:
        acc = mlp.accuracy(dataset)
        if acc < 0.7:
            warnings.warn(f"surrogate did not converge (train accuracy {acc:.3f})", RuntimeWarning)
    return mlp


# -- attacks --------------------------------------------------------------------


@dataclass
class AttackReport:
    mode: str
    epsilons: List[float]
    accuracies: List[float]
    n_samples: int
    mean_losses: List[float] = field(default_factory=list)

    def rows(self) -> List[dict]:
        return [
            {"epsilon": e, "mode": self.mode, "accuracy": a, "n_samples": self.n_samples}
            for e, a in zip(self.epsilons, self.accuracies)
        ]


def write_report_csv(reports: Sequence[AttackReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "mode", "accuracy", "n_samples"])
        for rep in reports:
            for row in rep.rows():
                w.writerow([repr(float(row["epsilon"])), row["mode"], repr(float(row["accuracy"])), row["n_samples"]])


def _run_attack(model, dataset, source: GradientSource, config: AttackConfig, mode: str, dump_dir=None):
    x, y = dataset.samples, dataset.labels
    grad = source.input_gradient(x, y)
    spec = PreprocessSpec(2**model.n_data)
    accs, losses = [], []
    for eps in config.epsilons:
        x_adv = fgsm(x, grad, eps, config.clip)
        logits = forward(model, encode_batch(x_adv, spec))
        accs.append(float(np.mean(predict_labels(logits) == y)))
        losses.append(float(np.mean(task_loss(logits, y)[0])))
        if dump_dir is not None:
            out = Path(dump_dir) / f"{mode}_eps{eps:g}"
            out.mkdir(parents=True, exist_ok=True)
            for i, row in enumerate(x_adv):
                np.save(out / f"sample_{i:05d}.npy", row)
    return AttackReport(mode, [float(e) for e in config.epsilons], accs, len(dataset), losses)


def whitebox_attack(model: ResidualModel, dataset: Dataset, config: AttackConfig, dump_dir=None) -> AttackReport:
    return _run_attack(model, dataset, ModelGradientSource(model), config, "whitebox", dump_dir)


def blackbox_attack(
    model: ResidualModel, surrogate: GradientSource, dataset: Dataset, config: AttackConfig, dump_dir=None
) -> AttackReport:
    return _run_attack(model, dataset, surrogate, config, "blackbox", dump_dir)
