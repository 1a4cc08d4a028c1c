"""Losses, Adam, the training loop and checkpoints.

Binary models emit one logit (sigmoid read-out); multiclass models emit one
logit per class (softmax read-out). Residual strengths are trained through a
raw parameter ``b``: ``beta = bound * tanh(b)`` in bounded mode, ``beta = b``
in free mode.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .data import Dataset, PreprocessSpec, encode_batch
from .gradients import batch_gradients
from .residual import ResidualModel, forward

CHECKPOINT_VERSION = 1


@dataclass
class TrainingConfig:
    learning_rate: float = 5e-3
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    beta_parameterization: str = "bounded"
    beta_bound: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.beta_parameterization not in ("bounded", "free"):
            raise ValueError("beta_parameterization must be 'bounded' or 'free'")
        if self.beta_bound <= 0:
            raise ValueError("beta_bound must be positive")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainingConfig":
        base = {"batch_size": 32, "epochs": 30} if task == "binary" else {"batch_size": 256, "epochs": 5}
        base.update(overrides)
        return cls(**base)


# -- losses -----------------------------------------------------------------


def bce_loss(logit, label):
    """Stable BCE on ``sigmoid(logit)``; returns ``(loss, dloss/dlogit)``.

    Works elementwise on arrays.
    """
    z = np.asarray(logit, dtype=float)
    y = np.asarray(label, dtype=float)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    # log(1 + e^z) - y z, written without overflow
    loss = np.logaddexp(0.0, z) - y * z
    return loss, expit(z) - y


def cross_entropy_loss(logits, label):
    """``-log softmax(logits)[label]`` and its gradient ``softmax - onehot``.

    ``logits`` may be a batch ``(n, k)`` with integer ``label`` of shape ``(n,)``.
    """
    z = np.asarray(logits, dtype=float)
    y = np.asarray(label)
    k = z.shape[-1]
    if np.any((y < 0) | (y >= k)):
        raise ValueError(f"label out of range for {k} classes")
    onehot = np.eye(k)[y]
    loss = -np.sum(onehot * log_softmax(z, axis=-1), axis=-1)
    return loss, softmax(z, axis=-1) - onehot


def task_loss(logits: np.ndarray, labels: np.ndarray):
    """Per-sample loss and dloss/dlogits for a batch of shape ``(n, n_outputs)``."""
    if logits.shape[1] == 1:
        loss, g = bce_loss(logits[:, 0], labels)
        return loss, g[:, None]
    return cross_entropy_loss(logits, labels)


def predict_labels(logits: np.ndarray) -> np.ndarray:
    if logits.shape[1] == 1:
        return (expit(logits[:, 0]) > 0.5).astype(np.int64)
    return np.argmax(logits, axis=1)


# -- optimizer --------------------------------------------------------------

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: OptimizerState, config: TrainingConfig):
    """One Adam update with L2 weight decay folded into the gradient."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    g = grads + config.weight_decay * params
    t = state.step + 1
    m = ADAM_B1 * state.m + (1 - ADAM_B1) * g
    v = ADAM_B2 * state.v + (1 - ADAM_B2) * g * g
    m_hat = m / (1 - ADAM_B1**t)
    v_hat = v / (1 - ADAM_B2**t)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new, OptimizerState(m, v, t)


# -- beta parameterization --------------------------------------------------


def beta_to_raw(beta, config: TrainingConfig) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if config.beta_parameterization == "free":
        return beta.copy()
    if np.any(np.abs(beta) >= config.beta_bound):
        raise ValueError("bounded parameterization needs |beta| < beta_bound")
    return np.arctanh(beta / config.beta_bound)


def raw_to_beta(raw, config: TrainingConfig):
    """Return ``(beta, dbeta/draw)``."""
    raw = np.asarray(raw, dtype=float)
    if config.beta_parameterization == "free":
        return raw.copy(), np.ones_like(raw)
    t = np.tanh(raw)
    return config.beta_bound * t, config.beta_bound * (1.0 - t * t)


class Trainable:
    """Flat raw-parameter view of a model: backbone, block angles, raw betas."""

    def __init__(self, template: ResidualModel, raw: np.ndarray, config: TrainingConfig):
        self.template = template
        self.raw = np.asarray(raw, dtype=float)
        self.config = config

    @classmethod
    def from_model(cls, model: ResidualModel, config: TrainingConfig) -> "Trainable":
        raw = np.concatenate([model.backbone.ravel(), model.w.ravel(), beta_to_raw(model.beta, config)])
        return cls(model, raw, config)

    def _split(self, vec):
        nb, nw = self.template.backbone.size, self.template.w.size
        return vec[:nb], vec[nb : nb + nw], vec[nb + nw :]

    def model(self, raw: Optional[np.ndarray] = None) -> ResidualModel:
        bb, w, rb = self._split(self.raw if raw is None else raw)
        beta, _ = raw_to_beta(rb, self.config)
        t = self.template
        return ResidualModel(t.n_data, w.reshape(t.w.shape), beta, bb.reshape(t.backbone.shape), t.n_outputs)

    def loss_and_grad(self, psi0: np.ndarray, labels: np.ndarray, raw: Optional[np.ndarray] = None):
        """Mean task loss over the batch and its gradient in raw coordinates."""
        raw = self.raw if raw is None else raw
        model = self.model(raw)
        n = psi0.shape[0]
        losses = np.empty(n)

        def weights_fn(logits, rows):
            losses[rows], g = task_loss(logits, labels[rows])
            return g / n

        bg = batch_gradients(model, psi0, weights_fn)
        _, _, rb = self._split(raw)
        _, dbeta_draw = raw_to_beta(rb, self.config)
        grad = np.concatenate(
            [bg.d_backbone.sum(0).ravel(), bg.d_w.sum(0).ravel(), bg.d_beta.sum(0) * dbeta_draw]
        )
        return float(np.mean(losses)), grad, bg.logits


# -- loop -------------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    n_samples: int


def evaluate(model: ResidualModel, dataset: Dataset, spec: Optional[PreprocessSpec] = None) -> EvalResult:
    spec = spec or PreprocessSpec(2**model.n_data)
    if len(dataset) == 0:
        return EvalResult(float("nan"), float("nan"), 0)
    logits = forward(model, encode_batch(dataset.samples, spec))
    loss, _ = task_loss(logits, dataset.labels)
    acc = float(np.mean(predict_labels(logits) == dataset.labels))
    return EvalResult(acc, float(np.mean(loss)), len(dataset))


@dataclass
class TrainResult:
    model: ResidualModel
    history: List[dict]
    optimizer: OptimizerState
    raw: np.ndarray
    step_losses: List[float] = field(default_factory=list)


def train(
    model: ResidualModel,
    dataset: Dataset,
    config: TrainingConfig,
    test_set: Optional[Dataset] = None,
    on_step: Optional[Callable[[int, Trainable, float], None]] = None,
    state: Optional[OptimizerState] = None,
    start_epoch: int = 0,
) -> TrainResult:
    """Mini-batch Adam on the task loss.

    Each epoch draws a fresh permutation from ``seed`` and the epoch number,
    so a resumed run sees the same batches. ``history`` holds one row per
    epoch with the mean train loss and test accuracy.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if model.task == "binary" and dataset.n_classes > 2:
        raise ValueError("binary model given a multiclass dataset")
    spec = PreprocessSpec(2**model.n_data)
    psi_all = encode_batch(dataset.samples, spec)
    tr = Trainable.from_model(model, config)
    state = state or OptimizerState.zeros(tr.raw.size)
    history, step_losses = [], []
    for epoch in range(start_epoch, start_epoch + config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
        batch_losses, batch_sizes = [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad, _ = tr.loss_and_grad(psi_all[idx], dataset.labels[idx])
            tr.raw, state = adam_step(tr.raw, grad, state, config)
            batch_losses.append(loss)
            batch_sizes.append(len(idx))
            step_losses.append(loss)
            if on_step is not None:
                on_step(state.step, tr, loss)
        row = {"epoch": epoch + 1, "train_loss": float(np.average(batch_losses, weights=batch_sizes))}
        row["test_accuracy"] = evaluate(tr.model(), test_set, spec).accuracy if test_set is not None else float("nan")
        history.append(row)
    return TrainResult(tr.model(), history, state, tr.raw, step_losses)


# -- persistence --------------------------------------------------------------


def write_metrics_csv(history: List[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "test_accuracy"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["test_accuracy"])])


@dataclass
class Checkpoint:
    model: ResidualModel
    config: TrainingConfig
    raw: np.ndarray
    optimizer: OptimizerState
    epoch: int
    history: List[dict]

    def to_dict(self) -> dict:
        m = self.model
        return {
            "version": CHECKPOINT_VERSION,
            "model": {
                "n_data": m.n_data,
                "n_blocks": m.n_blocks,
                "backbone_depth": int(m.backbone.shape[0]),
                "n_outputs": m.n_outputs,
            },
            "config": asdict(self.config),
            "parameter_order": ["backbone", "w", "beta_raw"],
            "backbone": m.backbone.ravel().tolist(),
            "w": m.w.ravel().tolist(),
            "beta": m.beta.tolist(),
            "beta_raw": self.raw[m.backbone.size + m.w.size :].tolist(),
            "optimizer": {"m": self.optimizer.m.tolist(), "v": self.optimizer.v.tolist(), "step": self.optimizer.step},
            "epoch": self.epoch,
            "history": self.history,
        }

    def save(self, path) -> None:
        # json writes floats with repr, which round-trips doubles exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        md = d["model"]
        n, L, D = md["n_data"], md["n_blocks"], md["backbone_depth"]
        model = ResidualModel(
            n,
            np.array(d["w"], dtype=float).reshape(L, n, 3),
            np.array(d["beta"], dtype=float),
            np.array(d["backbone"], dtype=float).reshape(D, n, 3),
            md["n_outputs"],
        )
        raw = np.concatenate([model.backbone.ravel(), model.w.ravel(), np.array(d["beta_raw"], dtype=float)])
        opt = d["optimizer"]
        state = OptimizerState(np.array(opt["m"], dtype=float), np.array(opt["v"], dtype=float), int(opt["step"]))
        return cls(model, TrainingConfig(**d["config"]), raw, state, int(d["epoch"]), list(d["history"]))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_result(cls, result: TrainResult, config: TrainingConfig) -> "Checkpoint":
        epoch = result.history[-1]["epoch"] if result.history else 0
        return cls(result.model, config, result.raw, result.optimizer, epoch, result.history)
