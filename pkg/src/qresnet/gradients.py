"""Exact derivatives of the residual surrogate.

Angles are differentiated with one adjoint sweep over the branch-row state.
Residual strengths enter twice, through the ancilla angle
``theta = 2 arctan|beta|`` and through the scale ``prod(1 + beta**2)``, and
both paths are combined here. Parameter-shift and central finite differences
are kept as independent checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import engine
from .residual import ResidualModel, _as_batch


@dataclass
class GradientVector:
    d_backbone: np.ndarray
    d_w: np.ndarray
    d_beta: np.ndarray
    d_input: Optional[np.ndarray] = None

    def to_vector(self) -> np.ndarray:
        """Flattened in the same order as ``ResidualModel.to_vector``."""
        return np.concatenate([self.d_backbone.ravel(), self.d_w.ravel(), self.d_beta.ravel()])


def dtheta_dbeta(beta) -> np.ndarray:
    # sign(0) = 0 makes beta = 0 stationary for the circuit term
    beta = np.asarray(beta, dtype=float)
    return 2.0 * np.sign(beta) / (1.0 + beta**2)


def _default_weights(model: ResidualModel, weights) -> np.ndarray:
    if weights is None:
        weights = np.zeros(model.n_outputs)
        weights[0] = 1.0
    return np.asarray(weights, dtype=float)


@dataclass
class BatchGradients:
    """Per-sample gradients of ``sum_i weights[b, i] * logit_i``."""

    values: np.ndarray  # (batch,) weighted logit sums
    logits: np.ndarray  # (batch, n_outputs)
    d_backbone: np.ndarray
    d_w: np.ndarray
    d_beta: np.ndarray
    d_theta: np.ndarray
    d_amplitudes: np.ndarray


def batch_gradients(
    model: ResidualModel,
    psi0: np.ndarray,
    weights_fn: Callable[[np.ndarray, slice], np.ndarray],
    scaling_only: bool = False,
    chunk: int = 64,
) -> BatchGradients:
    """Forward and adjoint sweep for a batch of encoded states.

    ``weights_fn(logits, rows)`` maps the logits of the batch rows ``rows``
    to observable weights of the same shape, so loss derivatives can be
    folded into the backward sweep. ``scaling_only`` drops the beta-through-theta term and
    keeps only the derivative of the scale factor.
    """
    cm = model.compile()
    n_b = psi0.shape[0]
    logits = np.empty((n_b, model.n_outputs))
    weights = np.empty_like(logits)
    d_backbone = np.empty((n_b,) + model.backbone.shape)
    d_w = np.empty((n_b,) + model.w.shape)
    d_theta = np.empty((n_b, model.n_blocks))
    d_amp = np.empty((n_b, 2**model.n_data))
    for sl in engine.chunked(n_b, chunk):
        psi = engine.run(cm, psi0[sl])
        logits[sl] = cm.scale * engine.z_expectations(psi, model.n_outputs)
        weights[sl] = weights_fn(logits[sl], sl)
        adj = engine.adjoint(cm, psi, weights[sl])
        d_backbone[sl] = cm.scale * adj.d_backbone
        d_w[sl] = cm.scale * adj.d_w
        d_theta[sl] = cm.scale * adj.d_theta
        d_amp[sl] = cm.scale * adj.d_input
    values = np.einsum("bi,bi->b", weights, logits)
    beta = model.beta
    d_beta = values[:, None] * (2.0 * beta / (1.0 + beta**2))[None, :]
    if not scaling_only:
        d_beta = d_beta + d_theta * dtheta_dbeta(beta)[None, :]
    return BatchGradients(values, logits, d_backbone, d_w, d_beta, d_theta, d_amp)


def grad_adjoint(model: ResidualModel, x_encoded, weights=None, scaling_only: bool = False) -> GradientVector:
    """Gradient of ``sum_i weights[i] * logit_i`` for one encoded state.

    With the default weights this is the gradient of the first logit,
    ``prod(1 + beta**2) * <Z_0>``.
    """
    w = _default_weights(model, weights)
    psi0 = _as_batch(x_encoded, model.n_data)[:1]
    bg = batch_gradients(model, psi0, lambda logits, _: np.broadcast_to(w, logits.shape), scaling_only)
    return GradientVector(bg.d_backbone[0], bg.d_w[0], bg.d_beta[0], bg.d_amplitudes[0])


def grad_beta(model: ResidualModel, x_encoded, weights=None, scaling_only: bool = False) -> np.ndarray:
    return grad_adjoint(model, x_encoded, weights, scaling_only).d_beta


def _shifted(model: ResidualModel, which: Tuple, delta: float) -> ResidualModel:
    m = model.copy()
    group, *index = which
    if group == "w":
        m.w[tuple(index)] += delta
    elif group == "backbone":
        m.backbone[tuple(index)] += delta
    else:
        raise ValueError(f"parameter-shift applies to rotation angles, not {group!r}")
    return m


def grad_parameter_shift(model: ResidualModel, x_encoded, which: Tuple, weights=None) -> float:
    """Two-term shift rule for one rotation angle.

    ``which`` is ``("w", block, qubit, k)`` or ``("backbone", layer, qubit, k)``
    with ``k`` indexing (theta, phi, omega). Residual strengths are not
    rotation angles and are rejected; use :func:`grad_beta`.
    """
    from .residual import forward

    w = _default_weights(model, weights)
    plus = forward(_shifted(model, which, np.pi / 2), x_encoded)
    minus = forward(_shifted(model, which, -np.pi / 2), x_encoded)
    return float(w @ (plus - minus) / 2.0)


def grad_theta_parameter_shift(model: ResidualModel, x_encoded, block: int, weights=None) -> float:
    """Shift rule for an ancilla angle, which appears twice (as +theta and -theta).

    Returns the scaled derivative ``prod(1 + beta**2) * d<Z>/d theta``.
    """
    from .residual import backbone_state, layer_unitaries

    w = _default_weights(model, weights)
    psi = backbone_state(model, x_encoded)
    us = layer_unitaries(model)
    n_out = model.n_outputs

    def value(theta_prep, theta_unc):
        return w @ _two_angle_circuit(psi, model, us, block, theta_prep, theta_unc, n_out)

    theta = 2.0 * np.arctan(abs(model.beta[block]))
    h = np.pi / 2
    d_prep = (value(theta + h, theta) - value(theta - h, theta)) / 2.0
    d_unc = (value(theta, theta + h) - value(theta, theta - h)) / 2.0
    return float(model.scale * (d_prep + d_unc))


def _two_angle_circuit(psi, model, us, block, theta_prep, theta_unc, n_out):
    from .residual import apply_controlled_dense
    from .statekernel import apply_matrix_1q, expectation_z_array, ry_matrix

    n_data = model.n_data
    amps = np.zeros(2**model.n_total, dtype=np.complex128)
    amps[: psi.size] = psi
    for l, (beta, w) in enumerate(zip(model.beta, us)):
        anc = n_data + l
        t = 2.0 * np.arctan(abs(beta))
        tp, tu = (theta_prep, theta_unc) if l == block else (t, t)
        amps = apply_matrix_1q(amps, ry_matrix(tp), anc)
        amps = apply_controlled_dense(amps, anc, w, n_data)
        amps = apply_matrix_1q(amps, ry_matrix(-tu), anc)
    return np.array([expectation_z_array(amps, q) for q in range(n_out)])


def finite_difference_oracle(fn: Callable[[np.ndarray], float], params, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    params = np.asarray(params, dtype=float)
    grad = np.empty_like(params)
    flat = params.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        gflat[i] = (fn((flat + e).reshape(params.shape)) - fn((flat - e).reshape(params.shape))) / (2 * step)
    return grad


def model_fd_gradient(model: ResidualModel, x_encoded, weights=None, step: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient over the flat parameter vector."""
    from .residual import forward

    w = _default_weights(model, weights)
    return finite_difference_oracle(
        lambda v: float(w @ forward(model.with_vector(v), x_encoded)), model.to_vector(), step
    )


def encode_with_jacobian(x_raw, pad_to: int):
    """Pad and L2-normalize; also return the norm needed by the normalization Jacobian."""
    x = np.asarray(x_raw, dtype=float).ravel()
    if x.size > pad_to:
        raise ValueError(f"{x.size} features do not fit in {pad_to} amplitudes")
    padded = np.zeros(pad_to)
    padded[: x.size] = x
    norm = np.linalg.norm(padded)
    if norm == 0.0:
        raise ValueError("cannot encode an all-zero feature vector")
    return padded / norm, norm


def pull_back_amplitude_grad(d_amp: np.ndarray, x_hat: np.ndarray, norm, n_features: int) -> np.ndarray:
    """Chain d/d(amplitudes) through x -> x / |x| and drop the padded entries.

    Works row-wise on batches: ``(I - x_hat x_hat^T) g / |x|``.
    """
    d_amp = np.atleast_2d(d_amp)
    x_hat = np.atleast_2d(x_hat)
    norm = np.reshape(norm, (-1, 1))
    radial = np.einsum("bi,bi->b", x_hat, d_amp)[:, None]
    g = (d_amp - radial * x_hat) / norm
    return g[:, :n_features]


def grad_input(model: ResidualModel, x_raw, weights=None) -> np.ndarray:
    """Gradient of a weighted logit sum with respect to raw input features."""
    x = np.asarray(x_raw, dtype=float).ravel()
    x_hat, norm = encode_with_jacobian(x, 2**model.n_data)
    g = grad_adjoint(model, x_hat, weights)
    return pull_back_amplitude_grad(g.d_input, x_hat, norm, x.size)[0]
