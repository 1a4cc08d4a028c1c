"""Ancilla-controlled residual blocks and the scaled surrogate.

Each block owns one ancilla qubit, prepared with RY(theta) where
``theta = 2 arctan|beta|``, used as the control of the variational layer
``W`` and rotated back with RY(-theta). The ancillas are never measured:
the model output is ``prod(1 + beta**2) * <Z_i>`` of the data register with
all ancillas traced out.

Two auxiliary views are provided for checking that picture: a generic
gate-by-gate circuit over data+ancilla qubits, and the dense effective map
``M = (I + |beta|**2 W) / (1 + |beta|**2)`` that the ancilla-0 branch
implements.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import engine
from .ansatz import AnsatzSpec, build_qvc, build_w_layer, QvcBackbone, random_angles
from .statekernel import (
    GateOp,
    NORM_ATOL,
    StateVector,
    apply_controlled_array,
    apply_gate_array,
    apply_matrix_1q,
    dense_unitary_of,
    expectation_z_array,
    ry_matrix,
)

UNITARY_ATOL = 1e-8
MAX_MAP_QUBITS = 12


def ancilla_angle(beta: float) -> float:
    """Preparation angle ``2 arctan|beta|``; the sign of beta never reaches the circuit."""
    return float(2.0 * np.arctan(abs(beta)))


@dataclass
class ResidualBlock:
    beta: float
    w_params: np.ndarray  # (n_data, 3)
    ancilla: int


@dataclass
class ResidualModel:
    """Full parameter set of a residual classifier.

    ``w`` holds one ``(n_data, 3)`` layer of ZYZ angles per block, ``beta`` the
    residual strengths and ``backbone`` the optional QVC layers applied before
    the blocks. ``n_outputs`` is the number of logits: 1 for a binary task,
    otherwise the number of classes, read from qubits ``0..n_outputs-1``.
    """

    n_data: int
    w: np.ndarray
    beta: np.ndarray
    backbone: np.ndarray = field(default_factory=lambda: np.zeros((0, 1, 3)))
    n_outputs: int = 1

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float).reshape(-1, self.n_data, 3)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.backbone = np.asarray(self.backbone, dtype=float).reshape(-1, self.n_data, 3)
        if len(self.beta) != len(self.w):
            raise ValueError("one beta per residual block is required")
        if len(self.w) < 1:
            raise ValueError("at least one residual block is required")
        if not 1 <= self.n_outputs <= self.n_data:
            raise ValueError(f"n_outputs must be in [1, {self.n_data}]")

    @classmethod
    def random(
        cls,
        n_data: int,
        n_blocks: int = 5,
        backbone_depth: int = 0,
        n_outputs: int = 1,
        beta_init: Optional[float] = 0.5,
        rng: Optional[np.random.Generator] = None,
    ) -> "ResidualModel":
        """Angles uniform in [-pi, pi]; beta fixed to ``beta_init`` (uniform in [-1, 1] if None)."""
        rng = np.random.default_rng(rng)
        backbone = random_angles((backbone_depth, n_data, 3), rng)
        w = random_angles((n_blocks, n_data, 3), rng)
        if beta_init is None:
            beta = rng.uniform(-1.0, 1.0, size=n_blocks)
        else:
            beta = np.full(n_blocks, float(beta_init))
        return cls(n_data, w, beta, backbone, n_outputs)

    @property
    def n_blocks(self) -> int:
        return len(self.beta)

    @property
    def n_total(self) -> int:
        return self.n_data + self.n_blocks

    @property
    def task(self) -> str:
        return "binary" if self.n_outputs == 1 else "multiclass"

    @property
    def scale(self) -> float:
        return float(np.prod(1.0 + self.beta**2))

    @property
    def spec(self) -> AnsatzSpec:
        return AnsatzSpec(self.n_data)

    def blocks(self) -> List[ResidualBlock]:
        return [
            ResidualBlock(float(b), p, self.n_data + l)
            for l, (b, p) in enumerate(zip(self.beta, self.w))
        ]

    def copy(self) -> "ResidualModel":
        return ResidualModel(self.n_data, self.w.copy(), self.beta.copy(), self.backbone.copy(), self.n_outputs)

    def compile(self) -> engine.CompiledModel:
        return engine.CompiledModel.compile(self.n_data, self.backbone, self.w, self.beta)

    # flat parameter order: backbone angles, block angles, betas
    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.backbone.ravel(), self.w.ravel(), self.beta])

    def with_vector(self, vec) -> "ResidualModel":
        vec = np.asarray(vec, dtype=float)
        nb, nw = self.backbone.size, self.w.size
        if vec.shape != (nb + nw + self.n_blocks,):
            raise ValueError("parameter vector has the wrong length")
        return ResidualModel(
            self.n_data,
            vec[nb : nb + nw].reshape(self.w.shape),
            vec[nb + nw :].copy(),
            vec[:nb].reshape(self.backbone.shape),
            self.n_outputs,
        )


def _as_batch(x_encoded, n_data: int) -> np.ndarray:
    if isinstance(x_encoded, StateVector):
        x_encoded = x_encoded.amplitudes
    psi = np.atleast_2d(np.asarray(x_encoded, dtype=np.complex128))
    if psi.shape[-1] != 2**n_data:
        raise ValueError(f"encoded state must have {2**n_data} amplitudes, got {psi.shape[-1]}")
    norms = np.linalg.norm(psi, axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_ATOL):
        raise ValueError("encoded states must be normalized")
    return psi


def forward(model: ResidualModel, x_encoded, batch_size: int = 64) -> np.ndarray:
    """Logits ``prod(1 + beta**2) * <Z_i>``.

    A single state gives shape ``(n_outputs,)``; a batch ``(batch, 2**n)``
    gives ``(batch, n_outputs)``.
    """
    single = isinstance(x_encoded, StateVector) or np.ndim(x_encoded) == 1
    psi0 = _as_batch(x_encoded, model.n_data)
    cm = model.compile()
    out = np.empty((psi0.shape[0], model.n_outputs))
    for sl in engine.chunked(psi0.shape[0], batch_size):
        out[sl] = cm.scale * engine.z_expectations(engine.run(cm, psi0[sl]), model.n_outputs)
    return out[0] if single else out


def block_gates(block: ResidualBlock, n_data: int) -> List[GateOp]:
    return build_w_layer(AnsatzSpec(n_data), block.w_params)


def apply_residual_block(state: StateVector, block: ResidualBlock, n_data: int) -> StateVector:
    """RY(theta) on the ancilla, controlled W on the data, RY(-theta); nothing is measured."""
    if block.ancilla < n_data:
        raise ValueError(f"ancilla {block.ancilla} collides with the data register")
    theta = ancilla_angle(block.beta)
    n = state.n_qubits
    amps = apply_gate_array(state.amplitudes, GateOp("RY", block.ancilla, angle=theta), n)
    amps = apply_controlled_array(amps, block.ancilla, block_gates(block, n_data), n)
    amps = apply_gate_array(amps, GateOp("RY", block.ancilla, angle=-theta), n)
    return StateVector(amps, n)


def embed_data_state(x_encoded, model: ResidualModel) -> StateVector:
    """Place a data-register state into the full register with every ancilla in |0>."""
    psi = _as_batch(x_encoded, model.n_data)[0]
    amps = np.zeros(2**model.n_total, dtype=np.complex128)
    amps[: psi.size] = psi
    return StateVector(amps, model.n_total)


def circuit_forward(model: ResidualModel, x_encoded) -> np.ndarray:
    """Logits from the gate-by-gate full-register circuit (reference path)."""
    state = embed_data_state(x_encoded, model)
    for g in build_qvc(QvcBackbone(model.backbone), model.spec):
        state = StateVector(apply_gate_array(state.amplitudes, g, state.n_qubits), state.n_qubits)
    for block in model.blocks():
        state = apply_residual_block(state, block, model.n_data)
    return model.scale * np.array(
        [expectation_z_array(state.amplitudes, q) for q in range(model.n_outputs)]
    )


def _check_unitary(w: np.ndarray):
    w = np.asarray(w, dtype=np.complex128)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("W must be a square matrix")
    if np.max(np.abs(w.conj().T @ w - np.eye(w.shape[0]))) > UNITARY_ATOL:
        raise ValueError("W is not unitary")
    return w


@dataclass
class EffectiveMap:
    matrix: np.ndarray

    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def effective_map(beta: float, w_dense) -> EffectiveMap:
    w = _check_unitary(w_dense)
    b2 = abs(beta) ** 2
    return EffectiveMap((np.eye(w.shape[0]) + b2 * w) / (1.0 + b2))


def discarded_branch_map(beta: float, w_dense) -> np.ndarray:
    """Data-register operator reached on the ancilla-1 outcome, ``c s (W - I)``."""
    w = np.asarray(w_dense, dtype=np.complex128)
    b2 = abs(beta) ** 2
    return (abs(beta) / (1.0 + b2)) * (w - np.eye(w.shape[0]))


def _normalized_vector(psi_in) -> np.ndarray:
    if isinstance(psi_in, StateVector):
        psi_in = psi_in.amplitudes
    psi = np.asarray(psi_in, dtype=np.complex128)
    if abs(np.linalg.norm(psi) - 1.0) > NORM_ATOL:
        raise ValueError("input state must be normalized")
    return psi


def success_probability(psi_in, beta: float, w_dense) -> float:
    psi = _normalized_vector(psi_in)
    w = np.asarray(w_dense, dtype=np.complex128)
    b2 = abs(beta) ** 2
    overlap = np.vdot(psi, w @ psi).real
    return float((1.0 + b2**2 + 2.0 * b2 * overlap) / (1.0 + b2) ** 2)


def layer_unitaries(model: ResidualModel) -> List[np.ndarray]:
    if model.n_data > MAX_MAP_QUBITS:
        raise ValueError(f"dense maps are limited to {MAX_MAP_QUBITS} data qubits")
    return [dense_unitary_of(block_gates(b, model.n_data), model.n_data) for b in model.blocks()]


def backbone_state(model: ResidualModel, x_encoded) -> np.ndarray:
    psi = _as_batch(x_encoded, model.n_data)[0]
    for g in build_qvc(QvcBackbone(model.backbone), model.spec):
        psi = apply_gate_array(psi, g, model.n_data)
    return psi


@dataclass
class MapPathResult:
    state: np.ndarray  # unnormalized M_L ... M_1 |psi>
    probabilities: List[float]
    total_probability: float


def map_chain(psi: np.ndarray, betas: Sequence[float], w_denses: Sequence[np.ndarray]) -> MapPathResult:
    """Apply the effective maps in order, recording p_l on each normalized intermediate state."""
    state = np.asarray(psi, dtype=np.complex128)
    probs = []
    for beta, w in zip(betas, w_denses):
        nrm = np.linalg.norm(state)
        probs.append(success_probability(state / nrm, beta, w) if nrm > 0 else 0.0)
        state = effective_map(beta, w).matrix @ state
    return MapPathResult(state, probs, float(np.prod(probs)))


def map_path_forward(model: ResidualModel, x_encoded) -> MapPathResult:
    return map_chain(backbone_state(model, x_encoded), model.beta, layer_unitaries(model))


def apply_controlled_dense(amps: np.ndarray, control: int, w: np.ndarray, n_data: int) -> np.ndarray:
    """Apply a dense data-register matrix on the control-1 half of the full register."""
    dim = amps.shape[-1]
    lo = 1 << control
    view = amps.reshape(dim // (2 * lo), 2, lo).copy()
    sub = view[:, 1, :].reshape(-1, 2**n_data)  # data qubits are the lowest bits
    view[:, 1, :] = (sub @ w.T).reshape(view[:, 1, :].shape)
    return view.reshape(dim)


def dense_circuit_expectations(psi, betas, w_denses, n_outputs: int = 1) -> np.ndarray:
    """Unpostselected circuit run with explicit W matrices; returns <Z_i>, ancillas traced."""
    psi = np.asarray(psi, dtype=np.complex128)
    n_data = int(psi.size).bit_length() - 1
    n_total = n_data + len(betas)
    amps = np.zeros(2**n_total, dtype=np.complex128)
    amps[: psi.size] = psi
    for l, (beta, w) in enumerate(zip(betas, w_denses)):
        anc = n_data + l
        theta = ancilla_angle(beta)
        amps = apply_matrix_1q(amps, ry_matrix(theta), anc)
        amps = apply_controlled_dense(amps, anc, np.asarray(w, dtype=np.complex128), n_data)
        amps = apply_matrix_1q(amps, ry_matrix(-theta), anc)
    return np.array([expectation_z_array(amps, q) for q in range(n_outputs)])


@dataclass
class SemanticsReport:
    """Circuit value against the effective-map value, with the gap accounted for.

    ``f_map`` is ``scale * <phi|Z_0|phi>`` for the unnormalized ancilla-0
    branch ``phi = M_L ... M_1 psi``, i.e. ``scale * P * <Z_0>_post`` with
    ``P`` the chained success probability and ``<Z_0>_post`` what a
    post-selected run would report. ``branch_term`` is the scaled
    contribution of every ancilla string with at least one 1, and
    ``residual = f_circuit - f_map - branch_term`` should vanish.
    """

    f_circuit: float
    f_map: float
    postselected_z: float
    total_probability: float
    branch_term: float
    residual: float
    residual_branch_magnitude: List[float]

    @property
    def difference(self) -> float:
        return self.f_circuit - self.f_map


def compare_semantics_dense(psi, betas, w_denses) -> SemanticsReport:
    psi = _normalized_vector(psi)
    betas = [float(b) for b in betas]
    w_denses = [_check_unitary(w) for w in w_denses]
    signs = 1.0 - 2.0 * (np.arange(psi.size) & 1)
    scale = float(np.prod([1.0 + b * b for b in betas]))

    f_circuit = scale * float(dense_circuit_expectations(psi, betas, w_denses)[0])
    chain = map_chain(psi, betas, w_denses)
    phi = chain.state
    weight = float(np.vdot(phi, phi).real)
    z_post = float(np.vdot(phi, signs * phi).real / weight) if weight > 0 else float("nan")
    f_map = scale * float(np.vdot(phi, signs * phi).real)

    kraus = [
        (effective_map(b, w).matrix, discarded_branch_map(b, w)) for b, w in zip(betas, w_denses)
    ]
    branch = 0.0
    for bits in itertools.product((0, 1), repeat=len(betas)):
        if not any(bits):
            continue
        v = psi
        for (m, k), bit in zip(kraus, bits):
            v = (k if bit else m) @ v
        branch += float(np.vdot(v, signs * v).real)
    branch *= scale

    magnitudes = []
    state = psi
    for (m, k) in kraus:
        nrm = np.linalg.norm(state)
        magnitudes.append(float(np.linalg.norm(k @ (state / nrm))) if nrm > 0 else 0.0)
        state = m @ state
    return SemanticsReport(
        f_circuit=f_circuit,
        f_map=f_map,
        postselected_z=z_post,
        total_probability=chain.total_probability,
        branch_term=branch,
        residual=f_circuit - f_map - branch,
        residual_branch_magnitude=magnitudes,
    )


def compare_semantics(model: ResidualModel, x_encoded) -> SemanticsReport:
    return compare_semantics_dense(backbone_state(model, x_encoded), model.beta, layer_unitaries(model))


# --- Bloch-sphere demonstration -------------------------------------------

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=np.complex128),
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    np.array([[1, 0], [0, -1]], dtype=np.complex128),
)


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` roughly evenly spread unit vectors."""
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def state_from_bloch(r) -> np.ndarray:
    x, y, z = r
    theta = np.arccos(np.clip(z, -1.0, 1.0))
    phi = np.arctan2(y, x)
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    return np.array([np.trace(rho @ p).real for p in PAULI])


def block_channel(psi: np.ndarray, theta: float, w: np.ndarray) -> np.ndarray:
    """Data density matrix after one block with both ancilla outcomes kept."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    ident = np.eye(w.shape[0])
    k0 = c * c * ident + s * s * w
    k1 = c * s * (w - ident)
    v0, v1 = k0 @ psi, k1 @ psi
    return np.outer(v0, v0.conj()) + np.outer(v1, v1.conj())


def bloch_demo(
    grid_size: int,
    w_dense=None,
    preparation_angle: float = np.pi / 2 - 0.05,
    angle_is: str = "theta",
    inputs: Optional[np.ndarray] = None,
) -> List[tuple]:
    """Push a grid of one-qubit states through one block and report Bloch vectors.

    ``preparation_angle`` is the ancilla angle theta by default; with
    ``angle_is="beta"`` it is read as a residual strength instead. Output
    vectors are the reduced data state's Bloch vector scaled to unit length
    (left at zero if the state is maximally mixed).
    """
    w = _check_unitary(PAULI[0] if w_dense is None else w_dense)
    if w.shape != (2, 2):
        raise ValueError("the Bloch demo runs on a single data qubit")
    if angle_is == "theta":
        theta = float(preparation_angle)
    elif angle_is == "beta":
        theta = ancilla_angle(preparation_angle)
    else:
        raise ValueError("angle_is must be 'theta' or 'beta'")
    pts = fibonacci_sphere(grid_size) if inputs is None else np.atleast_2d(inputs)
    rows = []
    for r in pts:
        out = bloch_vector(block_channel(state_from_bloch(r), theta, w))
        length = np.linalg.norm(out)
        out = out / length if length > 1e-12 else np.zeros(3)
        rows.append(tuple(float(v) for v in r) + tuple(float(v) for v in out))
    return rows
