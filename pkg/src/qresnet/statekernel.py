"""Dense statevector kernel.

Qubit ordering is little-endian: qubit 0 is the least significant bit of the
basis index, so amplitude ``a[i]`` belongs to the computational basis state
whose bit ``q`` equals ``(i >> q) & 1``. Every array routine here accepts
leading batch axes; the last axis always holds the ``2**n`` amplitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

ROTATION_KINDS = ("RY", "RZ")
FIXED_KINDS = ("X", "Y", "Z", "H")
GATE_KINDS = ROTATION_KINDS + FIXED_KINDS + ("CNOT",)

NORM_ATOL = 1e-8
MAX_DENSE_QUBITS = 12


class QubitIndexError(IndexError):
    pass


@dataclass(frozen=True)
class GateOp:
    kind: str
    target: int
    control: Optional[int] = None
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CNOT" and self.control is None:
            raise ValueError("CNOT needs a control qubit")
        if self.control is not None and self.control == self.target:
            raise ValueError("control and target must differ")
        if not math.isfinite(self.angle):
            raise ValueError("gate angle must be finite")

    @property
    def qubits(self) -> tuple:
        if self.control is None:
            return (self.target,)
        return (self.control, self.target)


@dataclass
class StateVector:
    amplitudes: np.ndarray
    n_qubits: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes, got {self.amplitudes.shape}"
            )

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(amps, n_qubits)

    @classmethod
    def basis(cls, index: int, n_qubits: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps, n_qubits)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.n_qubits)


def ry_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def rz_matrix(theta: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * theta), 0.0], [0.0, np.exp(0.5j * theta)]],
        dtype=np.complex128,
    )


_FIXED = {
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "H": np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2),
}


def gate_matrix(gate: GateOp) -> np.ndarray:
    """2x2 matrix acting on the target (for CNOT, the matrix applied when the control is 1)."""
    if gate.kind == "RY":
        return ry_matrix(gate.angle)
    if gate.kind == "RZ":
        return rz_matrix(gate.angle)
    if gate.kind == "CNOT":
        return _FIXED["X"]
    return _FIXED[gate.kind]


def _split(amps: np.ndarray, qubit: int) -> np.ndarray:
    # (..., hi, 2, lo) view with the middle axis carrying the qubit's bit
    dim = amps.shape[-1]
    lo = 1 << qubit
    return amps.reshape(amps.shape[:-1] + (dim // (2 * lo), 2, lo))


def apply_matrix_1q(amps: np.ndarray, matrix: np.ndarray, qubit: int) -> np.ndarray:
    """Return a new array with a 2x2 ``matrix`` applied to ``qubit``.

    ``matrix`` may carry leading batch axes matching those of ``amps``
    (shape ``batch + (2, 2)``) to apply a different gate per batch entry.
    """
    view = _split(amps, qubit)
    a0 = view[..., 0, :]
    a1 = view[..., 1, :]
    m = np.asarray(matrix)
    if m.ndim > 2:
        extra = view.ndim - 2 - (m.ndim - 2)
        m = m.reshape(m.shape[:-2] + (1,) * extra + (1, 2, 2))
        m00, m01, m10, m11 = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    else:
        m00, m01, m10, m11 = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    out = np.empty(view.shape, dtype=np.result_type(amps, m, np.complex128))
    out[..., 0, :] = m00 * a0 + m01 * a1
    out[..., 1, :] = m10 * a0 + m11 * a1
    return out.reshape(amps.shape)


def apply_cnot_array(amps: np.ndarray, control: int, target: int) -> np.ndarray:
    dim = amps.shape[-1]
    idx = np.arange(dim)
    src = np.where((idx >> control) & 1, idx ^ (1 << target), idx)
    return amps[..., src]


def _check_qubits(gate: GateOp, n: int):
    for q in gate.qubits:
        if not 0 <= q < n:
            raise QubitIndexError(f"qubit {q} out of range for {n} qubits")


def apply_gate_array(amps: np.ndarray, gate: GateOp, n: int) -> np.ndarray:
    _check_qubits(gate, n)
    if gate.kind == "CNOT":
        return apply_cnot_array(amps, gate.control, gate.target)
    if gate.control is not None:
        return apply_controlled_array(amps, gate.control, [GateOp(gate.kind, gate.target, angle=gate.angle)], n)
    return apply_matrix_1q(amps, gate_matrix(gate), gate.target)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Apply one gate and return the new state; the input is left untouched."""
    return StateVector(apply_gate_array(state.amplitudes, gate, state.n_qubits), state.n_qubits)


def apply_controlled_array(
    amps: np.ndarray, control: int, gates: Sequence[GateOp], n: int
) -> np.ndarray:
    if not 0 <= control < n:
        raise QubitIndexError(f"control qubit {control} out of range for {n} qubits")
    for g in gates:
        _check_qubits(g, n)
        if control in g.qubits:
            raise ValueError(f"control qubit {control} overlaps gate {g}")
    view = _split(amps, control)
    out = view.copy()
    # The control-1 slice is a dense register over the remaining n-1 qubits.
    sub = np.ascontiguousarray(view[..., 1, :]).reshape(amps.shape[:-1] + (-1,))

    def squeeze(q):
        return q if q < control else q - 1

    for g in gates:
        if g.kind == "CNOT":
            sub = apply_cnot_array(sub, squeeze(g.control), squeeze(g.target))
        elif g.control is not None:
            raise ValueError("nested controls are not supported")
        else:
            sub = apply_matrix_1q(sub, gate_matrix(g), squeeze(g.target))
    out[..., 1, :] = sub.reshape(view[..., 1, :].shape)
    return out.reshape(amps.shape)


def apply_controlled_unitary(state: StateVector, control: int, gates: Sequence[GateOp]) -> StateVector:
    """Apply ``gates`` only on the subspace where ``control`` is 1.

    The control-0 half of the amplitudes is copied through unchanged.
    """
    return StateVector(
        apply_controlled_array(state.amplitudes, control, gates, state.n_qubits),
        state.n_qubits,
    )


def z_signs(n: int, qubit: int) -> np.ndarray:
    idx = np.arange(2**n)
    return 1.0 - 2.0 * ((idx >> qubit) & 1)


def expectation_z_array(amps: np.ndarray, qubit: int) -> np.ndarray:
    n = int(amps.shape[-1]).bit_length() - 1
    probs = amps.real**2 + amps.imag**2
    return probs @ z_signs(n, qubit)


def expectation_z(state: StateVector, qubit: int, n_data: Optional[int] = None) -> float:
    """Exact <Z_qubit>; all other qubits, ancillas included, are traced out."""
    if n_data is not None and qubit >= n_data:
        raise QubitIndexError(f"observable qubit {qubit} is not a data qubit (n_data={n_data})")
    if not 0 <= qubit < state.n_qubits:
        raise QubitIndexError(f"qubit {qubit} out of range")
    if abs(state.norm() - 1.0) > NORM_ATOL:
        raise ValueError(f"state is not normalized (norm={state.norm():.3g})")
    return float(expectation_z_array(state.amplitudes, qubit))


def dense_unitary_of(gates: Iterable[GateOp], n: int) -> np.ndarray:
    """Dense ``2**n x 2**n`` matrix of a gate sequence (first gate acts first)."""
    if n > MAX_DENSE_QUBITS:
        raise ValueError(f"dense matrices are limited to {MAX_DENSE_QUBITS} qubits, got {n}")
    # Columns are images of basis states; transpose so rows carry the batch axis.
    cols = np.eye(2**n, dtype=np.complex128)
    for g in gates:
        cols = apply_gate_array(cols, g, n)
    return cols.T


def controlled_dense(w: np.ndarray) -> np.ndarray:
    """I (+) W with the control as the most significant qubit."""
    d = w.shape[0]
    out = np.zeros((2 * d, 2 * d), dtype=np.complex128)
    out[:d, :d] = np.eye(d)
    out[d:, d:] = w
    return out
