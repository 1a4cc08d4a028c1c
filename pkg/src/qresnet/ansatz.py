"""Variational layer construction and gate accounting.

A layer applies RZ(theta_j) RY(phi_j) RZ(omega_j) on every data qubit j and
then a ring of CNOTs (qubit j controls j+1 mod n). The QVC backbone is a
stack of such layers with independent angles.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from .statekernel import GateOp


@dataclass(frozen=True)
class AnsatzSpec:
    n_data: int
    entanglement: str = "ring"

    def __post_init__(self):
        if self.n_data < 1:
            raise ValueError("n_data must be >= 1")
        if self.entanglement != "ring":
            raise ValueError(f"unsupported entanglement {self.entanglement!r}")


def ring_pairs(n_data: int) -> List[tuple]:
    """(control, target) pairs of the entangler; 1 pair for n=2, none for n=1."""
    if n_data == 1:
        return []
    if n_data == 2:
        return [(0, 1)]
    return [(j, (j + 1) % n_data) for j in range(n_data)]


def check_layer_params(params, n_data: int) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    if p.shape != (n_data, 3):
        raise ValueError(f"layer params must have shape ({n_data}, 3), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("layer params must be finite")
    return p


def build_w_layer(spec: AnsatzSpec, params) -> List[GateOp]:
    """Gate list of one layer. ``params[j] = (theta, phi, omega)`` for qubit j."""
    p = check_layer_params(params, spec.n_data)
    gates = []
    for j in range(spec.n_data):
        theta, phi, omega = p[j]
        gates.append(GateOp("RZ", j, angle=float(theta)))
        gates.append(GateOp("RY", j, angle=float(phi)))
        gates.append(GateOp("RZ", j, angle=float(omega)))
    gates.extend(GateOp("CNOT", t, control=c) for c, t in ring_pairs(spec.n_data))
    return gates


@dataclass
class QvcBackbone:
    params: np.ndarray  # (depth, n_data, 3)

    @property
    def depth(self) -> int:
        return int(np.shape(self.params)[0])


def build_qvc(backbone: QvcBackbone, spec: AnsatzSpec) -> List[GateOp]:
    gates = []
    for layer in np.asarray(backbone.params).reshape(-1, spec.n_data, 3):
        gates.extend(build_w_layer(spec, layer))
    return gates


@dataclass(frozen=True)
class GateCountReport:
    rotations: int
    cnots: int

    @property
    def total(self) -> int:
        return self.rotations + self.cnots

    def to_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


def count_gates(n_data: int, n_blocks: int = 0, backbone_depth: int = 0) -> GateCountReport:
    """Data-register gate count.

    Residual-block layers are counted as if uncontrolled and the ancilla
    preparation/uncompute rotations are left out, which is how the published
    totals are tallied.
    """
    layers = n_blocks + backbone_depth
    return GateCountReport(rotations=3 * n_data * layers, cnots=len(ring_pairs(n_data)) * layers)


def random_angles(shape, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    rng = np.random.default_rng() if rng is None else rng
    return rng.uniform(-np.pi, np.pi, size=shape)
