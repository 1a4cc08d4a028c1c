"""Residual quantum networks without post-selection, simulated exactly."""

from .ansatz import AnsatzSpec, GateCountReport, count_gates
from .data import Dataset, PreprocessSpec, amplitude_encode, load_mnist_idx
from .estimator import AmplitudeEncoder, QResNetClassifier
from .residual import ResidualModel, forward
from .statekernel import GateOp, StateVector

__all__ = [
    "AmplitudeEncoder",
    "AnsatzSpec",
    "Dataset",
    "GateCountReport",
    "GateOp",
    "PreprocessSpec",
    "QResNetClassifier",
    "ResidualModel",
    "StateVector",
    "amplitude_encode",
    "count_gates",
    "forward",
    "load_mnist_idx",
]

__version__ = "0.1.0"
