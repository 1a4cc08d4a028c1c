"""Self-check suite behind ``qresnet verify``.

Each check returns a :class:`CheckResult`. The optional ``fault`` argument
injects a known defect into the fast simulation path so the suite can be
shown to catch it.
"""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import engine
from .ansatz import count_gates
from .barrenlab import weingarten_first_moment_check, weingarten_second_moment_check
from .gradients import grad_adjoint, grad_parameter_shift, grad_theta_parameter_shift, model_fd_gradient
from .residual import (
    ResidualModel,
    bloch_demo,
    circuit_forward,
    compare_semantics,
    forward,
)
from .statekernel import ry_matrix

FAULTS = ("ry_sign",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)


def _random_state(rng, n):
    v = rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def _models(seed: int, count: int):
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = (2, 3, 4)[i % 3]
        L = (1, 2, 3)[(i // 3) % 3]
        D = (0, 2)[i % 2]
        yield ResidualModel.random(n, L, D, beta_init=None, rng=rng), _random_state(rng, n)


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_forward_vs_circuit(seed=0, count=6) -> CheckResult:
    worst = max(float(np.max(np.abs(forward(m, x) - circuit_forward(m, x)))) for m, x in _models(seed, count))
    return CheckResult("forward_vs_circuit", worst < 1e-12, worst, 1e-12)


def shift_gradient_vector(model: ResidualModel, x) -> np.ndarray:
    """Shift-rule gradient in the ``to_vector`` order; betas via shifted ancilla angles."""
    out = []
    for group, arr in (("backbone", model.backbone), ("w", model.w)):
        for idx in np.ndindex(arr.shape):
            out.append(grad_parameter_shift(model, x, (group,) + idx))
    beta = model.beta
    for l in range(model.n_blocks):
        d_theta = grad_theta_parameter_shift(model, x, l)
        f = float(forward(model, x)[0])
        out.append(d_theta * 2.0 * np.sign(beta[l]) / (1 + beta[l] ** 2) + f * 2 * beta[l] / (1 + beta[l] ** 2))
    return np.array(out)


def check_gradients(seed=0, count=6) -> List[CheckResult]:
    shift_err, fd_err = 0.0, 0.0
    for m, x in _models(seed, count):
        g = grad_adjoint(m, x).to_vector()
        shift_err = max(shift_err, rel_err(g, shift_gradient_vector(m, x)))
        fd_err = max(fd_err, rel_err(g, model_fd_gradient(m, x)))
    return [
        CheckResult("gradient_adjoint_vs_shift", shift_err < 1e-10, shift_err, 1e-10),
        CheckResult("gradient_adjoint_vs_fd", fd_err < 1e-6, fd_err, 1e-6),
    ]


def check_semantics(seed=0, count=6) -> CheckResult:
    worst = max(abs(compare_semantics(m, x).residual) for m, x in _models(seed, count))
    return CheckResult("semantics_branch_accounting", worst < 1e-10, worst, 1e-10)


def check_weingarten(seed=0, samples=5000) -> List[CheckResult]:
    z = np.diag([1.0, -1.0])
    dev1 = weingarten_first_moment_check(2, z, samples, seed)
    dev2 = weingarten_second_moment_check(2, np.kron(z, z), samples, seed)
    return [
        CheckResult("weingarten_first_moment", dev1 < 0.05, dev1, 0.05),
        CheckResult("weingarten_second_moment", dev2 < 0.05, dev2, 0.05),
    ]


def check_bloch() -> CheckResult:
    rows = bloch_demo(0, inputs=np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    dev = max(float(np.max(np.abs(np.array(r[:3]) - np.array(r[3:])))) for r in rows)
    return CheckResult("bloch_x_fixed_points", dev < 1e-12, dev, 1e-12)


def check_gatecounts() -> CheckResult:
    got = [count_gates(10, 5).total, count_gates(10, 0, 30).total, count_gates(10, 5, 30).total, count_gates(10, 0, 200).total]
    bad = sum(g != e for g, e in zip(got, [200, 1200, 1400, 8000]))
    return CheckResult("gate_counts", bad == 0, float(bad), 0.0)


SUITES: Dict[str, Callable[[], List[CheckResult]]] = {
    "forward": lambda: [check_forward_vs_circuit()],
    "gradients": check_gradients,
    "semantics": lambda: [check_semantics()],
    "weingarten": check_weingarten,
    "bloch": lambda: [check_bloch()],
    "gatecount": lambda: [check_gatecounts()],
}


@contextlib.contextmanager
def injected_fault(fault: Optional[str]):
    """Temporarily corrupt the fast path; the gate-by-gate reference stays intact."""
    if fault is None:
        yield
        return
    if fault != "ry_sign":
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    original = engine.ry_matrix
    engine.ry_matrix = lambda theta: ry_matrix(-theta)
    try:
        yield
    finally:
        engine.ry_matrix = original


def run_suite(names: Sequence[str], fault: Optional[str] = None) -> List[CheckResult]:
    if not names:
        raise ValueError("empty suite selection")
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites {unknown}; choose from {sorted(SUITES)}")
    results = []
    with injected_fault(fault):
        for name in names:
            results.extend(SUITES[name]())
    return results
