"""Monte-Carlo checks of gradient-variance formulas under Haar averaging.

Haar unitaries come from the QR decomposition of a complex Ginibre matrix
with the diagonal phases of R folded back into Q. Gradient estimators use
the generator convention ``exp(-i theta P)`` so that the derivative of
``tr(U rho U^dag Z)`` is ``i tr(U_B rho U_B^dag [P, U_A^dag Z U_A])``.

Every estimator draws its trials in fixed-size chunks, each chunk with its
own generator spawned from the root seed, so results do not depend on how
many trials are requested at once beyond the chunk boundary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

MAX_HAAR_DIM = 4096
MAX_FLIP_DIM = 16
CHUNK = 250
CURVES = ("qvc", "qvc_printed", "theta", "theta_fourth_root", "beta", "combined", "combined_printed")


# -- sampling -----------------------------------------------------------------


def haar_unitary(d: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Haar-random ``d x d`` unitary (or a stack of ``size`` of them)."""
    if d > MAX_HAAR_DIM:
        raise MemoryError(f"refusing to draw {d}x{d} dense unitaries (limit {MAX_HAAR_DIM})")
    shape = (d, d) if size is None else (size, d, d)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (diag / np.abs(diag))[..., None, :]


@dataclass
class HaarSampler:
    seed: int
    d: int

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def draw(self, size: Optional[int] = None) -> np.ndarray:
        return haar_unitary(self.d, self._rng, size)


def haar_state(d: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    shape = (d,) if size is None else (size, d)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _check_dim(d: int):
    if d < 2 or d & (d - 1):
        raise ValueError(f"d must be a power of two >= 2, got {d}")


def z0_diag(d: int) -> np.ndarray:
    """Diagonal of Z on qubit 0 (little-endian) embedded in dimension d."""
    return 1.0 - 2.0 * (np.arange(d) & 1)


def purity(rho: np.ndarray) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.trace(rho @ rho)))


# -- Weingarten moments -------------------------------------------------------


def flip_operator(d: int) -> np.ndarray:
    """Swap of the two tensor factors of C^d (x) C^d, acting on ``i*d + j``."""
    if d > MAX_FLIP_DIM:
        raise ValueError(f"flip operator limited to d <= {MAX_FLIP_DIM}")
    f = np.zeros((d * d, d * d))
    i, j = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    f[(j * d + i).ravel(), (i * d + j).ravel()] = 1.0
    return f


def first_moment_closed_form(o: np.ndarray) -> np.ndarray:
    d = o.shape[0]
    return np.trace(o) / d * np.eye(d)


def second_moment_closed_form(o: np.ndarray, d: int) -> np.ndarray:
    f = flip_operator(d)
    tr_o = np.trace(o)
    tr_fo = np.trace(f @ o)
    a = (tr_o - tr_fo / d) / (d * d - 1)
    b = (tr_fo - tr_o / d) / (d * d - 1)
    return a * np.eye(d * d) + b * f


def _chunk_rngs(seed, n: int, tag: Iterable[int] = ()):
    root = np.random.SeedSequence([int(seed), *[int(t) for t in tag]])
    n_chunks = -(-n // CHUNK)
    for i, child in enumerate(root.spawn(n_chunks)):
        yield np.random.default_rng(child), min(CHUNK, n - i * CHUNK)


def weingarten_first_moment_check(d: int, o: np.ndarray, samples: int, seed: int = 0) -> float:
    """Max-norm deviation of the sample mean of ``U O U^dag`` from ``tr(O)/d I``."""
    o = np.asarray(o, dtype=complex)
    if o.shape != (d, d):
        raise ValueError(f"O must be {d}x{d}")
    acc = np.zeros((d, d), dtype=complex)
    for rng, m in _chunk_rngs(seed, samples, (d, 1)):
        u = haar_unitary(d, rng, m)
        acc += np.einsum("nij,jk,nlk->il", u, o, u.conj())
    return float(np.abs(acc / samples - first_moment_closed_form(o)).max())


def weingarten_second_moment_check(d: int, o: np.ndarray, samples: int, seed: int = 0) -> float:
    """Max-norm deviation of the sample mean of ``U^(x2) O U^dag(x2)`` from the I/F formula."""
    if d > MAX_FLIP_DIM:
        raise ValueError(f"second-moment check limited to d <= {MAX_FLIP_DIM}")
    o = np.asarray(o, dtype=complex)
    if o.shape != (d * d, d * d):
        raise ValueError(f"O must be {d * d}x{d * d}")
    acc = np.zeros((d * d, d * d), dtype=complex)
    for rng, m in _chunk_rngs(seed, samples, (d, 2)):
        u = haar_unitary(d, rng, m)
        uu = np.einsum("nij,nkl->nikjl", u, u).reshape(m, d * d, d * d)
        acc += np.einsum("nij,jk,nlk->il", uu, o, uu.conj())
    return float(np.abs(acc / samples - second_moment_closed_form(o, d)).max())


# -- variance estimators --------------------------------------------------------


@dataclass
class VarianceEstimate:
    mean: float
    variance: float
    stderr: float
    mean_stderr: float
    samples: int
    d: int
    tag: str

    @classmethod
    def from_samples(cls, g: np.ndarray, d: int, tag: str) -> "VarianceEstimate":
        g = np.asarray(g, dtype=float)
        n = g.size
        dev2 = (g - g.mean()) ** 2
        var = float(dev2.sum() / (n - 1))
        se = float(np.std(dev2, ddof=1) / math.sqrt(n))
        return cls(float(g.mean()), var, se, float(np.std(g, ddof=1) / math.sqrt(n)), n, d, tag)

    def z_score(self, analytic: float) -> float:
        if self.stderr == 0.0:
            return 0.0 if abs(self.variance - analytic) < 1e-15 else math.inf
        return (self.variance - analytic) / self.stderr


def _state_sampler(d: int, rho: Optional[np.ndarray]) -> Callable:
    """Returns f(rng, m) -> (m, d, d) input density matrices."""
    if rho is None:

        def draw(rng, m):
            v = haar_state(d, rng, m)
            return np.einsum("ni,nj->nij", v, v.conj())

        return draw
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (d, d):
        raise ValueError(f"rho must be {d}x{d}")
    return lambda rng, m: np.broadcast_to(rho, (m, d, d))


def _commutator_trace(rho_b: np.ndarray, obs_a: np.ndarray, p_diag: np.ndarray) -> np.ndarray:
    """Real ``i tr(rho_b [P, obs_a])`` for diagonal P, batched."""
    # tr(rho [P, O]) = sum_ij rho_ji (p_i - p_j) O_ij
    diff = p_diag[:, None] - p_diag[None, :]
    val = np.einsum("nji,ij,nij->n", rho_b, diff, obs_a)
    return np.real(1j * val)


def _rotated_z(u: np.ndarray, zd: np.ndarray) -> np.ndarray:
    # U^dag Z U for diagonal Z, batched
    return np.einsum("nki,k,nkj->nij", u.conj(), zd, u)


def _conjugate(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return u @ rho @ np.conj(np.swapaxes(u, -1, -2))


def empirical_var_beta(
    d: int, beta_max: float, samples: int, seed: int = 0, rho: Optional[np.ndarray] = None
) -> VarianceEstimate:
    """Variance of ``2 beta tr(U rho U^dag Z_0)`` with beta uniform on [-beta_max, beta_max]."""
    _check_dim(d)
    zd = z0_diag(d)
    draw_rho = _state_sampler(d, rho)
    out = []
    for rng, m in _chunk_rngs(seed, samples, (d, 11)):
        beta = rng.uniform(-beta_max, beta_max, size=m)
        u = haar_unitary(d, rng, m)
        r = _conjugate(u, draw_rho(rng, m))
        out.append(2.0 * beta * np.real(np.einsum("nii,i->n", r, zd)))
    return VarianceEstimate.from_samples(np.concatenate(out), d, "beta")


def _theta_samples(d, beta_max, samples, seed, rho, with_beta: bool, tag: int) -> np.ndarray:
    zd = z0_diag(d)
    draw_rho = _state_sampler(d, rho)
    out = []
    for rng, m in _chunk_rngs(seed, samples, (d, tag)):
        beta = rng.uniform(-beta_max, beta_max, size=m) if with_beta else np.ones(m)
        u_a = haar_unitary(d, rng, m)
        u_b = haar_unitary(d, rng, m)
        g = _commutator_trace(_conjugate(u_b, draw_rho(rng, m)), _rotated_z(u_a, zd), zd)
        out.append(beta**2 * g)
    return np.concatenate(out)


def empirical_var_theta(
    d: int, beta_max: float, samples: int, seed: int = 0, rho: Optional[np.ndarray] = None
) -> VarianceEstimate:
    """Variance of ``beta**2 i tr(U_B rho U_B^dag [P, U_A^dag Z U_A])``, P = Z_0."""
    _check_dim(d)
    return VarianceEstimate.from_samples(_theta_samples(d, beta_max, samples, seed, rho, True, 12), d, "theta")


def empirical_var_qvc(d: int, samples: int, seed: int = 0, rho: Optional[np.ndarray] = None) -> VarianceEstimate:
    """The same commutator estimator without the beta factor."""
    _check_dim(d)
    return VarianceEstimate.from_samples(_theta_samples(d, 0.0, samples, seed, rho, False, 13), d, "qvc")


def combined_qvc_resnet_var(
    d: int,
    samples: int,
    seed: int = 0,
    beta_max: Optional[float] = None,
    rho: Optional[np.ndarray] = None,
) -> VarianceEstimate:
    """Derivative of ``tr(V rho V^dag Z) + beta**2 tr(U V rho V^dag U^dag Z)`` w.r.t. an angle in V.

    ``V = V_A exp(-i theta P) V_B`` with V_A, V_B and U independent Haar;
    beta is uniform on [-beta_max, beta_max] (default ``sqrt(d)``).
    """
    _check_dim(d)
    if d > 256:
        raise ValueError("combined estimator limited to d <= 256")
    beta_max = math.sqrt(d) if beta_max is None else beta_max
    zd = z0_diag(d)
    draw_rho = _state_sampler(d, rho)
    out = []
    for rng, m in _chunk_rngs(seed, samples, (d, 14)):
        beta = rng.uniform(-beta_max, beta_max, size=m)
        v_a = haar_unitary(d, rng, m)
        v_b = haar_unitary(d, rng, m)
        u = haar_unitary(d, rng, m)
        obs = np.diag(zd)[None] + (beta**2)[:, None, None] * _rotated_z(u, zd)
        obs = np.conj(np.swapaxes(v_a, -1, -2)) @ obs @ v_a
        out.append(_commutator_trace(_conjugate(v_b, draw_rho(rng, m)), obs, zd))
    return VarianceEstimate.from_samples(np.concatenate(out), d, "combined")


# -- closed forms ---------------------------------------------------------------


def var_theta(d, beta_max, pur=1.0):
    """``(2 beta_max^4 / 5) d^3 / (d^2-1)^2 (tr rho^2 - 1/d)``."""
    d = np.asarray(d, dtype=float)
    return 2.0 * beta_max**4 / 5.0 * d**3 / (d * d - 1) ** 2 * (pur - 1.0 / d)


def var_theta_sqrt_rule(d, pur=1.0):
    d = np.asarray(d, dtype=float)
    return 0.4 * d**5 / (d**4 - 2 * d**2 + 1) * (pur - 1.0 / d)


def var_theta_fourth_root_rule(d, pur=1.0):
    d = np.asarray(d, dtype=float)
    return 0.4 * d**4 / (d**4 - 2 * d**2 + 1) * (pur - 1.0 / d)


def var_beta(d, beta_max, pur=1.0):
    d = np.asarray(d, dtype=float)
    return 4.0 / 3.0 * beta_max**2 * (d * pur - 1.0) / (d * d - 1)


def var_qvc_printed(d, pur=1.0):
    """QVC closed form as printed: ``2d / (d^2-1)^2 (tr rho^2 - 1/d)``."""
    d = np.asarray(d, dtype=float)
    return 2.0 * d / (d * d - 1) ** 2 * (pur - 1.0 / d)


def var_qvc(d, pur=1.0):
    """QVC variance for the same estimator: ``2d^3 / (d^2-1)^2 (tr rho^2 - 1/d)``."""
    d = np.asarray(d, dtype=float)
    return 2.0 * d**3 / (d * d - 1) ** 2 * (pur - 1.0 / d)


def var_combined_printed(d, pur=1.0):
    """Combined closed form as printed: ``(2/5)(d^5 + 5d) / (d^4 - 2d^2 + 1) (...)``."""
    d = np.asarray(d, dtype=float)
    return 0.4 * (d**5 + 5 * d) / (d**4 - 2 * d**2 + 1) * (pur - 1.0 / d)


def var_combined(d, pur=1.0):
    """Sum of the QVC and beta_max = sqrt(d) residual terms: ``(2/5)(d^5 + 5d^3) / (...)``."""
    d = np.asarray(d, dtype=float)
    return 0.4 * (d**5 + 5 * d**3) / (d**4 - 2 * d**2 + 1) * (pur - 1.0 / d)


def var_theta_half_prefactor(d, beta_max, pur=1.0):
    """Theta variance read with ``(1/(2 beta_max)) int beta^4``, i.e. half the printed prefactor."""
    return 0.5 * var_theta(d, beta_max, pur)


def analytic_curves(qubits: Iterable[int] = range(1, 13), pur: float = 1.0) -> List[dict]:
    """Closed-form variances over the qubit grid with beta_max = sqrt(d) unless noted."""
    rows = []
    for n in qubits:
        d = 2**n
        vals = {
            "qvc_printed": var_qvc_printed(d, pur),
            "qvc": var_qvc(d, pur),
            "theta": var_theta_sqrt_rule(d, pur),
            "theta_fourth_root": var_theta_fourth_root_rule(d, pur),
            "beta": var_beta(d, math.sqrt(d), pur),
            "combined_printed": var_combined_printed(d, pur),
            "combined": var_combined(d, pur),
        }
        for curve, v in vals.items():
            rows.append({"n_qubits": n, "d": d, "curve": curve, "analytic": float(v)})
    return rows


def empirical_scan(dims: Iterable[int], samples: int, seed: int = 0) -> List[dict]:
    """Monte-Carlo rows paired with their closed forms, beta_max = sqrt(d)."""
    rows = []
    for d in dims:
        _check_dim(d)
        n = d.bit_length() - 1
        bm = math.sqrt(d)
        est = {
            "theta": (empirical_var_theta(d, bm, samples, seed), var_theta(d, bm)),
            "theta_fourth_root": (empirical_var_theta(d, d**0.25, samples, seed + 1), var_theta(d, d**0.25)),
            "beta": (empirical_var_beta(d, bm, samples, seed), var_beta(d, bm)),
            "qvc": (empirical_var_qvc(d, samples, seed), var_qvc(d)),
            "qvc_printed": (None, var_qvc_printed(d)),
            "combined": (combined_qvc_resnet_var(d, samples, seed), var_combined(d)),
            "combined_printed": (None, var_combined_printed(d)),
        }
        # printed forms are scored against the same Monte-Carlo draws
        est["qvc_printed"] = (est["qvc"][0], est["qvc_printed"][1])
        est["combined_printed"] = (est["combined"][0], est["combined_printed"][1])
        for curve, (e, a) in est.items():
            rows.append(
                {
                    "n_qubits": n,
                    "d": d,
                    "curve": curve,
                    "analytic": float(a),
                    "empirical": e.variance,
                    "stderr": e.stderr,
                    "samples": e.samples,
                }
            )
    return rows


CSV_FIELDS = ("n_qubits", "d", "curve", "analytic", "empirical", "stderr", "samples")


def write_csv(rows: List[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, restval="")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def compare_prefactor_readings(d: int, beta_max: float, samples: int, seed: int = 0) -> Dict[str, float]:
    """z-scores of the two readings of the theta-variance prefactor against Monte Carlo."""
    est = empirical_var_theta(d, beta_max, samples, seed)
    return {
        "printed": est.z_score(float(var_theta(d, beta_max))),
        "half": est.z_score(float(var_theta_half_prefactor(d, beta_max))),
    }
