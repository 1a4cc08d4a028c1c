"""Batched branch-row simulator with adjoint differentiation.

The joint data+ancilla state is held as an array of shape
``(batch, rows, 2**n_data)``. The row index enumerates ancilla bit strings
(ancilla of block ``l`` is bit ``l`` of the row index), so with the flat
little-endian layout ancilla ``l`` is qubit ``n_data + l``. Each residual
block starts with its ancilla in ``|0>``, which lets the array grow from one
row to ``2**L`` rows instead of carrying empty rows from the start.

A block with amplitudes ``c = cos(theta/2)``, ``s = sin(theta/2)`` maps rows
``X`` to ``[c*c*X + s*s*W X, c*s*(W X - X)]``: RY(theta) on the fresh
ancilla, W on the ancilla-1 rows, then RY(-theta).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .ansatz import ring_pairs
from .statekernel import ry_matrix, rz_matrix

_HALF_MINUS_I_Z = np.array([[-0.5j, 0], [0, 0.5j]])
_HALF_MINUS_I_Y = np.array([[0, -0.5], [0.5, 0]], dtype=np.complex128)


@lru_cache(maxsize=32)
def ring_permutation(n_data: int) -> tuple:
    """Gather index of the CNOT ring and its inverse."""
    dim = 2**n_data
    idx = np.arange(dim)
    total = np.arange(dim)
    for c, t in ring_pairs(n_data):
        src = np.where((idx >> c) & 1, idx ^ (1 << t), idx)
        total = total[src]
    inv = np.empty_like(total)
    inv[total] = np.arange(dim)
    total.setflags(write=False)
    inv.setflags(write=False)
    return total, inv


@lru_cache(maxsize=32)
def z_sign_matrix(n_data: int, n_out: int) -> np.ndarray:
    idx = np.arange(2**n_data)[:, None]
    q = np.arange(n_out)[None, :]
    m = 1.0 - 2.0 * ((idx >> q) & 1)
    m.setflags(write=False)
    return m


def _kron_all(mats) -> np.ndarray:
    # little-endian: the first matrix acts on the lowest bit
    out = np.eye(1, dtype=np.complex128)
    for m in mats:
        out = np.kron(m, out)
    return out


@lru_cache(maxsize=64)
def _reduce_subscripts(k: int, j: int) -> str:
    """einsum string reducing a (batch, 2**k, 2**k) cross matrix to qubit j of the group."""
    letters = "cdefghijklmnopqrstuvwxyz"
    rows = list(letters[:k])
    cols = list(letters[:k])
    pos = k - 1 - j  # axis of qubit j in the big-endian reshape
    rows[pos], cols[pos] = "A", "B"
    return "b" + "".join(rows) + "".join(cols) + "->bAB"


@dataclass
class CompiledLayer:
    """One ZYZ layer fused into two Kronecker factors plus the ring permutation.

    The single-qubit gates all act on different qubits, so they commute and
    the low ``k`` qubits and the high ``n - k`` qubits can each be applied as
    one dense matrix.
    """

    mats: np.ndarray  # (n, 2, 2) fused RZ(omega) RY(phi) RZ(theta)
    d_mats: np.ndarray  # (n, 3, 2, 2) derivatives w.r.t. (theta, phi, omega)
    k: int
    u_lo: np.ndarray
    u_hi: np.ndarray

    def __post_init__(self):
        self._u_lo_t = np.ascontiguousarray(self.u_lo.T)
        self._u_lo_c = np.ascontiguousarray(self.u_lo.conj())
        self._u_hi_h = np.ascontiguousarray(self.u_hi.conj().T)

    @classmethod
    def from_params(cls, params: np.ndarray) -> "CompiledLayer":
        n = params.shape[0]
        mats = np.empty((n, 2, 2), dtype=np.complex128)
        d_mats = np.empty((n, 3, 2, 2), dtype=np.complex128)
        for j, (theta, phi, omega) in enumerate(params):
            rz_t, ry_p, rz_o = rz_matrix(theta), ry_matrix(phi), rz_matrix(omega)
            u = rz_o @ ry_p @ rz_t
            mats[j] = u
            d_mats[j, 0] = u @ _HALF_MINUS_I_Z
            d_mats[j, 1] = rz_o @ ry_p @ _HALF_MINUS_I_Y @ rz_t
            d_mats[j, 2] = _HALF_MINUS_I_Z @ u
        k = (n + 1) // 2
        return cls(mats, d_mats, k, _kron_all(mats[:k]), _kron_all(mats[k:]))

    @property
    def n(self) -> int:
        return self.mats.shape[0]

    def _grouped(self, psi: np.ndarray) -> np.ndarray:
        psi = np.ascontiguousarray(psi)
        return psi.reshape(psi.shape[:-1] + (2 ** (self.n - self.k), 2**self.k))

    def rotate(self, psi: np.ndarray) -> np.ndarray:
        a = self._grouped(psi)
        a = np.matmul(a, self._u_lo_t)
        a = np.matmul(self.u_hi, a)
        return a.reshape(psi.shape)

    def unrotate(self, psi: np.ndarray) -> np.ndarray:
        a = self._grouped(psi)
        a = np.matmul(self._u_hi_h, a)
        a = np.matmul(a, self._u_lo_c)
        return a.reshape(psi.shape)

    def qubit_cross(self, lam: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """R[b, j, a, c] = sum over all but qubit j of conj(lam[..a..]) psi[..c..]."""
        b = lam.shape[0]
        n, k = self.n, self.k
        lo_dim, hi_dim = 2**k, 2 ** (n - k)
        lv = lam.reshape(b, -1, hi_dim, lo_dim)
        pv = psi.reshape(b, -1, hi_dim, lo_dim)
        c_lo = np.matmul(lv.reshape(b, -1, lo_dim).conj().transpose(0, 2, 1), pv.reshape(b, -1, lo_dim))
        c_hi = np.matmul(lv.conj(), pv.transpose(0, 1, 3, 2)).sum(axis=1)
        out = np.empty((b, n, 2, 2), dtype=np.complex128)
        c_lo = c_lo.reshape((b,) + (2,) * (2 * k))
        for j in range(k):
            out[:, j] = np.einsum(_reduce_subscripts(k, j), c_lo)
        if n > k:
            c_hi = c_hi.reshape((b,) + (2,) * (2 * (n - k)))
            for j in range(k, n):
                out[:, j] = np.einsum(_reduce_subscripts(n - k, j - k), c_hi)
        return out


def apply_layer(psi: np.ndarray, layer: CompiledLayer) -> np.ndarray:
    perm, _ = ring_permutation(layer.n)
    return np.take(layer.rotate(psi), perm, axis=-1)


def unapply_layer(psi: np.ndarray, lam: np.ndarray, layer: CompiledLayer):
    """Step back through a layer; returns (psi_before, lam_before, grads (batch, n, 3))."""
    _, inv = ring_permutation(layer.n)
    psi = np.take(psi, inv, axis=-1)
    lam = np.take(lam, inv, axis=-1)
    # With U_j acting last on its own qubit, d/dangle <lam|U psi_in> reduces to
    # the qubit's 2x2 cross matrix at the rotation output times conj(U_j).
    cross = layer.qubit_cross(lam, psi)
    g = np.matmul(cross, layer.mats.conj()[None])
    grads = 2.0 * np.einsum("jkac,bjac->bjk", layer.d_mats, g).real
    return layer.unrotate(psi), layer.unrotate(lam), grads


def ancilla_amplitudes(beta: np.ndarray):
    """(theta, c, s) with theta = 2 arctan|beta|."""
    b = np.abs(np.asarray(beta, dtype=float))
    theta = 2.0 * np.arctan(b)
    return theta, np.cos(theta / 2), np.sin(theta / 2)


@dataclass
class CompiledModel:
    n_data: int
    backbone: list
    blocks: list
    theta: np.ndarray
    c: np.ndarray
    s: np.ndarray
    scale: float

    @classmethod
    def compile(cls, n_data: int, backbone: np.ndarray, w: np.ndarray, beta: np.ndarray):
        backbone = np.asarray(backbone, dtype=float).reshape(-1, n_data, 3)
        w = np.asarray(w, dtype=float).reshape(-1, n_data, 3)
        beta = np.asarray(beta, dtype=float)
        theta, c, s = ancilla_amplitudes(beta)
        return cls(
            n_data=n_data,
            backbone=[CompiledLayer.from_params(p) for p in backbone],
            blocks=[CompiledLayer.from_params(p) for p in w],
            theta=theta,
            c=c,
            s=s,
            scale=float(np.prod(1.0 + beta**2)),
        )


def run(cm: CompiledModel, psi0: np.ndarray) -> np.ndarray:
    """Evolve a batch of encoded data states (batch, 2**n) to (batch, 2**L, 2**n)."""
    psi = np.asarray(psi0, dtype=np.complex128)[:, None, :]
    for layer in cm.backbone:
        psi = apply_layer(psi, layer)
    for layer, c, s in zip(cm.blocks, cm.c, cm.s):
        wx = apply_layer(psi, layer)
        out0 = (c * c) * psi + (s * s) * wx
        out1 = (c * s) * (wx - psi)
        psi = np.concatenate([out0, out1], axis=1)
    return psi


def z_expectations(psi: np.ndarray, n_out: int) -> np.ndarray:
    """<Z_i> for i < n_out with the ancilla rows traced out; shape (batch, n_out)."""
    probs = (psi.real**2 + psi.imag**2).sum(axis=1)
    return probs @ z_sign_matrix(int(psi.shape[-1]).bit_length() - 1, n_out)


@dataclass
class AdjointResult:
    d_backbone: np.ndarray  # (batch, D, n, 3)
    d_w: np.ndarray  # (batch, L, n, 3)
    d_theta: np.ndarray  # (batch, L)
    d_input: np.ndarray  # (batch, 2**n) real-amplitude gradient


def adjoint(cm: CompiledModel, psi_final: np.ndarray, weights: np.ndarray) -> AdjointResult:
    """Gradients of ``sum_i weights[b, i] <Z_i>`` for every sample ``b``.

    One backward sweep un-applies each gate to the final state while carrying
    the co-state ``lam = O psi``. Returned values differentiate the raw
    expectation, without the residual scale factor.
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    n = cm.n_data
    batch = psi_final.shape[0]
    diag = weights @ z_sign_matrix(n, weights.shape[1]).T  # (batch, 2**n)
    psi = psi_final
    lam = psi * diag[:, None, :]

    n_blocks = len(cm.blocks)
    d_w = np.zeros((batch, n_blocks, n, 3))
    d_theta = np.zeros((batch, n_blocks))
    for l in reversed(range(n_blocks)):
        c, s = cm.c[l], cm.s[l]
        rows = psi.shape[1] // 2
        # Undo RY(-theta) on the ancilla: [[c, s], [-s, c]] -> inverse [[c, -s], [s, c]].
        o0, o1 = psi[:, :rows], psi[:, rows:]
        l0, l1 = lam[:, :rows], lam[:, rows:]
        a0 = c * o0 - s * o1
        a1 = s * o0 + c * o1
        # d RY(-theta)/d theta = 0.5 * [[-s, c], [-c, -s]]
        g_uncompute = _rdot(l0, -0.5 * s * a0 + 0.5 * c * a1) + _rdot(l1, -0.5 * c * a0 - 0.5 * s * a1)
        m0 = c * l0 - s * l1
        m1 = s * l0 + c * l1
        # W acted on the ancilla-1 rows only.
        a1, m1, gw = unapply_layer(a1, m1, cm.blocks[l])
        d_w[:, l] = gw
        # Preparation X -> (c X, s X); derivative (-s/2 X, c/2 X).
        x = c * a0 + s * a1
        g_prep = _rdot(m0, -0.5 * s * x) + _rdot(m1, 0.5 * c * x)
        d_theta[:, l] = g_uncompute + g_prep
        psi = x
        lam = c * m0 + s * m1

    d_backbone = np.zeros((batch, len(cm.backbone), n, 3))
    for k in reversed(range(len(cm.backbone))):
        psi, lam, gk = unapply_layer(psi, lam, cm.backbone[k])
        d_backbone[:, k] = gk
    d_input = 2.0 * lam[:, 0, :].real
    return AdjointResult(d_backbone, d_w, d_theta, d_input)


def _rdot(lam: np.ndarray, dpsi: np.ndarray) -> np.ndarray:
    """Per-sample 2 Re <lam|dpsi>."""
    b = lam.shape[0]
    return 2.0 * np.einsum("bi,bi->b", lam.reshape(b, -1).conj(), dpsi.reshape(b, -1)).real


def chunked(n: int, size: Optional[int]):
    size = n if not size else size
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))
