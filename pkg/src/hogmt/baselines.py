"""Comparison arms: receiver zero-forcing and a THP-based DPC surrogate.

Both arms transmit against the same kernel ``k[u, t, u', t']`` as the eigen
precoder.

``zf``
    Symbols are sent unprecoded. A joint receiver applies the
    (pseudo-)inverse of the flattened kernel.

``thp_zf``
    At every time instance the lag-0 spatial block ``A_t = k[:, t, :, t]``
    is factored as ``A_t = L_t Q_t``, with ``L_t`` lower triangular. The
    transmitter sends ``x_t = Q_t^H v_t``. Here ``v_t`` comes from successive
    pre-subtraction of the interference of earlier users, reduced modulo the
    constellation lattice. Dirty-paper coding has no symbol-level algorithm,
    so this Tomlinson-Harashima scheme stands in for it.

    Temporal interference (lags >= 1) is left to a receiver equalizer. It
    maps ``r`` to ``D K_eff^{-1} r`` with ``K_eff = K blockdiag(Q_t^H)`` and
    ``D`` the block diagonal of ``L_t``. That leaves each user with
    ``L_t[u, u] (s_u + lattice point) + noise``.

The LQ factors are rotated so that ``diag(L_t)`` carries the phases of
``diag(A_t)``. A diagonal ``A_t``, including the single-user case, then
gives ``Q_t = I``. Modulo is applied only to users with something to
pre-subtract, so with one user the arm reduces exactly to ``zf``.
"""

from __future__ import annotations

import warnings

import numpy as np

from .kernels import apply_kernel, kernel_matrix
from .modem import Constellation, LinkResult, awgn, ber_count, demodulate, modulate

__all__ = [
    "ZFReceiver",
    "THPSurrogate",
    "lq_positive",
    "zf_receiver_baseline",
    "thp_dpc_baseline",
    "COND_WARN",
]

COND_WARN = 1e12


class ZFReceiver:
    """Joint zero-forcing equalizer for one kernel realization.

    Parameters
    ----------
    k : ndarray
        Kernel of shape ``(U, T, U, T)``.
    sigma : ndarray, optional
        Singular values of ``k`` if already known (saves one SVD).
    """

    def __init__(self, k: np.ndarray, sigma: np.ndarray | None = None):
        self.shape = k.shape[:2]
        K = kernel_matrix(k)
        self.cond = _cond(K, sigma)
        if self.cond > COND_WARN:
            warnings.warn(
                f"kernel condition number {self.cond:.3g} exceeds {COND_WARN:.0e}; "
                "using the pseudo-inverse",
                RuntimeWarning,
                stacklevel=2,
            )
            self.W = np.linalg.pinv(K)
        else:
            self.W = np.linalg.inv(K)

    def transmit(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(s, dtype=complex)

    def equalize(self, r: np.ndarray) -> np.ndarray:
        return (self.W @ np.asarray(r).ravel()).reshape(self.shape)


def _cond(K: np.ndarray, sigma: np.ndarray | None) -> float:
    sv = np.linalg.svd(K, compute_uv=False) if sigma is None else np.asarray(sigma)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")


def lq_positive(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A = L Q`` with ``L`` lower triangular and ``Q`` unitary.

    ``diag(L)`` takes the phase of ``diag(A)`` (phase 1 where that entry is
    zero) and the magnitude of the positive-diagonal LQ factor.
    """
    Qh, R = np.linalg.qr(np.conj(A.T))
    L, Q = np.conj(R.T), np.conj(Qh.T)
    d = np.diag(L)
    # normalize to positive diagonal first
    ph = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1), 1.0)
    L, Q = L * np.conj(ph)[None, :], Q * ph[:, None]
    a = np.diag(A)
    target = np.where(np.abs(a) > 0, a / np.where(np.abs(a) > 0, np.abs(a), 1), 1.0)
    return L * target[None, :], Q * np.conj(target)[:, None]


def _mod(z: np.ndarray, period: float) -> np.ndarray:
    # fundamental region [-period/2, period/2) on each axis
    re = z.real - period * np.floor(z.real / period + 0.5)
    im = z.imag - period * np.floor(z.imag / period + 0.5)
    return re + 1j * im


class THPSurrogate:
    """Spatial THP per time instance followed by temporal ZF at the receiver.

    ``sigma`` (singular values of ``k``) may be passed to skip an SVD;
    ``K_eff`` differs from ``K`` by a unitary factor and shares them.
    """

    def __init__(self, k: np.ndarray, constellation: Constellation, sigma: np.ndarray | None = None):
        U, T = k.shape[:2]
        self.shape = (U, T)
        self.c = constellation
        self.period = constellation.modulo_period
        self.L = np.empty((T, U, U), dtype=complex)
        self.Q = np.empty((T, U, U), dtype=complex)
        for t in range(T):
            A = k[:, t, :, t]
            if not np.all(np.isfinite(A)):
                raise np.linalg.LinAlgError(f"non-finite spatial block at t={t}")
            self.L[t], self.Q[t] = lq_positive(A)
        diag = np.diagonal(self.L, axis1=1, axis2=2)  # (T, U)
        if np.any(diag == 0):
            bad = sorted(set(np.nonzero(diag == 0)[0].tolist()))
            raise np.linalg.LinAlgError(f"singular spatial block at t={bad}")
        self.diag = diag
        strict = np.tril(self.L, -1)
        self.active = np.any(strict != 0, axis=2)  # (T, U) users needing modulo
        # K_eff[u, t, u', t'] = sum_j k[u, t, j, t'] conj(Q[t', u', j])
        k_eff = np.einsum("atjs,suj->atus", k, np.conj(self.Q))
        K_eff = kernel_matrix(k_eff)
        self.cond = _cond(K_eff, sigma)
        Kinv = np.linalg.pinv(K_eff) if self.cond > COND_WARN else np.linalg.inv(K_eff)
        # D K_eff^{-1}: rows of time t hit by L_t
        D = np.zeros((U, T, U, T), dtype=complex)
        for t in range(T):
            D[:, t, :, t] = self.L[t]
        self.W = kernel_matrix(D) @ Kinv

    def transmit(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        U, T = self.shape
        v = np.empty((U, T), dtype=complex)
        for u in range(U):
            interf = np.einsum("tj,jt->t", self.L[:, u, :u], v[:u]) / self.diag[:, u]
            z = s[u] - interf
            v[u] = np.where(self.active[:, u], _mod(z, self.period), z)
        return np.einsum("tju,jt->ut", np.conj(self.Q), v)

    def equalize(self, r: np.ndarray) -> np.ndarray:
        U, T = self.shape
        y = (self.W @ np.asarray(r).ravel()).reshape(U, T)
        z = y / self.diag.T
        return np.where(self.active.T, _mod(z, self.period), z)


def _run_arm(arm, k, bits, c, snr_db, seed, method):
    s = modulate(bits, c, k.shape[:2])
    r = awgn(apply_kernel(k, arm.transmit(s)), snr_db, 1.0, seed)
    errors, total, _ = ber_count(bits, demodulate(arm.equalize(r), c))
    return LinkResult(float(snr_db), total, errors, method, None, seed if isinstance(seed, int) else None)


def zf_receiver_baseline(k, bits, c: Constellation, snr_db: float, seed=None) -> LinkResult:
    """Unprecoded transmission with joint ZF equalization at the receiver."""
    return _run_arm(ZFReceiver(k), k, bits, c, snr_db, seed, "zf")


def thp_dpc_baseline(k, bits, c: Constellation, snr_db: float, seed=None) -> LinkResult:
    """THP spatial pre-cancellation plus receiver-side temporal ZF."""
    return _run_arm(THPSurrogate(k, c), k, bits, c, snr_db, seed, "thp_zf")
