"""Second-order statistics of a random atomic-channel kernel.

Every statistic is available two ways: closed forms over the ensemble eigen
system ``(lam_n, psi_n, phi_n)`` and direct Monte-Carlo estimates over an
ensemble of kernels ``H[t, f, tau, nu]``.

Conventions
-----------
* Lags are cyclic. The autocorrelation of ``g`` is
  ``R_g(d) = sum_y conj(g(y - d)) g(y)``, so ``R_g(0) = ||g||^2``.
* Direct estimators average over realizations with ``1/N`` and take the
  magnitude after averaging. Their standard errors are ``std / sqrt(N)``
  (``1/N`` variance), per bin.
* Closed forms weight mode ``n`` by ``lam_n * scale_n^2``, which is the energy
  of the separable part of ``rho_n``. Exactly separable modes have
  ``scale_n = 1``.
* ``pairing`` picks which eigenfunction the LSF, scattering and path-gain
  closed forms put on the delay-Doppler axes. ``"printed"`` puts ``psi`` on
  ``(tau, nu)`` and ``phi`` on ``(t, f)``; this needs a square grid.
  ``"decomposition"`` keeps the axes of the decomposition itself (``psi``
  over ``(t, f)``, ``phi`` over ``(tau, nu)``). Only ``"decomposition"``
  matches ``E|H|^2`` for a generic process.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .decompose import EnsembleEigenSystem
from .kernels import atomic_kernel

__all__ = [
    "Pairing",
    "autocorrelation",
    "ccf_from_eigen",
    "ccf_direct",
    "lsf_from_eigen",
    "lsf_direct",
    "global_scattering",
    "tf_path_gain",
    "total_gain",
    "global_scattering_direct",
    "tf_path_gain_direct",
    "total_gain_direct",
    "mean_power",
    "separable_modes",
    "synthetic_ensemble",
    "StatsReport",
    "StationarityReport",
    "stationary_degenerate_check",
    "ccf_concentration",
]

Pairing = Literal["printed", "decomposition"]


def autocorrelation(g: np.ndarray) -> np.ndarray:
    """Cyclic autocorrelation ``R(d) = sum_y conj(g(y - d)) g(y)`` over all axes."""
    G = np.fft.fftn(g)
    return np.fft.ifftn(np.abs(G) ** 2)


def _weights(ees: EnsembleEigenSystem) -> np.ndarray:
    return np.asarray(ees.lam, dtype=float) * np.asarray(ees.scale, dtype=float) ** 2


def ccf_from_eigen(ees: EnsembleEigenSystem) -> np.ndarray:
    """``sum_n lam_n |R_psi_n(dt, df)| |R_phi_n(dtau, dnu)|``.

    The result has shape ``row_shape + col_shape`` and is indexed
    ``[dt, df, dtau, dnu]``.
    """
    w = _weights(ees)
    out = np.zeros(ees.row_shape + ees.col_shape)
    rd, cd = len(ees.row_shape), len(ees.col_shape)
    for n in range(len(ees)):
        if w[n] == 0:
            continue
        a = np.abs(autocorrelation(ees.psi[n]))
        b = np.abs(autocorrelation(ees.phi[n]))
        out += w[n] * a.reshape(a.shape + (1,) * cd) * b.reshape((1,) * rd + b.shape)
    return out


def _stream_moments(items: Iterable[np.ndarray]):
    n = 0
    s1 = s2 = None
    for x in items:
        if s1 is None:
            s1 = np.zeros_like(x)
            s2 = np.zeros(x.shape)
        s1 += x
        s2 += np.abs(x) ** 2
        n += 1
    if n == 0:
        raise ValueError("empty ensemble")
    mean = s1 / n
    var = np.maximum(s2 / n - np.abs(mean) ** 2, 0.0)
    return mean, np.sqrt(var / n), n


def ccf_direct(ensemble, return_se: bool = False):
    """Empirical CCF ``|mean_i R_{H_i}|`` of an ensemble of kernels.

    Parameters
    ----------
    ensemble : array_like or iterable of ndarray
        Realizations of ``H[t, f, tau, nu]`` (any number of axes works).
    return_se : bool
        Also return the per-bin standard error of the complex mean.
    """
    mean, se, _ = _stream_moments(autocorrelation(np.asarray(h)) for h in ensemble)
    return (np.abs(mean), se) if return_se else np.abs(mean)


def _check_pairing(pairing: str) -> None:
    if pairing not in ("printed", "decomposition"):
        raise ValueError(f"unknown pairing {pairing!r}")


def _tf_dd(ees: EnsembleEigenSystem, pairing: Pairing):
    """Return (functions on (t, f), functions on (tau, nu)) for the pairing."""
    _check_pairing(pairing)
    if pairing == "decomposition":
        return ees.psi, ees.phi
    if ees.row_shape != ees.col_shape:
        raise ValueError(
            "printed pairing puts psi on (tau, nu) and phi on (t, f) and needs "
            f"equal row/column shapes, got {ees.row_shape} and {ees.col_shape}"
        )
    return ees.phi, ees.psi


def lsf_from_eigen(ees: EnsembleEigenSystem, pairing: Pairing = "printed") -> np.ndarray:
    """``LSF[t, f, tau, nu] = sum_n lam_n |a_n(t, f)|^2 |b_n(tau, nu)|^2``.

    ``a_n`` and ``b_n`` follow ``pairing`` (see module docstring).
    """
    a, b = _tf_dd(ees, pairing)
    w = _weights(ees)
    pa = np.abs(a.reshape(len(ees), -1)) ** 2
    pb = np.abs(b.reshape(len(ees), -1)) ** 2
    out = (pa.T * w) @ pb
    return out.reshape(a.shape[1:] + b.shape[1:])


def global_scattering(ees: EnsembleEigenSystem, pairing: Pairing = "printed") -> np.ndarray:
    """Global scattering function over ``(tau, nu)``."""
    _, b = _tf_dd(ees, pairing)
    return np.tensordot(_weights(ees), np.abs(b) ** 2, axes=1)


def tf_path_gain(ees: EnsembleEigenSystem, pairing: Pairing = "printed") -> np.ndarray:
    """Time-frequency path gain over ``(t, f)``."""
    a, _ = _tf_dd(ees, pairing)
    return np.tensordot(_weights(ees), np.abs(a) ** 2, axes=1)


def total_gain(ees: EnsembleEigenSystem) -> float:
    """Total gain ``sum_n lam_n`` (separable part)."""
    return float(np.sum(_weights(ees)))


def mean_power(ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo ``E|X|^2`` per bin with its standard error.

    Works for any ensemble: atomic kernels, spreading functions or
    transfer functions.
    """
    mean, se, _ = _stream_moments(np.abs(np.asarray(x)) ** 2 for x in ensemble)
    return mean.real, se


def lsf_direct(ensemble, return_se: bool = False):
    """Direct LSF estimate ``mean_i |H_i(t, f, tau, nu)|^2``."""
    mean, se = mean_power(ensemble)
    return (mean, se) if return_se else mean


def _marginal_direct(ensemble, axes, return_se):
    mean, se, _ = _stream_moments(
        np.sum(np.abs(np.asarray(h)) ** 2, axis=axes) for h in ensemble
    )
    return (mean.real, se) if return_se else mean.real


def global_scattering_direct(ensemble, return_se: bool = False):
    """``sum_{t, f} mean_i |H_i|^2`` over ``(tau, nu)``."""
    return _marginal_direct(ensemble, (0, 1), return_se)


def tf_path_gain_direct(ensemble, return_se: bool = False):
    """``sum_{tau, nu} mean_i |H_i|^2`` over ``(t, f)``."""
    return _marginal_direct(ensemble, (2, 3), return_se)


def total_gain_direct(ensemble, return_se: bool = False):
    """``mean_i ||H_i||^2``."""
    mean, se, _ = _stream_moments(
        np.array(np.sum(np.abs(np.asarray(h)) ** 2)) for h in ensemble
    )
    return (float(mean.real), float(se)) if return_se else float(mean.real)


def separable_modes(
    row_shape: tuple[int, ...],
    col_shape: tuple[int, ...],
    n_modes: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm, real, non-negative eigenfunctions with disjoint supports.

    Mode ``n`` occupies the ``n``-th contiguous block of the flattened grid
    with a half-sine profile. Disjoint supports make the modes orthogonal
    and, being non-negative, every autocorrelation is real and non-negative.
    """

    def build(shape):
        size = int(np.prod(shape))
        if size < n_modes:
            raise ValueError(f"grid {shape} too small for {n_modes} modes")
        bounds = np.linspace(0, size, n_modes + 1).astype(int)
        out = np.zeros((n_modes, size))
        for n in range(n_modes):
            lo, hi = bounds[n], bounds[n + 1]
            x = (np.arange(hi - lo) + 0.5) / (hi - lo)
            out[n, lo:hi] = np.sin(np.pi * x)
        out /= np.linalg.norm(out, axis=1, keepdims=True)
        return out.reshape((n_modes,) + tuple(shape)).astype(complex)

    return build(row_shape), build(col_shape)


def synthetic_ensemble(
    lam: np.ndarray,
    psi: np.ndarray,
    phi: np.ndarray,
    n_realizations: int,
    seed=None,
) -> np.ndarray:
    """Draw ``H_i = sum_n c_{i,n} psi_n (x) phi_n`` with ``c_{i,n} ~ N(0, lam_n)``.

    Coefficients are real Gaussian and independent across modes.
    """
    lam = np.asarray(lam, dtype=float)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((n_realizations, lam.size)) * np.sqrt(lam)
    rho = np.einsum("na,nb->nab", psi.reshape(lam.size, -1), phi.reshape(lam.size, -1))
    H = c @ rho.reshape(lam.size, -1)
    return H.reshape((n_realizations,) + psi.shape[1:] + phi.shape[1:])


@dataclass(frozen=True)
class StatsReport:
    """The five statistics of a random kernel.

    Attributes
    ----------
    ccf : ndarray
        Magnitudes over ``(dt, df, dtau, dnu)``.
    lsf : ndarray
        Over ``(t, f, tau, nu)``.
    global_scattering : ndarray
        Over ``(tau, nu)``.
    tf_path_gain : ndarray
        Over ``(t, f)``.
    total_gain : float
    """

    ccf: np.ndarray
    lsf: np.ndarray
    global_scattering: np.ndarray
    tf_path_gain: np.ndarray
    total_gain: float

    @classmethod
    def from_eigen(cls, ees: EnsembleEigenSystem, pairing: Pairing = "printed") -> "StatsReport":
        return cls(
            ccf_from_eigen(ees),
            lsf_from_eigen(ees, pairing),
            global_scattering(ees, pairing),
            tf_path_gain(ees, pairing),
            total_gain(ees),
        )

    @classmethod
    def from_ensemble(cls, ensemble: np.ndarray) -> "StatsReport":
        ensemble = np.asarray(ensemble)
        lsf = lsf_direct(ensemble)
        return cls(
            ccf_direct(ensemble),
            lsf,
            lsf.sum(axis=(0, 1)),
            lsf.sum(axis=(2, 3)),
            float(lsf.sum()),
        )

    def consistency(self) -> dict[str, float]:
        """Relative deviations of the marginalization identities."""
        ref = max(self.total_gain, np.finfo(float).tiny)
        return {
            "lsf_to_scattering": float(np.max(np.abs(self.lsf.sum(axis=(0, 1)) - self.global_scattering)) / ref),
            "lsf_to_path_gain": float(np.max(np.abs(self.lsf.sum(axis=(2, 3)) - self.tf_path_gain)) / ref),
            "scattering_total": abs(float(self.global_scattering.sum()) - self.total_gain) / ref,
            "path_gain_total": abs(float(self.tf_path_gain.sum()) - self.total_gain) / ref,
        }


@dataclass(frozen=True)
class StationarityReport:
    """CCF concentration on the zero delay-Doppler lag.

    ``off_support_fraction`` is the share of CCF energy ``sum |R|^2`` outside
    the bins ``(dtau, dnu) = (0, 0)``.
    """

    off_support_fraction: float
    on_support_energy: float
    total_energy: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.off_support_fraction < self.bound


def stationary_degenerate_check(
    transfer_ensemble,
    prototype_width: float = np.inf,
    bound: float = 0.1,
) -> StationarityReport:
    """Test whether a channel ensemble behaves as WSSUS.

    For a WSSUS channel, atoms at different delay-Doppler bins are
    uncorrelated, so the CCF lives on ``(dtau, dnu) = (0, 0)`` for every
    ``(dt, df)``. The check measures how much CCF energy lies elsewhere.

    Parameters
    ----------
    transfer_ensemble : iterable of ndarray
        Realizations of the TF transfer function ``L[t, f]``.
    prototype_width : float
        Width of the prototype window. The flat default gives the finest
        Doppler resolution and so the least leakage between Doppler bins.
    bound : float
        Pass threshold on the off-support fraction.
    """
    ccf = ccf_direct(atomic_kernel(L, prototype_width) for L in transfer_ensemble)
    return ccf_concentration(ccf, bound)


def ccf_concentration(ccf: np.ndarray, bound: float = 0.1) -> StationarityReport:
    """Share of CCF energy off the ``(dtau, dnu) = (0, 0)`` bins."""
    energy = np.abs(ccf) ** 2
    total = float(energy.sum())
    on = float(energy[:, :, 0, 0].sum())
    frac = 1.0 - on / total if total > 0 else 0.0
    return StationarityReport(max(frac, 0.0), on, total, bound)
