"""Eigen-domain precoding that pre-cancels space-time interference.

The transmitted signal is

    x = sum_n (<s, psi_n> / sigma_n) conj(phi_n),    <a, b> = sum a * conj(b)

With the storage convention of :mod:`hogmt.decompose`, the channel maps
``conj(phi_n)`` onto ``sigma_n psi_n``, so the noiseless received signal is
the orthogonal projection of ``s`` onto the span of the kept ``psi_n``. With
every triple kept on a full-rank channel this is ``s`` itself; the receiver
detects directly on ``r`` with no matrix processing.

For a fixed eigen system the map ``s -> x`` is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decompose import EigenSystem, gmt_decompose
from .kernels import apply_kernel

__all__ = [
    "SymbolGrid",
    "PrecodeReport",
    "inner",
    "precode",
    "precode_spatial",
    "residual_interference",
    "truncation_residual",
    "normalize_power",
]


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Inner product ``sum a * conj(b)`` over all entries."""
    return complex(np.vdot(b, a))


@dataclass(frozen=True)
class SymbolGrid:
    """Complex signal on a ``(U, T)`` grid (data, precoded, or received)."""

    values: np.ndarray
    power: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 2:
            raise ValueError(f"symbol grid must be 2-D (U, T), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("symbol grid has non-finite entries")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "power", float(np.mean(np.abs(v) ** 2)) if v.size else 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _grid(s) -> np.ndarray:
    return s.values if isinstance(s, SymbolGrid) else np.asarray(s, dtype=complex)


@dataclass(frozen=True)
class PrecodeReport:
    """Diagnostics of one precoding call.

    Attributes
    ----------
    coefficients : ndarray
        ``x_n = <s, psi_n> / sigma_n`` for the kept triples.
    kept_n : int
        Number of triples used.
    residual : float
        ``||s - H x|| / ||s||`` on the noiseless channel (0 when ``s == 0``).
    tx_power : float
        Mean per-symbol power of ``x``.
    """

    coefficients: np.ndarray
    kept_n: int
    residual: float
    tx_power: float


def truncation_residual(es: EigenSystem, s) -> float:
    """Noiseless ``||s - Hx||^2`` implied by ``es`` alone.

    ``Hx`` is the projection of ``s`` onto the kept ``psi_n``, so the residual
    is ``||s||^2 - sum_kept |<s, psi_n>|^2``. For a complete system this is
    the energy of ``s`` in the discarded ``psi``-subspace.
    """
    s = _grid(s)
    P = es.psi.reshape(len(es), -1)
    return _projection_error(P, s.ravel(), P.conj() @ s.ravel())


def _projection_error(P: np.ndarray, s: np.ndarray, proj: np.ndarray) -> float:
    # explicit residual vector; ||s||^2 - sum|proj|^2 cancels to ~1e-16 noise
    return float(np.sum(np.abs(s - proj @ P) ** 2))


def precode(es: EigenSystem, s, k: np.ndarray | None = None) -> tuple[SymbolGrid, PrecodeReport]:
    """Precode data ``s`` with the (already selected) eigen system ``es``.

    Parameters
    ----------
    es : EigenSystem
        Triples to use; every ``sigma_n`` must be positive.
    s : SymbolGrid or array_like
        Data symbols with shape ``es.row_shape``.
    k : ndarray, optional
        Channel kernel. When given the residual is measured by applying it;
        otherwise it is computed from the eigen system (exact when ``es``
        comes from ``k``).

    Returns
    -------
    x : SymbolGrid
    report : PrecodeReport
    """
    s = _grid(s)
    if s.shape != es.row_shape:
        raise ValueError(f"symbol grid shape {s.shape} does not match eigenfunctions {es.row_shape}")
    if len(es) == 0:
        raise ValueError("eigen system is empty")
    if np.any(es.sigma <= 0):
        raise ValueError("selected eigen system contains non-positive sigma")

    n = len(es)
    proj = es.psi.reshape(n, -1).conj() @ s.ravel()
    coeffs = proj / es.sigma
    x = (coeffs @ es.phi.reshape(n, -1).conj()).reshape(es.col_shape)

    s_norm2 = float(np.vdot(s, s).real)
    if k is not None:
        err2 = residual_interference(k, x, s)[0]
    else:
        err2 = _projection_error(es.psi.reshape(n, -1), s.ravel(), proj)
    residual = float(np.sqrt(err2 / s_norm2)) if s_norm2 > 0 else float(np.sqrt(err2))
    xg = SymbolGrid(x)
    return xg, PrecodeReport(coeffs, n, residual, xg.power)


def precode_spatial(k2: np.ndarray, s: np.ndarray, epsilon: float | None = None) -> np.ndarray:
    """Spatial-only precoding over a ``U x U`` kernel at one time instance.

    ``epsilon`` (relative to ``sigma_1``) drops weak modes; ``None`` keeps all
    modes with ``sigma_n > 0``.
    """
    k2 = np.asarray(k2)
    s = np.asarray(s, dtype=complex)
    if k2.ndim != 2 or k2.shape[1] != s.shape[0]:
        raise ValueError(f"kernel shape {k2.shape} incompatible with {s.shape[0]} users")
    es = gmt_decompose(k2)
    cut = 0.0 if epsilon is None else epsilon * es.sigma[0]
    es = es.take(np.flatnonzero(es.sigma > cut))
    if len(es) == 0:
        raise ValueError("no spatial modes above threshold")
    coeffs = (es.psi.conj() @ s) / es.sigma
    return coeffs @ es.phi.conj()


def residual_interference(k: np.ndarray, x, s) -> tuple[float, float]:
    """Return ``||s - Hx||^2`` and the same normalized by ``||s||^2``."""
    x, s = _grid(x), _grid(s)
    r = apply_kernel(k, x)
    err2 = float(np.sum(np.abs(s - r) ** 2))
    ref = float(np.sum(np.abs(s) ** 2))
    return err2, (err2 / ref if ref > 0 else float("inf") if err2 > 0 else 0.0)


def normalize_power(x, budget: float = 1.0) -> tuple[SymbolGrid, float]:
    """Scale ``x`` to mean per-symbol power ``budget``.

    Returns the scaled grid and the amplitude gain applied; a receiver undoes
    the scaling by dividing by that gain.

    >>> g = normalize_power(np.full((1, 4), 2.0 + 0j), 1.0)[1]
    >>> g
    0.5
    """
    v = _grid(x)
    p = float(np.mean(np.abs(v) ** 2))
    if not p > 0:
        raise ValueError("cannot normalize a zero-power signal")
    if not budget > 0:
        raise ValueError("power budget must be positive")
    gain = float(np.sqrt(budget / p))
    return SymbolGrid(v * gain), gain
