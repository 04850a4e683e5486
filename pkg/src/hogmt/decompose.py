"""Generalized Mercer decomposition of 2-D and 4-D kernels.

A kernel ``K`` with row index group ``zeta`` and column index group ``gamma``
is written as ``K(zeta; gamma) = sum_n sigma_n psi_n(zeta) phi_n(gamma)``
with ``{psi_n}`` and ``{phi_n}`` each orthonormal. For a deterministic kernel
this is the SVD of the flattened matrix; ``phi_n`` is stored as the
entry-wise conjugate of the right singular vector so that both the expansion
above and the duality ``sum_gamma K(zeta; gamma) conj(phi_n(gamma)) =
sigma_n psi_n(zeta)`` hold literally with the stored arrays.

Eigenfunctions are phase-canonicalized: the largest-magnitude entry of every
``psi_n`` is real and positive (first occurrence on ties).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np

__all__ = [
    "FlatteningMap",
    "EigenSystem",
    "EnsembleEigenSystem",
    "EmptySelectionError",
    "gmt_decompose",
    "hogmt_decompose",
    "select_eigen",
    "reconstruct",
    "verify_duality",
    "ensemble_klt",
]


class EmptySelectionError(ValueError):
    """Raised when an eigen-selection threshold keeps no triples."""


@dataclass(frozen=True)
class FlatteningMap:
    """Invertible map between a ``(u, t)`` pair and a flat index ``m``.

    ``user-major`` uses ``m = u * T + t``; ``time-major`` uses ``m = t * U + u``.
    """

    U: int
    T: int
    order: Literal["user-major", "time-major"] = "user-major"

    def __post_init__(self):
        if self.U < 1 or self.T < 1:
            raise ValueError("U and T must be positive")
        if self.order not in ("user-major", "time-major"):
            raise ValueError(f"unknown flattening order {self.order!r}")

    @property
    def size(self) -> int:
        return self.U * self.T

    def flatten(self, u: int, t: int) -> int:
        if not (0 <= u < self.U and 0 <= t < self.T):
            raise IndexError(f"(u, t)=({u}, {t}) outside {self.U}x{self.T} grid")
        return u * self.T + t if self.order == "user-major" else t * self.U + u

    def unflatten(self, m: int) -> tuple[int, int]:
        if not 0 <= m < self.size:
            raise IndexError(f"flat index {m} outside [0, {self.size})")
        if self.order == "user-major":
            return divmod(m, self.T)
        t, u = divmod(m, self.U)
        return u, t

    def grid_to_vector(self, a: np.ndarray) -> np.ndarray:
        """Flatten trailing ``(U, T)`` axes of ``a``."""
        a = np.asarray(a)
        lead = a.shape[:-2]
        if self.order == "time-major":
            a = np.swapaxes(a, -1, -2)
        return a.reshape(*lead, self.size)

    def vector_to_grid(self, v: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`grid_to_vector` on the trailing axis."""
        v = np.asarray(v)
        lead = v.shape[:-1]
        if self.order == "user-major":
            return v.reshape(*lead, self.U, self.T)
        return np.swapaxes(v.reshape(*lead, self.T, self.U), -1, -2)

    def kernel_to_matrix(self, k: np.ndarray) -> np.ndarray:
        U, T = self.U, self.T
        if k.shape != (U, T, U, T):
            raise ValueError(f"kernel shape {k.shape} does not match map ({U}, {T})")
        if self.order == "time-major":
            k = k.transpose(1, 0, 3, 2)
        return k.reshape(self.size, self.size)


@dataclass(frozen=True)
class EigenSystem:
    """Ordered eigen-triples ``(sigma_n, psi_n, phi_n)``.

    ``sigma`` has shape ``(n,)``; ``psi`` has shape ``(n, *row_shape)`` and
    ``phi`` has shape ``(n, *col_shape)``. ``sigma`` is non-increasing.
    """

    sigma: np.ndarray
    psi: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        n = self.sigma.shape[0]
        if self.psi.shape[0] != n or self.phi.shape[0] != n:
            raise ValueError("sigma, psi and phi disagree on the number of triples")

    def __len__(self) -> int:
        return self.sigma.shape[0]

    def __iter__(self) -> Iterator[tuple[float, np.ndarray, np.ndarray]]:
        for n in range(len(self)):
            yield float(self.sigma[n]), self.psi[n], self.phi[n]

    @property
    def row_shape(self) -> tuple[int, ...]:
        return self.psi.shape[1:]

    @property
    def col_shape(self) -> tuple[int, ...]:
        return self.phi.shape[1:]

    @property
    def source_dims(self) -> tuple[int, ...]:
        return self.row_shape

    def take(self, index) -> "EigenSystem":
        return EigenSystem(self.sigma[index], self.psi[index], self.phi[index])


def _canonical_phase(psi: np.ndarray) -> np.ndarray:
    """Unit phasors that make each row's largest-magnitude entry real-positive."""
    idx = np.argmax(np.abs(psi), axis=1)
    peak = psi[np.arange(psi.shape[0]), idx]
    mag = np.abs(peak)
    return np.where(mag > 0, peak / np.where(mag > 0, mag, 1.0), 1.0)


def _svd_triples(K: np.ndarray, full: bool = False):
    if not np.all(np.isfinite(K)):
        raise ValueError("kernel has non-finite entries")
    U, s, Vh = np.linalg.svd(K, full_matrices=False)
    order = np.argsort(-s, kind="stable")
    U, s, Vh = U[:, order], s[order], Vh[order]
    psi = U.T
    phi = Vh  # conj of the right singular vectors
    ph = _canonical_phase(psi)
    psi = psi * np.conj(ph)[:, None]
    phi = phi * ph[:, None]
    return s, psi, phi


def gmt_decompose(K: np.ndarray) -> EigenSystem:
    """Decompose a 2-D kernel ``K[t, t']`` into ``sum sigma_n psi_n(t) phi_n(t')``.

    >>> es = gmt_decompose(np.diag([3.0, 4.0]))
    >>> es.sigma.tolist()
    [4.0, 3.0]
    """
    K = np.asarray(K)
    if K.ndim != 2:
        raise ValueError(f"expected a 2-D kernel, got shape {K.shape}")
    s, psi, phi = _svd_triples(K)
    return EigenSystem(s, psi, phi)


def hogmt_decompose(k: np.ndarray, fmap: FlatteningMap | None = None) -> EigenSystem:
    """Decompose a ``(U, T, U, T)`` kernel into 2-D eigenfunction pairs.

    Parameters
    ----------
    k : ndarray, shape (U, T, U, T)
        Space-time kernel ``k[u, t, u', t']``.
    fmap : FlatteningMap, optional
        Index flattening used for the matrix SVD. Defaults to user-major.

    Returns
    -------
    EigenSystem
        ``psi`` and ``phi`` have shape ``(n, U, T)``.
    """
    k = np.asarray(k)
    if k.ndim != 4:
        raise ValueError(f"expected a 4-D kernel, got shape {k.shape}")
    if fmap is None:
        fmap = FlatteningMap(k.shape[0], k.shape[1])
    K = fmap.kernel_to_matrix(k)
    s, psi, phi = _svd_triples(K)
    return EigenSystem(s, fmap.vector_to_grid(psi), fmap.vector_to_grid(phi))


def select_eigen(
    es: EigenSystem,
    epsilon: float,
    mode: Literal["relative", "absolute"] = "relative",
) -> EigenSystem:
    """Keep triples with ``sigma_n > epsilon * sigma_1`` (or ``> epsilon``).

    Raises
    ------
    EmptySelectionError
        If nothing survives the threshold.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if len(es) == 0:
        raise EmptySelectionError("eigen system is empty")
    if mode == "relative":
        cut = epsilon * es.sigma[0]
    elif mode == "absolute":
        cut = epsilon
    else:
        raise ValueError(f"unknown threshold mode {mode!r}")
    keep = np.flatnonzero(es.sigma > cut)
    if keep.size == 0:
        raise EmptySelectionError(
            f"no eigen-triples above {mode} threshold epsilon={epsilon}"
        )
    return es.take(keep)


def reconstruct(es: EigenSystem) -> np.ndarray:
    """Rebuild ``sum sigma_n psi_n (x) phi_n`` with shape ``row_shape + col_shape``."""
    rows = es.psi.reshape(len(es), -1)
    cols = es.phi.reshape(len(es), -1)
    K = (rows.T * es.sigma) @ cols
    return K.reshape(es.row_shape + es.col_shape)


def verify_duality(k: np.ndarray, es: EigenSystem, floor: float | None = None) -> np.ndarray:
    """Per-triple residuals of ``H conj(phi_n) = sigma_n psi_n``.

    ``residual_n = ||k applied to conj(phi_n) - sigma_n psi_n|| / max(sigma_n, floor)``
    where the kernel sums over its trailing (column) index group. ``floor``
    defaults to ``eps * sigma_1``.
    """
    k = np.asarray(k)
    n_rows = int(np.prod(es.row_shape))
    K = k.reshape(n_rows, -1)
    if K.shape[1] != int(np.prod(es.col_shape)):
        raise ValueError("kernel and eigen system disagree in shape")
    if floor is None:
        floor = np.finfo(float).eps * (es.sigma[0] if len(es) else 1.0)
    out = K @ np.conj(es.phi.reshape(len(es), -1)).T
    target = es.psi.reshape(len(es), -1).T * es.sigma
    err = np.linalg.norm(out - target, axis=0)
    return err / np.maximum(es.sigma, floor)


@dataclass(frozen=True)
class EnsembleEigenSystem:
    """Karhunen-Loeve modes of a random kernel.

    Attributes
    ----------
    lam : ndarray, shape (n,)
        Eigenvalues of the empirical covariance, non-increasing.
    rho : ndarray, shape (n, *row_shape, *col_shape)
        Orthonormal eigen-kernels.
    psi, phi : ndarray
        Unit-norm rank-1 factors of each ``rho_n`` (best rank-1 SVD term):
        ``rho_n ~ scale_n * psi_n (x) phi_n``.
    scale : ndarray, shape (n,)
        Leading singular value of each ``rho_n`` (1 when exactly separable).
    separability_residual : ndarray, shape (n,)
        ``||rho_n - scale_n psi_n phi_n||_F / ||rho_n||_F`` in [0, 1].
    """

    lam: np.ndarray
    rho: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    scale: np.ndarray
    separability_residual: np.ndarray

    def __len__(self) -> int:
        return self.lam.shape[0]

    @property
    def row_shape(self) -> tuple[int, ...]:
        return self.psi.shape[1:]

    @property
    def col_shape(self) -> tuple[int, ...]:
        return self.phi.shape[1:]

    @classmethod
    def from_deterministic(cls, kernel: np.ndarray, row_ndim: int = 2) -> "EnsembleEigenSystem":
        """Treat one fixed kernel as a degenerate ensemble: ``lam_n = sigma_n^2``."""
        kernel = np.asarray(kernel)
        row_shape, col_shape = kernel.shape[:row_ndim], kernel.shape[row_ndim:]
        es = gmt_decompose(kernel.reshape(int(np.prod(row_shape)), -1))
        n = len(es)
        psi = es.psi.reshape((n,) + row_shape)
        phi = es.phi.reshape((n,) + col_shape)
        rho = np.einsum("na,nb->nab", es.psi, es.phi).reshape((n,) + kernel.shape)
        return cls(es.sigma**2, rho, psi, phi, np.ones(n), np.zeros(n))


def _rank1_factor(rho_n: np.ndarray, n_rows: int):
    M = rho_n.reshape(n_rows, -1)
    u, s, vh = np.linalg.svd(M, full_matrices=False)
    total = np.linalg.norm(M)
    if total == 0:
        return u[:, 0], vh[0], 0.0, 0.0
    resid = np.sqrt(max(total**2 - s[0] ** 2, 0.0)) / total
    # canonical phase as in the deterministic decomposition
    ph = _canonical_phase(u[:, :1].T)[0]
    return u[:, 0] * np.conj(ph), vh[0] * ph, s[0] / total, min(resid, 1.0)


def ensemble_klt(
    ensemble: np.ndarray,
    row_ndim: int = 2,
    max_modes: int | None = None,
) -> EnsembleEigenSystem:
    """Karhunen-Loeve decomposition of an ensemble of kernels.

    Each realization (trailing axes of ``ensemble``) is flattened, the
    empirical mean is removed and the eigenpairs of the 1/N-normalized
    covariance ``C[a, b] = mean_i x_i[a] conj(x_i[b])`` are obtained from an
    SVD of the centred data matrix, which avoids forming ``C``.

    Parameters
    ----------
    ensemble : ndarray, shape (N, *row_shape, *col_shape)
    row_ndim : int
        Number of leading realization axes forming the row group ``zeta``.
    max_modes : int, optional
        Keep at most this many leading modes.
    """
    ensemble = np.asarray(ensemble)
    N = ensemble.shape[0]
    if N < 2:
        raise ValueError("ensemble_klt needs at least 2 realizations")
    kshape = ensemble.shape[1:]
    row_shape, col_shape = kshape[:row_ndim], kshape[row_ndim:]
    n_rows = int(np.prod(row_shape))
    X = ensemble.reshape(N, -1).astype(complex)
    X = X - X.mean(axis=0, keepdims=True)
    _, s, Vh = np.linalg.svd(X, full_matrices=False)
    lam = s**2 / N
    if max_modes is not None:
        lam, Vh = lam[:max_modes], Vh[:max_modes]
    n = lam.shape[0]
    rho = Vh.reshape((n,) + kshape)

    psi = np.empty((n, n_rows), dtype=complex)
    phi = np.empty((n, Vh.shape[1] // n_rows), dtype=complex)
    scale = np.empty(n)
    resid = np.empty(n)
    for i in range(n):
        psi[i], phi[i], scale[i], resid[i] = _rank1_factor(Vh[i], n_rows)
    return EnsembleEigenSystem(
        lam,
        rho,
        psi.reshape((n,) + row_shape),
        phi.reshape((n,) + col_shape),
        scale,
        resid,
    )
