"""Channel synthesis and conversions between channel representations.

Representations handled here, all on unit-spaced discrete grids:

* time-varying impulse response ``h[u, u', t, tau]``
* delay-Doppler spreading function ``S[tau, nu]``
* time-frequency transfer function ``L[t, f]``
* atomic-channel kernel ``H[t, f, tau, nu]``
* multi-user space-time kernel ``k[u, t, u', t']`` (the channel operator)

DFT convention: forward transforms are unnormalized, inverse transforms carry
``1/N`` (numpy's convention). The spreading function is defined with a
``1/T`` factor so that ``h(t, tau) = sum_nu S(tau, nu) exp(+j 2 pi t nu / T)``
holds exactly. With that choice ``sum |L|^2 == T * F * sum |S|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ChannelConfig",
    "ImpulseResponse",
    "synth_channel",
    "impulse_to_kernel",
    "impulse_to_spreading",
    "spreading_to_impulse",
    "spreading_to_transfer",
    "transfer_to_spreading",
    "prototype_window",
    "atomic_kernel",
    "apply_kernel",
    "kernel_matrix",
]


def _as_profile(values, T: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(T, float(arr))
    if arr.shape != (T,):
        raise ValueError(f"{name} must have length num_time={T}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class ChannelConfig:
    """Generative parameters of a non-stationary multi-user channel.

    Parameters
    ----------
    num_users, num_time : int
        Grid sizes ``U`` and ``T``.
    tap_count_min, tap_count_max : int
        Bounds (inclusive) of the per-(u, u', t) number of active delay taps.
    gain_mean_profile, gain_std_profile : sequence of float or float
        Per-time-instance mean and standard deviation of the complex Gaussian
        tap gains. Scalars are broadcast to length ``T``.
    cross_user_coupling : float
        Power of u != u' paths relative to u == u' paths, in [0, 1].
    delay_decay : float, optional
        Power-delay profile constant: tap ``tau`` is scaled in power by
        ``exp(-tau / delay_decay)``. ``None`` keeps all taps equally
        distributed. Equal-power taps over 10-20 lags make the space-time
        operator non-minimum-phase and exponentially ill-conditioned in ``T``.
    seed : int
        Seed for ``numpy.random.default_rng``.
    """

    num_users: int
    num_time: int
    tap_count_min: int
    tap_count_max: int
    gain_mean_profile: Sequence[float] | float = 1.0
    gain_std_profile: Sequence[float] | float = 0.0
    cross_user_coupling: float = 1.0
    seed: int = 0
    delay_decay: float | None = None
    mean: np.ndarray = field(init=False, repr=False, compare=False)
    std: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        U, T = self.num_users, self.num_time
        if U < 1 or T < 1:
            raise ValueError("num_users and num_time must be >= 1")
        if not 1 <= self.tap_count_min <= self.tap_count_max:
            raise ValueError("need 1 <= tap_count_min <= tap_count_max")
        if self.tap_count_max > T:
            raise ValueError(
                f"tap_count_max={self.tap_count_max} exceeds num_time={T}"
            )
        if not 0.0 <= self.cross_user_coupling <= 1.0:
            raise ValueError("cross_user_coupling must lie in [0, 1]")
        if self.delay_decay is not None and not self.delay_decay > 0:
            raise ValueError("delay_decay must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        mean = _as_profile(self.gain_mean_profile, T, "gain_mean_profile")
        std = _as_profile(self.gain_std_profile, T, "gain_std_profile")
        if np.any(std < 0):
            raise ValueError("gain_std_profile entries must be >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def with_seed(self, seed: int) -> "ChannelConfig":
        return ChannelConfig(
            self.num_users,
            self.num_time,
            self.tap_count_min,
            self.tap_count_max,
            tuple(self.mean),
            tuple(self.std),
            self.cross_user_coupling,
            int(seed),
            self.delay_decay,
        )


@dataclass(frozen=True)
class ImpulseResponse:
    """Multi-user time-varying impulse response.

    ``values`` has shape ``(U, U, T, L_max)`` and is indexed
    ``[u, u', t, tau]`` (receive user, transmit antenna, time, delay).
    ``tap_counts`` has shape ``(U, U, T)``; taps at ``tau >= tap_counts``
    are exactly zero.
    """

    values: np.ndarray
    tap_counts: np.ndarray | None = None

    def __post_init__(self):
        v = self.values
        if v.ndim != 4 or v.shape[0] != v.shape[1]:
            raise ValueError(f"impulse response must have shape (U, U, T, L), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("impulse response has non-finite entries")

    @property
    def num_users(self) -> int:
        return self.values.shape[0]

    @property
    def num_time(self) -> int:
        return self.values.shape[2]

    @property
    def max_taps(self) -> int:
        return self.values.shape[3]


def synth_channel(config: ChannelConfig) -> ImpulseResponse:
    """Draw one realization of the non-stationary multi-user channel.

    For every ``(u, u', t)`` a tap count ``L ~ U{L_min, ..., L_max}`` is drawn;
    the first ``L`` taps get gains ``mean[t] + std[t] * (a + jb) / sqrt(2)``
    with ``a, b`` standard normal. Cross-user taps are scaled in amplitude by
    ``sqrt(cross_user_coupling)``.
    """
    U, T = config.num_users, config.num_time
    Lmax = config.tap_count_max
    rng = np.random.default_rng(config.seed)

    counts = rng.integers(config.tap_count_min, Lmax + 1, size=(U, U, T))
    noise = rng.standard_normal((U, U, T, Lmax, 2))
    gains = (
        config.mean[None, None, :, None]
        + config.std[None, None, :, None]
        * (noise[..., 0] + 1j * noise[..., 1])
        / np.sqrt(2.0)
    )
    active = np.arange(Lmax)[None, None, None, :] < counts[..., None]
    h = np.where(active, gains, 0.0).astype(complex)
    if config.delay_decay is not None:
        h *= np.exp(-np.arange(Lmax) / (2.0 * config.delay_decay))

    if U > 1:
        off = ~np.eye(U, dtype=bool)
        h[off] *= np.sqrt(config.cross_user_coupling)
    return ImpulseResponse(h, counts)


def impulse_to_kernel(h: ImpulseResponse | np.ndarray) -> np.ndarray:
    """Space-time kernel ``k[u, t, u', t'] = h[u, u', t, t - t']``.

    Entries with ``t - t'`` outside ``[0, L_max)`` are zero, so the kernel is
    causal with finite memory and transmitted symbols before ``t = 0`` are
    treated as zero.
    """
    values = h.values if isinstance(h, ImpulseResponse) else np.asarray(h)
    if values.ndim != 4 or values.shape[0] != values.shape[1]:
        raise ValueError(f"impulse response must have shape (U, U, T, L), got {values.shape}")
    U, _, T, L = values.shape
    k = np.zeros((U, T, U, T), dtype=complex)
    for d in range(min(L, T)):
        t = np.arange(d, T)
        # advanced indices split by a slice land in front: shape (n, U, U)
        k[:, t, :, t - d] = np.moveaxis(values[:, :, t, d], -1, 0)
    return k


def kernel_matrix(k: np.ndarray) -> np.ndarray:
    """Flatten a ``(U, T, U, T)`` kernel to its user-major ``(UT, UT)`` matrix."""
    U, T = k.shape[:2]
    if k.shape != (U, T, U, T):
        raise ValueError(f"kernel must have shape (U, T, U, T), got {k.shape}")
    return k.reshape(U * T, U * T)


def apply_kernel(k: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Noiseless channel output ``r[u, t] = sum k[u, t, u', t'] s[u', t']``."""
    s = np.asarray(s)
    if k.ndim != 4 or k.shape[2:] != s.shape or k.shape[:2] != s.shape:
        raise ValueError(f"kernel shape {k.shape} does not match symbol grid {s.shape}")
    return np.tensordot(k, s, axes=([2, 3], [0, 1]))


def impulse_to_spreading(h_slice: np.ndarray) -> np.ndarray:
    """Spreading function ``S[tau, nu] = (1/T) sum_t h[t, tau] e^{-j2pi t nu/T}``.

    ``h_slice`` is indexed ``[t, tau]``; the result is indexed ``[tau, nu]``.
    """
    h_slice = np.asarray(h_slice)
    if h_slice.ndim != 2:
        raise ValueError("expected a 2-D (t, tau) slice")
    T = h_slice.shape[0]
    return (np.fft.fft(h_slice, axis=0) / T).T


def spreading_to_impulse(S: np.ndarray) -> np.ndarray:
    """Inverse of :func:`impulse_to_spreading`."""
    S = np.asarray(S)
    T = S.shape[1]
    return (np.fft.ifft(S, axis=1) * T).T


def spreading_to_transfer(S: np.ndarray, num_freq: int | None = None) -> np.ndarray:
    """TF transfer function from the spreading function.

    ``L[t, f] = sum_{tau, nu} S[tau, nu] e^{+j2pi t nu/T} e^{-j2pi f tau/F}``.
    The delay axis is zero-padded to ``F = num_freq`` bins (default ``T``).
    """
    S = np.asarray(S)
    n_delay, T = S.shape
    F = T if num_freq is None else int(num_freq)
    if F < n_delay:
        raise ValueError(f"num_freq={F} is smaller than the delay extent {n_delay}")
    padded = np.zeros((F, T), dtype=complex)
    padded[:n_delay] = S
    # nu -> t: unnormalized inverse DFT; tau -> f: forward DFT
    L = np.fft.fft(np.fft.ifft(padded, axis=1) * T, axis=0)
    return L.T


def transfer_to_spreading(L: np.ndarray, num_delay: int | None = None) -> np.ndarray:
    """Inverse of :func:`spreading_to_transfer`; returns ``S[tau, nu]``.

    With ``num_delay`` the zero-padded delay bins beyond it are dropped.
    """
    L = np.asarray(L)
    T = L.shape[0]
    S = np.fft.ifft(np.fft.fft(L, axis=0) / T, axis=1).T
    if num_delay is not None:
        S = S[:num_delay]
    return S


def prototype_window(num_time: int, num_freq: int, width: float) -> np.ndarray:
    """Unit-norm cyclic Gaussian prototype ``L_G[t, f]`` centred at the origin.

    ``width`` is the standard deviation in bins along both axes; ``inf`` gives
    the flat window.
    """
    width = float(width)
    if not width > 0:
        raise ValueError(f"prototype width must be positive, got {width}")
    dt = np.minimum(np.arange(num_time), num_time - np.arange(num_time))
    df = np.minimum(np.arange(num_freq), num_freq - np.arange(num_freq))
    if np.isinf(width):
        g = np.ones((num_time, num_freq))
    else:
        g = np.exp(-(dt[:, None] ** 2 + df[None, :] ** 2) / (2.0 * width**2))
    return (g / np.linalg.norm(g)).astype(complex)


def atomic_kernel(L_H: np.ndarray, prototype_width: float) -> np.ndarray:
    """Atomic-channel kernel ``H[t, f, tau, nu]`` of a TF transfer function.

    ``H[t,f,tau,nu] = e^{j2pi f tau/F} sum_{t',f'} L_H[t',f'] conj(L_G[t'-t, f'-f])
    e^{-j2pi (nu t'/T - tau f'/F)}`` with cyclic window indices. The output
    has shape ``(T, F, F, T)``.
    """
    L_H = np.asarray(L_H, dtype=complex)
    T, F = L_H.shape
    G = prototype_window(T, F, prototype_width)
    out = np.empty((T, F, F, T), dtype=complex)
    f_idx = np.arange(F)
    tau = np.arange(F)
    # rolled windows for every f at once: Gf[f, t', f'] = G[t', f' - f]
    Gf_base = np.stack([np.roll(G, f, axis=1) for f in range(F)])
    phase = np.exp(2j * np.pi * np.outer(f_idx, tau) / F)  # [f, tau]
    for t in range(T):
        W = L_H[None] * np.conj(np.roll(Gf_base, t, axis=1))  # [f, t', f']
        # t' -> nu forward, f' -> tau with e^{+j...}: F * ifft
        A = np.fft.ifft(np.fft.fft(W, axis=1), axis=2) * F  # [f, nu, tau]
        out[t] = np.transpose(A, (0, 2, 1)) * phase[:, :, None]
    return out
