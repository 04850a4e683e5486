"""Gray-mapped square constellations, AWGN and bit-error counting.

Square QAM is built from two Gray-coded PAM axes. The first half of a
symbol's bits selects the in-phase level, the second half the quadrature
level. On each axis, label ``v`` maps to level index ``i = gray^-1(v)`` and to
amplitude ``(m - 1) - 2 i`` before scaling, so label 0 is the most positive
level. BPSK is the one-axis case: bit 0 -> +1, bit 1 -> -1.

All constellations have unit mean energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Scheme",
    "Constellation",
    "LinkResult",
    "modulate",
    "demodulate",
    "awgn",
    "noise_variance",
    "ber_count",
    "ber_theory",
]


class Scheme(str, Enum):
    BPSK = "BPSK"
    QPSK = "QPSK"
    QAM16 = "QAM16"
    QAM64 = "QAM64"

    @classmethod
    def parse(cls, name) -> "Scheme":
        if isinstance(name, Scheme):
            return name
        key = str(name).upper().replace("-", "").replace("_", "")
        aliases = {"16QAM": "QAM16", "64QAM": "QAM64", "4QAM": "QPSK", "QAM4": "QPSK"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown modulation {name!r}") from None


_ORDER = {Scheme.BPSK: 2, Scheme.QPSK: 4, Scheme.QAM16: 16, Scheme.QAM64: 64}


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


@dataclass(frozen=True)
class Constellation:
    """Unit-energy Gray-labelled constellation.

    Attributes
    ----------
    scheme : Scheme
    levels : ndarray
        Per-axis amplitudes indexed by axis label (already scaled).
    scale : float
        Half the minimum distance between points.
    """

    scheme: Scheme
    levels: np.ndarray
    scale: float

    @classmethod
    def of(cls, scheme) -> "Constellation":
        scheme = Scheme.parse(scheme)
        M = _ORDER[scheme]
        m = 2 if scheme is Scheme.BPSK else int(round(np.sqrt(M)))
        axes = 1 if scheme is Scheme.BPSK else 2
        # per-axis energy of levels +-1, +-3, ... is (m^2 - 1) / 3
        scale = 1.0 / np.sqrt(axes * (m * m - 1) / 3.0)
        idx = np.arange(m)
        inv = np.empty(m, dtype=int)
        inv[_gray(idx)] = idx
        levels = ((m - 1) - 2 * inv) * scale
        return cls(scheme, levels.astype(float), float(scale))

    @property
    def axis_levels(self) -> int:
        return self.levels.size

    @property
    def bits_per_axis(self) -> int:
        return int(np.log2(self.axis_levels))

    @property
    def num_axes(self) -> int:
        return 1 if self.scheme is Scheme.BPSK else 2

    @property
    def bits_per_symbol(self) -> int:
        return self.bits_per_axis * self.num_axes

    @property
    def order(self) -> int:
        return 2**self.bits_per_symbol

    @property
    def points(self) -> np.ndarray:
        """All points indexed by the integer label (MSB first)."""
        if self.num_axes == 1:
            return self.levels.astype(complex)
        return (self.levels[:, None] + 1j * self.levels[None, :]).ravel()

    @property
    def modulo_period(self) -> float:
        """Per-axis period ``2 * m * scale`` of the THP modulo lattice."""
        return 2.0 * self.axis_levels * self.scale


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    k = bits.shape[-1]
    weights = 1 << np.arange(k - 1, -1, -1)
    return bits @ weights


def _int_to_bits(v: np.ndarray, k: int) -> np.ndarray:
    shifts = np.arange(k - 1, -1, -1)
    return ((v[..., None] >> shifts) & 1).astype(np.uint8)


def modulate(bits, c: Constellation, dims: tuple[int, int]) -> np.ndarray:
    """Map bits onto a ``dims = (U, T)`` grid in row-major order."""
    bits = np.asarray(bits).astype(np.int64).ravel()
    U, T = dims
    k = c.bits_per_symbol
    if bits.size != U * T * k:
        raise ValueError(f"expected {U * T * k} bits for a {U}x{T} grid, got {bits.size}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    groups = bits.reshape(U * T, c.num_axes, c.bits_per_axis)
    labels = _bits_to_int(groups)
    sym = c.levels[labels[:, 0]].astype(complex)
    if c.num_axes == 2:
        sym = sym + 1j * c.levels[labels[:, 1]]
    return sym.reshape(U, T)


def _axis_decide(a: np.ndarray, c: Constellation) -> np.ndarray:
    # distances in units of the grid step; rounding makes exact midpoints tie
    d = np.abs(a[..., None] / c.scale - c.levels / c.scale)
    d = np.round(d, 9)
    # levels are ordered by label, so argmin's first hit is the smaller label
    return np.argmin(d, axis=-1)


def demodulate(r, c: Constellation) -> np.ndarray:
    """Minimum-distance detection; returns a flat ``uint8`` bit array.

    Ties go to the smaller label on each axis, which is the smaller full
    label because in-phase bits come first.
    """
    r = np.asarray(r, dtype=complex).ravel()
    lab = [_axis_decide(r.real, c)]
    if c.num_axes == 2:
        lab.append(_axis_decide(r.imag, c))
    labels = np.stack(lab, axis=-1)
    return _int_to_bits(labels, c.bits_per_axis).reshape(-1)


def noise_variance(snr_db: float, signal_power_ref: float = 1.0) -> float:
    """Complex noise variance ``signal_power_ref / 10^(snr_db/10)``."""
    if not signal_power_ref > 0:
        raise ValueError("signal_power_ref must be positive")
    return float(signal_power_ref / 10.0 ** (snr_db / 10.0))


def awgn(r, snr_db: float, signal_power_ref: float = 1.0, seed=None) -> np.ndarray:
    """Add circularly-symmetric complex Gaussian noise.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts, including
    a ``Generator``.
    """
    r = np.asarray(r, dtype=complex)
    n0 = noise_variance(snr_db, signal_power_ref)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(r.shape + (2,))
    return r + np.sqrt(n0 / 2.0) * (z[..., 0] + 1j * z[..., 1])


@dataclass(frozen=True)
class LinkResult:
    """Bit-error tally of one link evaluation."""

    snr_db: float
    bits_total: int
    bits_error: int
    method: str = ""
    epsilon: float | None = None
    seed: int | None = None

    @property
    def ber(self) -> float:
        return self.bits_error / self.bits_total if self.bits_total else 0.0


def ber_count(tx_bits, rx_bits) -> tuple[int, int, float]:
    """Return ``(errors, total, ber)``."""
    a = np.asarray(tx_bits).ravel()
    b = np.asarray(rx_bits).ravel()
    if a.size != b.size:
        raise ValueError(f"bit sequences differ in length ({a.size} vs {b.size})")
    errors = int(np.count_nonzero(a != b))
    return errors, a.size, (errors / a.size if a.size else 0.0)


def ber_theory(scheme, snr_db) -> np.ndarray:
    """Exact AWGN bit-error rate of the Gray constellation at ``Es/N0 = snr_db``.

    Computed per axis by summing Gaussian probabilities of every decision
    interval weighted by its Hamming distance to the sent label; no
    nearest-neighbour approximation is made.
    """
    c = Constellation.of(scheme)
    snr = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    sigma = np.sqrt(1.0 / snr / 2.0)  # per-axis noise std for unit Es
    lev = c.levels
    order = np.argsort(-lev)  # labels sorted from most positive level
    amp = lev[order]
    edges = np.concatenate(([np.inf], (amp[:-1] + amp[1:]) / 2.0, [-np.inf]))
    labels = np.arange(c.axis_levels)[order]
    k = c.bits_per_axis
    total = np.zeros_like(snr)
    for i, a in zip(labels, amp):
        for j in range(c.axis_levels):
            hd = bin(int(i) ^ int(labels[j])).count("1")
            if hd == 0:
                continue
            hi, lo = edges[j], edges[j + 1]
            p = ndtr((hi - a) / sigma) - ndtr((lo - a) / sigma)
            total = total + hd * p
    return total / (c.axis_levels * k)
