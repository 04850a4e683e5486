"""Binary containers for channels, eigen systems and symbol grids.

All integers and floats are little-endian. Complex values are stored as
``(real, imag)`` pairs of 8-byte floats, row-major.

``HGMT`` (channel)
    magic, u16 version, u32 ``U``, ``T``, ``L_max``, payload. ``L_max > 0``
    means the payload is an impulse response ``(U, U, T, L_max)``;
    ``L_max == 0`` means a dense kernel ``(U, T, U, T)``.
``HGES`` (eigen system)
    magic, u16 version, u32 ``U``, ``T``, ``n``, then per triple one f64
    ``sigma`` followed by ``psi`` and ``phi`` (each ``U x T``).
``HGSY`` (symbol grid)
    magic, u16 version, u32 ``U``, ``T``, payload ``(U, T)``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .decompose import EigenSystem

__all__ = [
    "VERSION",
    "ContainerError",
    "write_impulse",
    "write_kernel",
    "read_channel",
    "write_eigensystem",
    "read_eigensystem",
    "write_symbols",
    "read_symbols",
    "export_kernel_csv",
]

VERSION = 1
_C = np.dtype("<c16")


class ContainerError(ValueError):
    """Malformed or mismatched container file."""


def _header(magic: bytes, *dims: int) -> bytes:
    return magic + struct.pack("<H", VERSION) + struct.pack(f"<{len(dims)}I", *dims)


def _read_header(buf: io.BufferedReader, magic: bytes, ndims: int) -> tuple[int, ...]:
    head = buf.read(4 + 2 + 4 * ndims)
    if len(head) < 6 + 4 * ndims or head[:4] != magic:
        raise ContainerError(f"not a {magic.decode()} container")
    (version,) = struct.unpack("<H", head[4:6])
    if version != VERSION:
        raise ContainerError(f"unsupported {magic.decode()} version {version}")
    return struct.unpack(f"<{ndims}I", head[6:])


def _payload(buf, count: int, shape) -> np.ndarray:
    raw = buf.read(count * _C.itemsize)
    if len(raw) != count * _C.itemsize:
        raise ContainerError("truncated payload")
    return np.frombuffer(raw, dtype=_C).astype(complex).reshape(shape)


def write_impulse(path, h: np.ndarray) -> None:
    """Write an impulse response ``(U, U, T, L_max)``."""
    h = np.asarray(h)
    if h.ndim != 4 or h.shape[0] != h.shape[1] or h.shape[3] == 0:
        raise ContainerError(f"impulse response must have shape (U, U, T, L>0), got {h.shape}")
    U, _, T, L = h.shape
    with open(path, "wb") as fh:
        fh.write(_header(b"HGMT", U, T, L))
        fh.write(np.ascontiguousarray(h, dtype=_C).tobytes())


def write_kernel(path, k: np.ndarray) -> None:
    """Write a dense ``(U, T, U, T)`` kernel (``L_max = 0`` form)."""
    k = np.asarray(k)
    U, T = k.shape[:2]
    if k.shape != (U, T, U, T):
        raise ContainerError(f"kernel must have shape (U, T, U, T), got {k.shape}")
    with open(path, "wb") as fh:
        fh.write(_header(b"HGMT", U, T, 0))
        fh.write(np.ascontiguousarray(k, dtype=_C).tobytes())


def read_channel(path) -> tuple[str, np.ndarray]:
    """Return ``("impulse", h)`` or ``("kernel", k)``."""
    with open(path, "rb") as fh:
        U, T, L = _read_header(fh, b"HGMT", 3)
        if L == 0:
            return "kernel", _payload(fh, (U * T) ** 2, (U, T, U, T))
        return "impulse", _payload(fh, U * U * T * L, (U, U, T, L))


def write_eigensystem(path, es: EigenSystem) -> None:
    if len(es.row_shape) != 2 or es.row_shape != es.col_shape:
        raise ContainerError("HGES stores U x T eigenfunctions only")
    U, T = es.row_shape
    with open(path, "wb") as fh:
        fh.write(_header(b"HGES", U, T, len(es)))
        for sigma, psi, phi in es:
            fh.write(struct.pack("<d", sigma))
            fh.write(np.ascontiguousarray(psi, dtype=_C).tobytes())
            fh.write(np.ascontiguousarray(phi, dtype=_C).tobytes())


def read_eigensystem(path) -> EigenSystem:
    with open(path, "rb") as fh:
        U, T, n = _read_header(fh, b"HGES", 3)
        sigma = np.empty(n)
        psi = np.empty((n, U, T), dtype=complex)
        phi = np.empty((n, U, T), dtype=complex)
        for i in range(n):
            raw = fh.read(8)
            if len(raw) != 8:
                raise ContainerError("truncated payload")
            (sigma[i],) = struct.unpack("<d", raw)
            psi[i] = _payload(fh, U * T, (U, T))
            phi[i] = _payload(fh, U * T, (U, T))
    return EigenSystem(sigma, psi, phi)


def write_symbols(path, s: np.ndarray) -> None:
    s = np.asarray(s)
    if s.ndim != 2:
        raise ContainerError(f"symbol grid must be 2-D, got shape {s.shape}")
    with open(path, "wb") as fh:
        fh.write(_header(b"HGSY", *s.shape))
        fh.write(np.ascontiguousarray(s, dtype=_C).tobytes())


def read_symbols(path) -> np.ndarray:
    with open(path, "rb") as fh:
        U, T = _read_header(fh, b"HGSY", 2)
        return _payload(fh, U * T, (U, T))


def export_kernel_csv(path, k: np.ndarray) -> int:
    """Write nonzero kernel entries as ``u,t,u',t',re,im`` (9 significant digits).

    Returns the number of rows written.
    """
    k = np.asarray(k)
    idx = np.argwhere(k != 0)
    with open(Path(path), "w", newline="") as fh:
        fh.write("u,t,u_prime,t_prime,re,im\n")
        for u, t, up, tp in idx:
            z = k[u, t, up, tp]
            fh.write(f"{u},{t},{up},{tp},{z.real:.9g},{z.imag:.9g}\n")
    return len(idx)
