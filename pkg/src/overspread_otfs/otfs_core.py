"""Frame geometry, Zak-domain transforms, QAM mapping and index helpers.

Conventions used throughout the package:

* A delay-Doppler (DD) grid is an ``M x N`` complex array, row = delay bin,
  column = Doppler bin ``k`` in ``[0, N-1]``.
* A time signal is a length ``M*N`` complex vector. Sample ``q = n*M + m``
  holds delay-time entry ``(m, n)`` (column-major vectorization).
* All DFTs are unitary (``1/sqrt(N)`` both ways).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

SIGNAL_MAGIC = b"OTFS"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class FrameGeometry:
    """OTFS frame dimensions.

    Parameters
    ----------
    M : int
        Delay bins (subcarriers).
    N : int
        Doppler bins (blocks per frame).
    delta_f : float
        Subcarrier spacing in Hz.
    """

    M: int
    N: int
    delta_f: float = 15e3

    def __post_init__(self):
        if self.M < 2 or self.N < 2:
            raise ValueError(f"M and N must be >= 2, got M={self.M}, N={self.N}")
        if not self.delta_f > 0:
            raise ValueError(f"delta_f must be positive, got {self.delta_f}")

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def T(self) -> float:
        """Block duration in seconds."""
        return 1.0 / self.delta_f

    @property
    def Ts(self) -> float:
        """Sampling interval in seconds."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def bandwidth(self) -> float:
        return self.M * self.delta_f

    @property
    def frame_duration(self) -> float:
        return self.N * self.T

    def delay_seconds(self, l: float) -> float:
        return l * self.Ts

    def doppler_hz(self, k: float) -> float:
        return k / self.frame_duration

    def signed_doppler(self, k: int) -> int:
        """Grid index in [0, N-1] -> physical bin in (-N/2, N/2]."""
        k = int(k) % self.N
        return k if k <= self.N // 2 else k - self.N


def idzt(X: np.ndarray) -> np.ndarray:
    """DD grid (M x N) to time samples (length MN)."""
    X = np.asarray(X, dtype=complex)
    Xt = np.fft.ifft(X, axis=1, norm="ortho")
    return Xt.reshape(-1, order="F")


def dzt(r: np.ndarray, M: int) -> np.ndarray:
    """Time samples (length MN) to DD grid (M x N)."""
    r = np.asarray(r, dtype=complex)
    if r.ndim != 1 or r.size % M:
        raise ValueError(f"signal length {r.size} is not a multiple of M={M}")
    return np.fft.fft(delay_time(r, M), axis=1, norm="ortho")


def delay_time(r: np.ndarray, M: int) -> np.ndarray:
    """Reshape time samples into the M x N delay-time matrix."""
    return np.asarray(r).reshape(M, -1, order="F")


def mod_delay(l: int, geometry: FrameGeometry) -> tuple[int, int]:
    """Split a delay into (aliased delay, block index) with ``l = ell + b*M``."""
    if not 0 <= l < geometry.MN:
        raise ValueError(f"delay {l} outside [0, {geometry.MN})")
    b, ell = divmod(int(l), geometry.M)
    return ell, b


def _gray_to_binary(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


class QamConstellation:
    """Square Gray-labelled QAM.

    Bits are consumed MSB first; the first half of each label selects the
    in-phase level and the second half the quadrature level. On each axis
    a 0 in the leading bit maps to the positive half, so for 4-QAM ``00``
    maps to ``(1 + 1j) * sqrt(Es / 2)``.
    """

    def __init__(self, order: int = 4, Es: float = 1.0):
        bits = int(round(np.log2(order)))
        if order < 4 or 2**bits != order or bits % 2:
            raise ValueError(f"QAM order must be a power of 4, got {order}")
        if Es <= 0:
            raise ValueError("symbol energy must be positive")
        self.order = order
        self.Es = float(Es)
        self.bits_per_symbol = bits
        self._axis_bits = bits // 2
        self._levels_per_axis = 2**self._axis_bits
        P = self._levels_per_axis
        self._scale = np.sqrt(self.Es / (2 * (P * P - 1) / 3))

    def _axis_level(self, gray: np.ndarray) -> np.ndarray:
        idx = _gray_to_binary(gray)
        return (self._levels_per_axis - 1) - 2 * idx

    def _axis_gray(self, values: np.ndarray) -> np.ndarray:
        P = self._levels_per_axis
        idx = np.clip(np.rint(((P - 1) - values / self._scale) / 2), 0, P - 1).astype(np.int64)
        return idx ^ (idx >> 1)

    @cached_property
    def points(self) -> np.ndarray:
        """Constellation points indexed by their integer label."""
        labels = np.arange(self.order)
        return self._symbols_from_labels(labels)

    def _symbols_from_labels(self, labels: np.ndarray) -> np.ndarray:
        ab = self._axis_bits
        gi = labels >> ab
        gq = labels & (self._levels_per_axis - 1)
        return self._scale * (self._axis_level(gi) + 1j * self._axis_level(gq))

    def map(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64).ravel()
        if bits.size % self.bits_per_symbol:
            raise ValueError(
                f"bit count {bits.size} not divisible by {self.bits_per_symbol}"
            )
        groups = bits.reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return self._symbols_from_labels(groups @ weights)

    def labels(self, symbols) -> np.ndarray:
        s = np.asarray(symbols)
        gi = self._axis_gray(s.real)
        gq = self._axis_gray(s.imag)
        return (gi << self._axis_bits) | gq

    def demap(self, symbols) -> np.ndarray:
        """Nearest-neighbour hard decision, returned as a flat bit array."""
        labels = self.labels(np.asarray(symbols).ravel())
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((labels[:, None] >> shifts) & 1).astype(np.int8).ravel()

    def hard_decision(self, symbols) -> np.ndarray:
        """Snap symbols to the nearest constellation point, keeping shape."""
        s = np.asarray(symbols)
        return self._symbols_from_labels(self.labels(s))


def write_signal(path, samples: np.ndarray, M: int, N: int) -> None:
    """Store a time signal in the little-endian ``OTFS`` binary format."""
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.size != M * N:
        raise ValueError(f"expected {M * N} samples, got {samples.size}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SIGNAL_MAGIC, M, N, 0))
        fh.write(samples.astype("<c16").tobytes())


def read_signal(path) -> tuple[np.ndarray, int, int]:
    """Load a time signal written by :func:`write_signal`.

    Returns ``(samples, M, N)``.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for OTFS header")
    magic, M, N, _ = _HEADER.unpack_from(raw)
    if magic != SIGNAL_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 16 * M * N:
        raise ValueError(f"payload holds {len(body) // 16} samples, header says {M * N}")
    return np.frombuffer(body, dtype="<c16").astype(np.complex128), M, N
