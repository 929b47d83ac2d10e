"""Dual-chirp + embedded pilot training frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .otfs_core import FrameGeometry, dzt, idzt


@dataclass(frozen=True)
class ChirpParams:
    """Dual-chirp amplitude and centre frequency (Hz)."""

    A: float
    f_o: float = 0.0

    def __post_init__(self):
        if self.A < 0:
            raise ValueError("chirp amplitude must be non-negative")


def chirp_amplitude(snr_c_db: float, noise_var: float = 1.0) -> float:
    """Amplitude for a chirp SNR defined as ``2 A^2 / noise_var``."""
    return float(np.sqrt(noise_var * 10 ** (snr_c_db / 10) / 2))


def pilot_amplitude(snr_p_db: float, N: int, noise_var: float = 1.0) -> float:
    """Real pilot for a pilot SNR defined as ``|x_p|^2 / (N noise_var)``."""
    return float(np.sqrt(N * noise_var * 10 ** (snr_p_db / 10)))


def dual_chirp(l: int, k: float, params: ChirpParams, geometry: FrameGeometry) -> np.ndarray:
    """Length-MN dual chirp starting at sample ``l`` with Doppler bin ``k``.

    Non-zero only on ``[l, l + M - 1]`` (clipped at the frame end).
    """
    M, MN = geometry.M, geometry.MN
    out = np.zeros(MN, dtype=complex)
    if l >= MN:
        return out
    d = np.arange(min(M, MN - l), dtype=float)
    lin = (params.f_o * geometry.T / M + k / MN) * d
    quad = d * d / (4 * M)
    out[l : l + d.size] = params.A * (
        np.exp(2j * np.pi * (lin + quad)) + np.exp(2j * np.pi * (lin - quad))
    )
    return out


@dataclass(frozen=True)
class TrainingFrame:
    geometry: FrameGeometry
    x_p: complex
    chirp: ChirpParams
    dd_grid: np.ndarray = field(repr=False)
    time_signal: np.ndarray = field(repr=False)

    @property
    def template(self) -> np.ndarray:
        """Transmitted dual chirp ``p[0, 0, .]``."""
        return dual_chirp(0, 0, self.chirp, self.geometry)

    def pilot_to_chirp_ratio(self) -> float:
        """``|x_p|^2 / (2A^2/N)``; infinite for a pilot-only frame."""
        chirp_dd = 2 * self.chirp.A**2 / self.geometry.N
        return np.inf if chirp_dd == 0 else abs(self.x_p) ** 2 / chirp_dd


def build_training(
    x_p: complex,
    params: ChirpParams,
    geometry: FrameGeometry,
    min_ratio: float | None = None,
) -> TrainingFrame:
    """Superimpose the pilot on the DD image of the transmit dual chirp.

    ``min_ratio`` enforces ``|x_p|^2 N / (2A^2) >= min_ratio``.
    """
    p = dual_chirp(0, 0, params, geometry)
    X = dzt(p, geometry.M)
    X[0, 0] += x_p
    frame = TrainingFrame(geometry, complex(x_p), params, X, idzt(X))
    if min_ratio is not None and frame.pilot_to_chirp_ratio() < min_ratio:
        raise ValueError(
            f"pilot/chirp DD power ratio {frame.pilot_to_chirp_ratio():.3g} below {min_ratio}"
        )
    return frame


def training_from_snr(
    snr_p_db: float,
    snr_c_db: float,
    geometry: FrameGeometry,
    noise_var: float = 1.0,
    min_ratio: float | None = None,
) -> TrainingFrame:
    params = ChirpParams(chirp_amplitude(snr_c_db, noise_var))
    x_p = pilot_amplitude(snr_p_db, geometry.N, noise_var)
    return build_training(x_p, params, geometry, min_ratio)
