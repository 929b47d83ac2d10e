"""Doubly dispersive multipath channels with overspread delays."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .otfs_core import FrameGeometry

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ChannelPath:
    """One propagation path.

    ``k`` is stored as a grid index in ``[0, N-1]``.
    """

    h: complex
    l: int
    k: int


def path_triples(paths) -> list[tuple[complex, int, int]]:
    """(h, l, k) tuples from a realization or any iterable of path-like objects."""
    if isinstance(paths, ChannelRealization):
        paths = paths.paths
    return [(complex(p.h), int(p.l), int(p.k)) for p in paths]


@dataclass(frozen=True)
class ChannelRealization:
    geometry: FrameGeometry
    paths: tuple[ChannelPath, ...]
    l_max: int

    def __post_init__(self):
        g = self.geometry
        paths = tuple(sorted(self.paths, key=lambda p: p.l))
        object.__setattr__(self, "paths", paths)
        if not 0 <= self.l_max < g.MN:
            raise ValueError(f"l_max={self.l_max} must lie in [0, {g.MN})")
        seen: dict[int, int] = {}
        for p in paths:
            if not 0 <= p.l <= self.l_max:
                raise ValueError(f"path delay {p.l} outside [0, {self.l_max}]")
            if not 0 <= p.k < g.N:
                raise ValueError(f"Doppler index {p.k} outside [0, {g.N})")
            if not np.isfinite(p.h):
                raise ValueError("path gain must be finite")
            if seen.setdefault(p.l, p.k) != p.k:
                raise ValueError(f"delay {p.l} carries two Doppler values")

    @property
    def b_max(self) -> int:
        return self.l_max // self.geometry.M

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.h for p in self.paths], dtype=complex)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.l for p in self.paths], dtype=int)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.k for p in self.paths], dtype=int)

    def __len__(self):
        return len(self.paths)

    def to_dict(self) -> dict:
        g = self.geometry
        return {
            "M": g.M,
            "N": g.N,
            "delta_f": g.delta_f,
            "l_max": self.l_max,
            "paths": [
                {"re": complex(p.h).real, "im": complex(p.h).imag, "l": p.l, "k": p.k}
                for p in self.paths
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelRealization":
        geometry = FrameGeometry(int(d["M"]), int(d["N"]), float(d.get("delta_f", 15e3)))
        paths = tuple(
            ChannelPath(complex(p["re"], p["im"]), int(p["l"]), int(p["k"])) for p in d["paths"]
        )
        return cls(geometry, paths, int(d["l_max"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ChannelRealization":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _tap_tables() -> dict:
    text = resources.files("overspread_otfs").joinpath("data/profiles.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class ChannelProfile:
    """Evaluation channel settings (one column of the simulation table)."""

    name: str
    delta_f: float
    speed_kmh: float
    k_max: int
    power_profile: str  # "uniform", "EVA" or "ETU"
    delay_profile: str  # "uniform" or "ETU"
    L: int = 9
    l_max: int = 2400
    min_underspread: int = 2

    def geometry(self, M: int = 512, N: int = 128) -> FrameGeometry:
        return FrameGeometry(M, N, self.delta_f)


PROFILES = {
    "A": ChannelProfile("A", 15e3, 500.0, 16, "uniform", "uniform"),
    "B": ChannelProfile("B", 15e3, 500.0, 16, "EVA", "uniform"),
    "C": ChannelProfile("C", 900e3, 1000.0, 1, "ETU", "ETU", min_underspread=0),
}


def k_max_from_speed(speed_kmh: float, carrier_hz: float, geometry: FrameGeometry) -> int:
    """Largest Doppler bin for a given speed and carrier frequency."""
    nu_max = speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT
    return int(round(nu_max * geometry.frame_duration))


def etu_delays_samples(geometry: FrameGeometry) -> np.ndarray:
    """ETU tap delays in samples, ``round(tau * M * delta_f)``."""
    tau = np.array(_tap_tables()["ETU"]["delays_ns"]) * 1e-9
    return np.rint(tau * geometry.bandwidth).astype(int)


def profile_powers(name: str, L: int) -> np.ndarray:
    if name == "uniform":
        return np.ones(L)
    table = _tap_tables()[name]["powers_db"]
    if L > len(table):
        raise ValueError(f"{name} profile has only {len(table)} taps, asked for {L}")
    return 10.0 ** (np.asarray(table[:L]) / 10)


def generate_channel(
    profile: ChannelProfile,
    geometry: FrameGeometry,
    l_max: int | None = None,
    L: int | None = None,
    rng=None,
    gain_model: str = "phase",
) -> ChannelRealization:
    """Draw one channel realization.

    ``gain_model="phase"`` gives each path exactly its profile power with a
    uniform random phase; ``"rayleigh"`` draws complex Gaussian gains with
    the profile power as variance. Either way the gains are normalized to
    unit total power.
    """
    rng = np.random.default_rng(rng)
    l_max = profile.l_max if l_max is None else int(l_max)
    L = profile.L if L is None else int(L)
    if L < 1:
        raise ValueError("need at least one path")
    if not 0 <= l_max < geometry.MN:
        raise ValueError(f"l_max={l_max} must lie in [0, {geometry.MN})")

    if profile.delay_profile == "uniform":
        if L > l_max + 1:
            raise ValueError(f"cannot place {L} distinct delays in [0, {l_max}]")
        need = min(profile.min_underspread, L, geometry.M)
        if need > min(geometry.M, l_max + 1):
            raise ValueError("underspread path requirement cannot be met")
        while True:
            delays = np.sort(rng.choice(l_max + 1, size=L, replace=False))
            if np.count_nonzero(delays < geometry.M) >= need:
                break
    elif profile.delay_profile == "ETU":
        delays = etu_delays_samples(geometry)
        if L > delays.size:
            raise ValueError(f"ETU has {delays.size} taps, asked for {L}")
        delays = delays[:L]
        if np.unique(delays).size != L:
            raise ValueError("ETU taps collide after rounding to samples")
        if delays.max() > l_max:
            raise ValueError(f"ETU delay {delays.max()} exceeds l_max={l_max}")
    else:
        raise ValueError(f"unknown delay profile {profile.delay_profile!r}")

    powers = profile_powers(profile.power_profile, L)
    if gain_model == "phase":
        gains = np.sqrt(powers) * np.exp(2j * np.pi * rng.random(L))
    elif gain_model == "rayleigh":
        gains = np.sqrt(powers / 2) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    else:
        raise ValueError(f"unknown gain model {gain_model!r}")
    gains = gains / np.sqrt(np.sum(np.abs(gains) ** 2))

    theta = 2 * np.pi * rng.random(L)
    dopplers = np.rint(profile.k_max * np.cos(theta)).astype(int) % geometry.N

    paths = tuple(ChannelPath(complex(h), int(l), int(k)) for h, l, k in zip(gains, delays, dopplers))
    return ChannelRealization(geometry, paths, l_max)


def awgn(size: int, noise_var: float, rng) -> np.ndarray:
    """Circularly symmetric complex Gaussian noise, ``noise_var`` per sample."""
    rng = np.random.default_rng(rng)
    scale = np.sqrt(noise_var / 2)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def apply_channel(signal, channel, noise_var: float = 0.0, rng=None) -> np.ndarray:
    """Pass a time signal through a set of (h, l, k) paths.

    Samples before the frame start are taken as zero.
    """
    s = np.asarray(signal, dtype=complex)
    MN = s.size
    r = np.zeros(MN, dtype=complex)
    for h, l, k in path_triples(channel):
        if l >= MN:
            continue
        n = np.arange(MN - l)
        r[l:] += h * np.exp(2j * np.pi * k * n / MN) * s[: MN - l]
    if noise_var > 0:
        r += awgn(MN, noise_var, rng)
    return r


def to_matrix_oracle(channel, MN: int) -> np.ndarray:
    """Dense MN x MN channel matrix built entry by entry (testing only)."""
    G = np.zeros((MN, MN), dtype=complex)
    for h, l, k in path_triples(channel):
        for q in range(l, MN):
            G[q, q - l] += h * np.exp(2j * np.pi * k * (q - l) / MN)
    return G


def dt_channel_vector(h: complex, l: int, k: int, geometry: FrameGeometry) -> np.ndarray:
    """M x N array whose row m is the delay-time vector of one path at delay row m."""
    M, N, MN = geometry.M, geometry.N, geometry.MN
    m = np.arange(M)[:, None]
    n = np.arange(N)[None, :]
    return h * np.exp(2j * np.pi * k * (m - l) / MN) * np.exp(2j * np.pi * k * n / N)


def dt_channel_vectors(channel, geometry: FrameGeometry) -> dict[int, np.ndarray]:
    """Delay -> M x N array of delay-time channel vectors (paths at one delay summed)."""
    out: dict[int, np.ndarray] = {}
    for h, l, k in path_triples(channel):
        v = dt_channel_vector(h, l, k, geometry)
        out[l] = out[l] + v if l in out else v
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class FractionalTapChannel:
    """Paths with real-valued delays, sampled on the integer taps in ``taps``."""

    geometry: FrameGeometry
    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray
    eps: float
    taps: np.ndarray = field(repr=False)

    def tap_weights(self) -> np.ndarray:
        """|taps| x L matrix of sinc(p - l_i)."""
        return np.sinc(self.taps[:, None] - self.delays[None, :])

    def response(self) -> np.ndarray:
        """MN x |taps| array of h[q, p]."""
        MN = self.geometry.MN
        q = np.arange(MN)[:, None]
        phase = np.exp(2j * np.pi * self.dopplers[None, :] * (q - self.delays[None, :]) / MN)
        return (phase * self.gains[None, :]) @ self.tap_weights().T

    def retained_energy(self) -> np.ndarray:
        """Per-path fraction of sinc energy captured by the retained taps."""
        w = self.tap_weights()
        # sum over all integers of sinc^2(p - l) is exactly 1
        return np.sum(w**2, axis=0)

    def apply(self, signal, noise_var: float = 0.0, rng=None) -> np.ndarray:
        s = np.asarray(signal, dtype=complex)
        MN = s.size
        H = self.response()
        r = np.zeros(MN, dtype=complex)
        for j, p in enumerate(self.taps):
            if p >= MN:
                continue
            r[p:] += H[p:, j] * s[: MN - p]
        if noise_var > 0:
            r += awgn(MN, noise_var, rng)
        return r

    def dt_vectors(self) -> dict[int, np.ndarray]:
        """Tap -> M x N array with row m, column n holding h[nM + m, p]."""
        H = self.response()
        M = self.geometry.M
        return {int(p): H[:, j].reshape(M, -1, order="F") for j, p in enumerate(self.taps)}


def fractional_taps(real_delays, gains, dopplers, eps: float, geometry: FrameGeometry) -> FractionalTapChannel:
    if eps <= 0:
        raise ValueError("eps must be positive")
    delays = np.asarray(real_delays, dtype=float)
    gains = np.asarray(gains, dtype=complex)
    dopplers = np.asarray(dopplers, dtype=float)
    if np.any(delays < 0):
        raise ValueError("delays must be non-negative")
    # |sinc(x)| <= 1/(pi|x|), so no tap beyond 1/(pi*eps) of any delay can qualify
    reach = int(np.ceil(1 / (np.pi * eps))) + 1
    lo = max(0, int(np.floor(delays.min())) - reach)
    hi = min(geometry.MN - 1, int(np.ceil(delays.max())) + reach)
    cand = np.arange(lo, hi + 1)
    keep = np.any(np.abs(np.sinc(cand[:, None] - delays[None, :])) > eps, axis=1)
    taps = cand[keep]
    if taps.size == 0:
        raise ValueError(f"no tap exceeds eps={eps}")
    return FractionalTapChannel(geometry, gains, delays, dopplers, float(eps), taps)
