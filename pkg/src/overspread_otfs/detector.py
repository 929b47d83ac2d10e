"""Iterative delay-time MRC detection for RZP-OTFS with overspread delays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import dt_channel_vectors
from .otfs_core import FrameGeometry, QamConstellation, delay_time, idzt

INIT_MODES = ("zeros", "passthrough")


@dataclass(frozen=True)
class DetectorConfig:
    n_iter: int = 5
    delta_bar: float = 1.0
    init: str = "zeros"

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not 0 <= self.delta_bar <= 1:
            raise ValueError("delta_bar must lie in [0, 1]")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")


def block_shift(v: np.ndarray, p: int) -> np.ndarray:
    """Non-cyclic shift: ``p > 0`` moves entries down (leading zeros), ``p < 0`` up."""
    v = np.asarray(v)
    N = v.shape[-1]
    if abs(p) >= N:
        raise ValueError(f"shift {p} out of range for length {N}")
    out = np.zeros_like(v)
    if p >= 0:
        out[..., p:] = v[..., : N - p]
    else:
        out[..., : N + p] = v[..., -p:]
    return out


def direct_power(m: int, l: int, M: int) -> int:
    """Down-shift applied to the row feeding received row ``m`` through delay ``l``."""
    return -((m - l) // M)


def branch_power(m: int, l: int, M: int) -> int:
    """Down-shift of DT symbol row ``m`` as seen in received row ``(m + l) mod M``."""
    return (m + l) // M


def rzp_modulate(X: np.ndarray) -> np.ndarray:
    return idzt(X)


def dt_rows(r: np.ndarray, M: int) -> np.ndarray:
    """Received DT vectors; row ``m`` is ``y_m[n] = r[nM + m]``."""
    return delay_time(np.asarray(r, dtype=complex), M).copy()


def _channel_by_delay(paths, geometry: FrameGeometry):
    nus = dt_channel_vectors(paths, geometry)
    return np.array(list(nus.keys()), dtype=int), list(nus.values())


def dt_model(x_dt: np.ndarray, paths, geometry: FrameGeometry) -> np.ndarray:
    """Noiseless received DT rows assembled row by row from the DT channel vectors."""
    M, N = geometry.M, geometry.N
    delays, nus = _channel_by_delay(paths, geometry)
    y = np.zeros((M, N), dtype=complex)
    for m in range(M):
        for l, nu in zip(delays, nus):
            p = direct_power(m, l, M)
            if p >= N:
                continue
            y[m] += nu[m] * block_shift(x_dt[(m - l) % M], p)
    return y


def dt_model_branches(x_dt: np.ndarray, paths, geometry: FrameGeometry, power=branch_power) -> np.ndarray:
    """Same model, assembled by scattering each symbol row into its branches."""
    M, N = geometry.M, geometry.N
    delays, nus = _channel_by_delay(paths, geometry)
    y = np.zeros((M, N), dtype=complex)
    for m in range(M):
        for l, nu in zip(delays, nus):
            p = power(m, l, M)
            if abs(p) >= N:
                continue
            r = (m + l) % M
            y[r] += nu[r] * block_shift(x_dt[m], p)
    return y


@dataclass
class Detection:
    X: np.ndarray = field(repr=False)
    bits: np.ndarray = field(repr=False)
    residual_norms: list[float]
    iterations: int
    exited_early: bool
    unobserved: int
    ops: dict[str, int] = field(default_factory=dict)

    @property
    def ops_per_iteration(self) -> float:
        it = sum(v for k, v in self.ops.items() if k != "init")
        return it / max(self.iterations, 1)


class _Branches:
    """Gather/scatter tables linking each DT symbol row to its received copies."""

    def __init__(self, paths, geometry: FrameGeometry):
        M, N = geometry.M, geometry.N
        delays, nus = _channel_by_delay(paths, geometry)
        L = delays.size
        self.L = L
        sink = M * N
        n = np.arange(N)
        self.index = np.full((M, L, N), sink, dtype=np.int64)
        self.weight = np.zeros((M, L, N), dtype=complex)
        for m in range(M):
            for i, (l, nu) in enumerate(zip(delays, nus)):
                j = branch_power(m, l, M)
                if j >= N:
                    continue
                r = (m + l) % M
                valid = n + j < N
                pos = n[valid] + j
                self.index[m, i, valid] = r * N + pos
                self.weight[m, i, valid] = nu[r, pos]
        self.valid = self.index != sink
        self.d = np.sum(np.abs(self.weight) ** 2, axis=1)  # M x N


def mrc_detect(
    y_dt: np.ndarray,
    paths,
    geometry: FrameGeometry,
    qam: QamConstellation,
    cfg: DetectorConfig = DetectorConfig(),
) -> Detection:
    """Detect one RZP-OTFS data frame from its received DT rows.

    ``paths`` may be true or estimated (h, l, k) paths. On exit the
    iterate from before the non-improving sweep is reported.
    """
    M, N = geometry.M, geometry.N
    MN = M * N
    log2N = int(np.log2(N)) if N & (N - 1) == 0 else float(np.log2(N))
    br = _Branches(paths, geometry)
    d = br.d
    observed = d > 0
    n_valid = int(br.valid.sum())
    ops = {"init": 2 * n_valid}

    if cfg.init == "zeros":
        x = np.zeros((M, N), dtype=complex)
    else:
        x = np.asarray(y_dt, dtype=complex).copy()
    dy = np.zeros(MN + 1, dtype=complex)
    dy[:MN] = (np.asarray(y_dt) - dt_model_fast(x, br, M, N)).ravel()

    def row_norms(v):
        return np.linalg.norm(v[:MN].reshape(M, N), axis=1)

    prev_rows = row_norms(dy)
    norms = [float(np.linalg.norm(dy[:MN]))]
    db = cfg.delta_bar
    iterations = 0
    exited = False
    for _ in range(cfg.n_iter):
        x_before, dy_before = x.copy(), dy.copy()
        for m in range(M):
            idx, w, ok = br.index[m], br.weight[m], observed[m]
            g = np.sum(np.conj(w) * dy[idx], axis=0)
            c = x[m].copy()
            c[ok] += g[ok] / d[m, ok]
            if db > 0:
                hard = np.fft.ifft(qam.hard_decision(np.fft.fft(c, norm="ortho")), norm="ortho")
                x_new = db * hard + (1 - db) * c
            else:
                x_new = c
            delta = x_new - x[m]
            np.add.at(dy, idx, -w * delta[None, :])
            dy[MN] = 0
            x[m] = x_new
        iterations += 1
        rows = row_norms(dy)
        if np.all(rows >= prev_rows):
            x, dy = x_before, dy_before
            exited = True
            break
        prev_rows = rows
        norms.append(float(np.linalg.norm(dy[:MN])))

    it_cost = 2 * n_valid + MN + 2 * MN * log2N
    ops["iterations"] = int(it_cost * iterations)
    X = np.fft.fft(x, axis=1, norm="ortho")
    X = qam.hard_decision(X)
    return Detection(X, qam.demap(X.ravel()), norms, iterations, exited, int((~observed).sum()), ops)


def dt_model_fast(x_dt: np.ndarray, br: _Branches, M: int, N: int) -> np.ndarray:
    y = np.zeros(M * N + 1, dtype=complex)
    contrib = br.weight * x_dt[:, None, :]
    np.add.at(y, br.index.ravel(), contrib.ravel())
    return y[: M * N].reshape(M, N)
