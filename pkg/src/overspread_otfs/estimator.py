"""Two-stage channel estimation for overspread delays.

Stage 1 reads pilot echoes on the DD grid to find aliased delays and their
Doppler bins, and settles the rows that hold a lone underspread path.
Stage 2 correlates the received dual chirp in the time domain to resolve
the block index of every remaining aliased delay, then estimates gains by
successive interference cancellation. Two MSE-gated refinements fix
Doppler mispairings and recover paths hidden behind a same-(delay, Doppler)
twin.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import apply_channel
from .otfs_core import FrameGeometry, dzt
from .training import TrainingFrame, dual_chirp

log = logging.getLogger(__name__)

STAGE1, STAGE2, REFINE2 = "stage1", "stage2", "refine2"
TIE_METRICS = ("magnitude", "complex")


@dataclass(frozen=True)
class EstimatorConfig:
    """Thresholds for the two-stage estimator.

    ``gamma_pilot`` is the pilot-removal threshold in units of
    ``noise_var``; ``None`` means the frame's own pilot SNR, which puts the
    absolute cut at ``|x_p|^2 / N``. ``gamma_corr`` is an absolute
    correlation magnitude and therefore scales with the chirp amplitude.
    """

    noise_var: float
    l_max: int
    alpha: float = 4.0
    delta: float = 30.0
    alpha_prime: float = 2.0
    gamma_pilot: float | None = None
    gamma_corr: float = 500.0
    gamma: float = 2.0
    eps1: float = 0.6
    refine: bool = True
    paper_phase: bool = False
    tie_metric: str = "magnitude"

    def __post_init__(self):
        for name in ("alpha", "delta", "alpha_prime", "gamma_corr", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.eps1 < 1:
            raise ValueError("eps1 must lie in (0, 1)")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")
        if self.gamma_pilot is not None and self.gamma_pilot <= 0:
            raise ValueError("gamma_pilot must be positive")
        if self.tie_metric not in TIE_METRICS:
            raise ValueError(f"tie_metric must be one of {TIE_METRICS}")

    def pilot_cut(self, training: TrainingFrame) -> float:
        """Absolute power above which a received sample is treated as pilot."""
        if self.gamma_pilot is None:
            if training.x_p == 0:
                return np.inf
            return abs(training.x_p) ** 2 / training.geometry.N
        return self.gamma_pilot * self.noise_var

    @property
    def mse_gate(self) -> float:
        return self.gamma * self.noise_var


@dataclass(frozen=True)
class PathEstimate:
    l: int
    k: int
    h: complex
    source: str = STAGE2


class OpCounter(Counter):
    """Complex multiplication tally, keyed by processing step."""

    @property
    def total(self) -> int:
        return sum(self.values())


@dataclass
class Stage1Result:
    Y: np.ndarray = field(repr=False)
    paths: list[PathEstimate]
    aliased: list[int]
    dopplers: dict[int, list[int]]
    residual: list[int]
    power: dict[int, float]
    power_wo_pilot: dict[int, float]
    dropped: list[int] = field(default_factory=list)


@dataclass
class CorrelationTable:
    """Chirp correlations for one aliased delay.

    Indices are 0-based: ``C[beta, lam]`` pairs block ``blocks[beta]`` with
    Doppler ``dopplers[lam]``.
    """

    ell: int
    blocks: list[int]
    dopplers: list[int]
    C: np.ndarray
    M: int

    @property
    def delays(self) -> list[int]:
        return [self.ell + b * self.M for b in self.blocks]

    @property
    def winners(self) -> np.ndarray:
        if self.C.size == 0:
            return np.zeros(len(self.blocks), dtype=int)
        return np.argmax(np.abs(self.C), axis=1)

    @property
    def best(self) -> np.ndarray:
        if self.C.size == 0:
            return np.zeros(len(self.blocks), dtype=complex)
        return self.C[np.arange(len(self.blocks)), self.winners]

    @property
    def selected(self) -> list[int]:
        n = min(len(self.dopplers), len(self.blocks))
        order = np.argsort(-np.abs(self.best), kind="stable")
        return sorted(int(b) for b in order[:n])

    def pair(self, beta: int) -> tuple[int, int]:
        return self.delays[beta], self.dopplers[int(self.winners[beta])]


@dataclass
class Estimate:
    paths: list[PathEstimate]
    mse: float
    stage1: Stage1Result
    blocks: list[int]
    tables: list[CorrelationTable]
    mse_trace: list[float]
    refine1_invoked: bool = False
    refine2_invoked: bool = False
    refine1_applied: bool = False
    refine2_applied: bool = False
    ops: OpCounter = field(default_factory=OpCounter)
    notes: list[str] = field(default_factory=list)


def _log2(n: int) -> float:
    return float(np.log2(n))


def stage1(Y: np.ndarray, training: TrainingFrame, cfg: EstimatorConfig, ops: OpCounter | None = None) -> Stage1Result:
    """Embedded-pilot detection with adaptive per-row thresholds."""
    M, N = Y.shape
    A = training.chirp.A
    x_p = training.x_p
    pw = np.abs(Y) ** 2
    if ops is not None:
        ops["stage1_power"] += M * N
    P = pw.mean(axis=1)
    detect = cfg.delta * (2 * A**2 / N + cfg.noise_var)

    res = Stage1Result(Y, [], [], {}, [], {}, {})
    for ell in range(M):
        if P[ell] < detect:
            continue
        ks = [int(k) for k in np.flatnonzero(pw[ell] > cfg.alpha * P[ell])]
        if not ks:
            log.debug("row %d passed detection but no Doppler bin cleared the threshold", ell)
            res.dropped.append(ell)
            continue
        res.aliased.append(ell)
        res.dopplers[ell] = ks
        res.power[ell] = float(P[ell])

    for ell in res.aliased:
        ks = res.dopplers[ell]
        if len(ks) < N:
            pp = (N * P[ell] - pw[ell, ks].sum()) / (N - len(ks))
        else:
            pp = np.inf
        res.power_wo_pilot[ell] = float(pp)
        if pp <= cfg.alpha_prime * cfg.noise_var and x_p != 0:
            for k in ks:
                res.paths.append(PathEstimate(ell, k, complex(Y[ell, k] / x_p), STAGE1))
        else:
            res.residual.append(ell)
    return res


def isolate_chirp(r_t: np.ndarray, cut: float) -> np.ndarray:
    """Zero every sample whose instantaneous power exceeds ``cut``."""
    r = np.asarray(r_t, dtype=complex)
    return np.where(np.abs(r) ** 2 > cut, 0, r)


def cross_correlation(r_c: np.ndarray, template: np.ndarray, q_max: int) -> np.ndarray:
    """``R[q] = sum_q' r_c[q + q'] conj(template[q'])`` for ``q`` in ``[0, q_max]``."""
    r_c = np.asarray(r_c, dtype=complex)
    nz = np.flatnonzero(template)
    t = template[: nz[-1] + 1] if nz.size else template[:1]
    seg = r_c[: q_max + t.size]
    n = 1 << int(np.ceil(np.log2(max(seg.size, 2))))
    R = np.fft.ifft(np.fft.fft(seg, n) * np.conj(np.fft.fft(t, n)))
    return R[: q_max + 1]


def block_candidates(
    r_c: np.ndarray,
    template: np.ndarray,
    l_max: int,
    threshold: float,
    M: int,
    ops: OpCounter | None = None,
) -> tuple[list[int], np.ndarray]:
    """Blocks ``floor(q/M)`` of every lag up to ``l_max`` whose correlation clears ``threshold``.

    Returns ``(blocks, R)``.
    """
    R = cross_correlation(r_c, template, l_max)
    if ops is not None:
        support = np.count_nonzero(template)
        ops["correlation"] += int(np.minimum(support, r_c.size - np.arange(l_max + 1)).sum())
    Q = np.flatnonzero(np.abs(R) >= threshold)
    return sorted({int(q) // M for q in Q}), R


def _corr_at(r_c: np.ndarray, template: np.ndarray, lag: int) -> complex:
    seg = r_c[lag : lag + template.size]
    return complex(np.vdot(template[: seg.size], seg))


def gain_td(
    r_t: np.ndarray,
    s_t: np.ndarray,
    prefix,
    l: int,
    k: int,
    paper_phase: bool = False,
) -> complex:
    """Time-domain gain of a path at delay ``l`` after cancelling earlier paths.

    ``prefix`` holds every already-estimated path; only those with delay
    below ``l`` contribute.
    """
    MN = s_t.size
    if s_t[0] == 0:
        raise ValueError("training signal starts with a zero sample; gain is unobservable")
    acc = complex(r_t[l])
    for p in prefix:
        if p.l < l:
            d = l - p.l
            acc -= p.h * np.exp(2j * np.pi * p.k * d / MN) * s_t[d]
    den = s_t[0] * (np.exp(2j * np.pi * k / MN) if paper_phase else 1.0)
    return acc / den


def regain(paths: list[PathEstimate], r_t, s_t, paper_phase=False, ops: OpCounter | None = None) -> list[PathEstimate]:
    """Re-estimate every non-stage-1 gain in ascending delay order."""
    out: list[PathEstimate] = []
    for p in sorted(paths, key=lambda p: p.l):
        if p.source != STAGE1:
            h = gain_td(r_t, s_t, out, p.l, p.k, paper_phase)
            if ops is not None:
                ops["gain"] += 2 * sum(1 for q in out if q.l < p.l) + 1
            p = replace(p, h=h)
        out.append(p)
    return out


def reconstruction_mse(r_t, s_t, paths, ops: OpCounter | None = None) -> float:
    r_hat = apply_channel(s_t, paths)
    if ops is not None:
        ops["mse"] += 3 * s_t.size * len(paths) + s_t.size
    return float(np.sum(np.abs(r_t - r_hat) ** 2) / s_t.size)


def correlation_table(
    r_c: np.ndarray,
    ell: int,
    blocks: list[int],
    dopplers: list[int],
    training: TrainingFrame,
    l_max: int,
    ops: OpCounter | None = None,
) -> CorrelationTable:
    g = training.geometry
    usable = [b for b in blocks if ell + b * g.M <= l_max]
    C = np.zeros((len(usable), len(dopplers)), dtype=complex)
    for lam, k in enumerate(dopplers):
        tmpl = dual_chirp(0, k, training.chirp, g)[: g.M]
        for beta, b in enumerate(usable):
            C[beta, lam] = _corr_at(r_c, tmpl, ell + b * g.M)
    if ops is not None:
        ops["table"] += g.M * C.size
    return CorrelationTable(ell, usable, list(dopplers), C, g.M)


def stage2_chirpcorr(
    r_t: np.ndarray,
    training: TrainingFrame,
    s1: Stage1Result,
    cfg: EstimatorConfig,
    ops: OpCounter | None = None,
    notes: list[str] | None = None,
):
    """Chirp-correlation stage.

    Returns ``(paths, mse, blocks, tables)``. Delay/Doppler pairs for all
    aliased delays are fixed first; gains are then estimated in ascending
    delay order so every path sees all earlier paths cancelled.
    """
    notes = [] if notes is None else notes
    g = training.geometry
    s_t = training.time_signal
    r_c = isolate_chirp(r_t, cfg.pilot_cut(training))
    blocks, _ = block_candidates(r_c, training.template, cfg.l_max, cfg.gamma_corr, g.M, ops)

    paths = list(s1.paths)
    tables: list[CorrelationTable] = []
    if s1.residual and not blocks:
        notes.append("correlation threshold too high: no candidate block")
    elif s1.residual:
        for ell in s1.residual:
            table = correlation_table(r_c, ell, blocks, s1.dopplers[ell], training, cfg.l_max, ops)
            tables.append(table)
            if len(table.blocks) < len(table.dopplers):
                notes.append(f"row {ell}: {len(table.blocks)} blocks for {len(table.dopplers)} Dopplers")
            for beta in table.selected:
                l, k = table.pair(beta)
                paths.append(PathEstimate(l, k, 0j, STAGE2))
    paths = regain(paths, r_t, s_t, cfg.paper_phase, ops)
    mse = reconstruction_mse(r_t, s_t, paths, ops)
    return paths, mse, blocks, tables


def near_tie(c_ref: complex, c: complex, eps1: float, metric: str = "magnitude") -> bool:
    """Relative closeness of two correlation values.

    ``"magnitude"`` compares ``|c|`` with ``|c_ref|``; ``"complex"`` uses the
    complex difference, which also penalizes the (random) path phase.
    """
    if abs(c_ref) == 0:
        return False
    diff = abs(abs(c_ref) - abs(c)) if metric == "magnitude" else abs(c_ref - c)
    return diff / abs(c_ref) <= eps1


def refine1(mse: float, r_t, s_t, table: CorrelationTable, paths: list[PathEstimate], cfg: EstimatorConfig, ops=None):
    """Re-pair Dopplers with the selected delays of one aliased row.

    Returns ``(mse, paths, changed)``.
    """
    sel = table.selected
    win = table.winners
    trigger = any(
        near_tie(table.C[b, win[b]], table.C[b, lam], cfg.eps1, cfg.tie_metric)
        for b in sel
        for lam in range(len(table.dopplers))
        if lam != win[b]
    )
    if not trigger:
        return mse, paths, False

    l_p = [table.delays[b] for b in sel]
    best_mse, best_paths = mse, paths
    for perm in itertools.permutations(table.dopplers, len(l_p)):
        assign = dict(zip(l_p, perm))
        trial = [replace(p, k=assign[p.l]) if p.l in assign else p for p in paths]
        trial = regain(trial, r_t, s_t, cfg.paper_phase, ops)
        e = reconstruction_mse(r_t, s_t, trial, ops)
        if e < best_mse:
            best_mse, best_paths = e, trial
    return best_mse, best_paths, best_paths is not paths


def refine2(mse: float, r_t, s_t, table: CorrelationTable, paths: list[PathEstimate], cfg: EstimatorConfig, ops=None):
    """Try adding unselected blocks whose correlation nearly ties a selected same-Doppler block.

    Returns ``(mse, paths, changed)``.
    """
    sel = table.selected
    win = table.winners
    changed = False
    for beta in range(len(table.blocks)):
        if beta in sel:
            continue
        l_new, k_new = table.pair(beta)
        if any(p.l == l_new for p in paths):
            continue
        current = {p.l: p.k for p in paths}
        for bstar in sel:
            if current.get(table.delays[bstar]) != k_new:
                continue
            if not near_tie(table.C[bstar, win[bstar]], table.C[beta, win[beta]], cfg.eps1, cfg.tie_metric):
                continue
            trial = regain(paths + [PathEstimate(l_new, k_new, 0j, REFINE2)], r_t, s_t, cfg.paper_phase, ops)
            e = reconstruction_mse(r_t, s_t, trial, ops)
            if e < mse:
                mse, paths, changed = e, trial, True
            break
    return mse, paths, changed


def estimate(r_t: np.ndarray, training: TrainingFrame, cfg: EstimatorConfig) -> Estimate:
    """Full two-stage estimation of one received training frame."""
    g = training.geometry
    s_t = training.time_signal
    r_t = np.asarray(r_t, dtype=complex)
    if r_t.size != g.MN:
        raise ValueError(f"received frame has {r_t.size} samples, expected {g.MN}")
    ops = OpCounter()
    notes: list[str] = []

    Y = dzt(r_t, g.M)
    ops["dzt"] += int(g.MN * _log2(g.N))
    s1 = stage1(Y, training, cfg, ops)
    if s1.dropped:
        notes.append(f"rows {s1.dropped} detected without Doppler peaks")

    if s1.residual:
        paths, mse, blocks, tables = stage2_chirpcorr(r_t, training, s1, cfg, ops, notes)
    else:
        paths = list(s1.paths)
        mse = reconstruction_mse(r_t, s_t, paths, ops)
        blocks, tables = [], []
    est = Estimate(paths, mse, s1, blocks, tables, [mse], ops=ops, notes=notes)

    if cfg.refine and tables:
        if est.mse >= cfg.mse_gate:
            for table in tables:
                if len(table.dopplers) > 1:
                    est.refine1_invoked = True
                    est.mse, est.paths, changed = refine1(est.mse, r_t, s_t, table, est.paths, cfg, ops)
                    est.refine1_applied |= changed
            est.mse_trace.append(est.mse)
        if est.mse >= cfg.mse_gate:
            est.refine2_invoked = True
            for table in tables:
                est.mse, est.paths, changed = refine2(est.mse, r_t, s_t, table, est.paths, cfg, ops)
                est.refine2_applied |= changed
            est.mse_trace.append(est.mse)

    est.paths.sort(key=lambda p: p.l)
    return est


def aliased_only(s1: Stage1Result, x_p: complex) -> list[PathEstimate]:
    """Treat every detected pilot echo as an underspread path (the classic embedded-pilot estimate)."""
    if x_p == 0:
        return []
    return [
        PathEstimate(ell, k, complex(s1.Y[ell, k] / x_p), STAGE1)
        for ell in s1.aliased
        for k in s1.dopplers[ell]
    ]


def complexity_envelope(g: FrameGeometry, est: Estimate, l_max: int) -> float:
    """``MN (log2 N + |B| max|K| |J| + l_max)``."""
    J = len(est.stage1.residual)
    kmax = max((len(est.stage1.dopplers[e]) for e in est.stage1.residual), default=0)
    return g.MN * (_log2(g.N) + len(est.blocks) * kmax * J + l_max)
