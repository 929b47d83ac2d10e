"""Seeded Monte-Carlo runs for NMSE, BER and refinement statistics.

Randomness is drawn from ``SeedSequence(seed, spawn_key=key)`` with a
fixed key per purpose, so every trial is reproducible on its own and the
aggregate does not depend on how many worker processes run it:

* channel of trial ``t``: ``(0, t)`` (shared across sweep points)
* training-frame noise at sweep point ``i``: ``(1, i, t)``
* data bits / data noise at sweep point ``i``: ``(2, i, t)`` / ``(3, i, t)``
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import (
    PROFILES,
    ChannelRealization,
    _tap_tables,
    apply_channel,
    dt_channel_vectors,
    etu_delays_samples,
    fractional_taps,
    generate_channel,
    path_triples,
    profile_powers,
)
from .detector import DetectorConfig, dt_rows, mrc_detect, rzp_modulate
from .estimator import EstimatorConfig, aliased_only, estimate
from .otfs_core import FrameGeometry, QamConstellation
from .training import training_from_snr

log = logging.getLogger(__name__)

CSV_HEADER = ["sweep_db", "metric", "value", "trials", "errors", "seed"]
CSI_MODES = ("estimated", "perfect", "aliased-only")
NMSE_MODES = ("union", "paper")


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class ExperimentConfig:
    profile: str = "A"
    M: int = 512
    N: int = 128
    l_max: int | None = None
    L: int | None = None
    gain_model: str = "phase"
    snr_p_db: list[float] = field(default_factory=lambda: [15.0, 20.0, 25.0, 30.0, 35.0])
    snr_c_db: float = 23.0
    snr_d_db: list[float] = field(default_factory=lambda: [10.0, 12.0, 14.0, 16.0])
    snr_p_fixed_db: float = 30.0
    trials: int = 200
    max_frames: int = 50
    min_errors: int = 200
    ber_stop_below: float = 0.0
    qam_order: int = 4
    seed: int = 2024
    workers: int = 1
    csi_mode: str = "estimated"
    nmse_mode: str = "union"
    fractional: bool = False
    frac_eps: float = 0.02
    estimator: dict = field(default_factory=dict)
    detector: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.csi_mode not in CSI_MODES:
            raise ValueError(f"csi_mode must be one of {CSI_MODES}")
        if self.nmse_mode not in NMSE_MODES:
            raise ValueError(f"nmse_mode must be one of {NMSE_MODES}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def channel_profile(self):
        return PROFILES[self.profile]

    @property
    def geometry(self) -> FrameGeometry:
        return self.channel_profile.geometry(self.M, self.N)

    @property
    def resolved_l_max(self) -> int:
        return self.channel_profile.l_max if self.l_max is None else self.l_max

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(noise_var=1.0, l_max=self.resolved_l_max, **self.estimator)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(**self.detector)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsRow:
    sweep_db: float
    metric: str
    value: float
    trials: int
    errors: int
    seed: int
    wall_time: float = 0.0
    low_confidence: bool = False

    def csv_row(self) -> list:
        return [f"{self.sweep_db:g}", self.metric, repr(float(self.value)), self.trials, self.errors, self.seed]


def nmse_from_vectors(truth: dict, est: dict, mode: str = "union") -> float:
    """NMSE between delay -> (M x N) DT channel vector maps."""
    den = sum(float(np.sum(np.abs(v) ** 2)) for v in truth.values())
    if den == 0:
        raise ValueError("NMSE undefined for an empty true channel")
    num = 0.0
    for d, v in truth.items():
        e = est.get(d)
        num += float(np.sum(np.abs(v - e) ** 2)) if e is not None else float(np.sum(np.abs(v) ** 2))
    if mode == "union":
        for d, e in est.items():
            if d not in truth:
                num += float(np.sum(np.abs(e) ** 2))
    elif mode != "paper":
        raise ValueError(f"unknown NMSE mode {mode!r}")
    return num / den


def nmse(truth, estimate_paths, geometry: FrameGeometry, mode: str = "union") -> float:
    """NMSE of estimated paths against a true realization (or a tap channel)."""
    if hasattr(truth, "dt_vectors"):
        tv = truth.dt_vectors()
    else:
        tv = dt_channel_vectors(truth, geometry)
    ev = dt_channel_vectors(estimate_paths, geometry) if estimate_paths else {}
    return nmse_from_vectors(tv, ev, mode)


def support(paths) -> set[tuple[int, int]]:
    return {(l, k) for _, l, k in path_triples(paths)}


def _fractional_channel(cfg: ExperimentConfig, rng):
    """ETU channel with unrounded delays, sampled on the dominant sinc taps."""
    if cfg.channel_profile.delay_profile != "ETU":
        raise ValueError("fractional runs need a profile with tabulated (ETU) delays")
    g = cfg.geometry
    ch = generate_channel(cfg.channel_profile, g, cfg.l_max, cfg.L, rng, cfg.gain_model)
    order = np.argsort(etu_delays_samples(g)[: len(ch)])
    real = np.asarray(_tap_tables()["ETU"]["delays_ns"][: len(ch)])[order] * 1e-9 * g.bandwidth
    signed = np.array([g.signed_doppler(k) for k in ch.dopplers])
    return fractional_taps(real, ch.gains, signed, cfg.frac_eps, g)


def _nmse_trial(args):
    cfg, i, snr_p, t = args
    g = cfg.geometry
    if cfg.fractional:
        truth = _fractional_channel(cfg, trial_rng(cfg.seed, 0, t))
        channel_fn = lambda s, rng: truth.apply(s, 1.0, rng)  # noqa: E731
    else:
        truth = generate_channel(
            cfg.channel_profile, g, cfg.l_max, cfg.L, trial_rng(cfg.seed, 0, t), cfg.gain_model
        )
        channel_fn = lambda s, rng: apply_channel(s, truth, 1.0, rng)  # noqa: E731
    tr = training_from_snr(snr_p, cfg.snr_c_db, g)
    r = channel_fn(tr.time_signal, trial_rng(cfg.seed, 1, i, t))
    est = estimate(r, tr, cfg.estimator_config())
    base = aliased_only(est.stage1, tr.x_p)
    exact = (not cfg.fractional) and support(est.paths) == support(truth)
    return {
        "nmse": nmse(truth, est.paths, g, cfg.nmse_mode),
        "nmse_aliased": nmse(truth, base, g, cfg.nmse_mode),
        "exact": exact,
        "refine1": est.refine1_invoked,
        "refine2": est.refine2_invoked,
        "refine1_applied": est.refine1_applied,
        "refine2_applied": est.refine2_applied,
    }


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_nmse_sweep(cfg: ExperimentConfig, trial_log: list | None = None) -> list[MetricsRow]:
    """Mean NMSE (linear) per pilot SNR, for the two-stage estimator and the aliased-only baseline."""
    rows = []
    for i, snr_p in enumerate(cfg.snr_p_db):
        t0 = time.perf_counter()
        res = _map(_nmse_trial, [(cfg, i, snr_p, t) for t in range(cfg.trials)], cfg.workers)
        wall = time.perf_counter() - t0
        if trial_log is not None:
            trial_log.extend({"sweep_db": snr_p, "trial": t, "seed_key": f"{cfg.seed}/1/{i}/{t}", **r} for t, r in enumerate(res))
        misses = sum(not r["exact"] for r in res)
        for metric in ("nmse", "nmse_aliased"):
            rows.append(MetricsRow(snr_p, metric, float(np.mean([r[metric] for r in res])), cfg.trials, misses, cfg.seed, wall))
        log.info("SNR_p %.1f dB: NMSE %.3e (%d/%d trials with support mismatch)", snr_p, rows[-2].value, misses, cfg.trials)
    return rows


def run_refinement_census(cfg: ExperimentConfig) -> list[MetricsRow]:
    """Fraction of training frames on which each refinement is invoked, at ``snr_p_fixed_db``."""
    t0 = time.perf_counter()
    res = _map(_nmse_trial, [(cfg, 0, cfg.snr_p_fixed_db, t) for t in range(cfg.trials)], cfg.workers)
    wall = time.perf_counter() - t0
    rows = []
    for metric in ("refine1", "refine2", "refine1_applied", "refine2_applied"):
        count = sum(bool(r[metric]) for r in res)
        rows.append(MetricsRow(cfg.snr_p_fixed_db, f"{metric}_rate", count / cfg.trials, cfg.trials, count, cfg.seed, wall))
    return rows


def _ber_trial(args):
    cfg, i, snr_d, t = args
    g = cfg.geometry
    ch = generate_channel(cfg.channel_profile, g, cfg.l_max, cfg.L, trial_rng(cfg.seed, 0, t), cfg.gain_model)
    if cfg.csi_mode == "perfect":
        csi = ch
    else:
        tr = training_from_snr(cfg.snr_p_fixed_db, cfg.snr_c_db, g)
        r_t = apply_channel(tr.time_signal, ch, 1.0, trial_rng(cfg.seed, 1, 0, t))
        est = estimate(r_t, tr, cfg.estimator_config())
        csi = est.paths if cfg.csi_mode == "estimated" else aliased_only(est.stage1, tr.x_p)
    qam = QamConstellation(cfg.qam_order, 10 ** (snr_d / 10))
    bits = trial_rng(cfg.seed, 2, i, t).integers(0, 2, g.MN * qam.bits_per_symbol)
    X = qam.map(bits).reshape(g.M, g.N)
    r = apply_channel(rzp_modulate(X), ch, 1.0, trial_rng(cfg.seed, 3, i, t))
    if not path_triples(csi):
        return int(bits.size // 2), int(bits.size)
    det = mrc_detect(dt_rows(r, g.M), csi, g, qam, cfg.detector_config())
    return int(np.count_nonzero(det.bits != bits)), int(bits.size)


def run_ber_sweep(cfg: ExperimentConfig) -> list[MetricsRow]:
    """BER per data SNR; each point stops once ``min_errors`` bit errors are seen or ``max_frames`` run out.

    With ``ber_stop_below > 0`` the sweep ends after the first point whose
    BER falls below that level.
    """
    rows = []
    batch = max(1, cfg.workers)
    for i, snr_d in enumerate(cfg.snr_d_db):
        t0 = time.perf_counter()
        errors = nbits = frames = 0
        t = 0
        while frames < cfg.max_frames and errors < cfg.min_errors:
            jobs = [(cfg, i, snr_d, t + j) for j in range(min(batch, cfg.max_frames - frames))]
            for e, n in _map(_ber_trial, jobs, cfg.workers):
                if frames >= cfg.max_frames or errors >= cfg.min_errors:
                    break
                errors += e
                nbits += n
                frames += 1
            t += len(jobs)
        ber = errors / nbits
        row = MetricsRow(snr_d, "ber", ber, frames, errors, cfg.seed, time.perf_counter() - t0, errors < cfg.min_errors)
        if row.low_confidence:
            log.warning("SNR_d %.1f dB: only %d bit errors in %d frames", snr_d, errors, frames)
        rows.append(row)
        if ber < cfg.ber_stop_below:
            break
    return rows


def write_csv(rows: list[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.csv_row())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_svg(rows: list[MetricsRow], path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    for metric in dict.fromkeys(r.metric for r in rows):
        pts = [(r.sweep_db, r.value) for r in rows if r.metric == metric and r.value > 0]
        if pts:
            x, y = zip(*pts)
            ax.semilogy(x, y, marker="o", label=metric)
    ax.set_xlabel("SNR (dB)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def equal_power_check(profile: str, L: int = 9) -> np.ndarray:
    """Normalized per-path powers of a profile (diagnostic helper)."""
    p = profile_powers(PROFILES[profile].power_profile, L)
    return p / p.sum()


def crossing_snr(rows: list[MetricsRow], target: float, metric: str = "ber") -> float:
    """SNR where a log-scale metric curve crosses ``target`` (log-linear interpolation)."""
    pts = sorted((r.sweep_db, r.value) for r in rows if r.metric == metric)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if y0 >= target >= y1 and y0 > 0:
            if y1 <= 0:
                return x1
            f = (np.log10(y0) - np.log10(target)) / (np.log10(y0) - np.log10(y1))
            return x0 + f * (x1 - x0)
    return float("nan")


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


__all__ = [
    "CSV_HEADER",
    "ChannelRealization",
    "ExperimentConfig",
    "MetricsRow",
    "crossing_snr",
    "nmse",
    "nmse_from_vectors",
    "read_csv",
    "run_ber_sweep",
    "run_nmse_sweep",
    "run_refinement_census",
    "trial_rng",
    "with_overrides",
    "write_csv",
    "write_svg",
]
