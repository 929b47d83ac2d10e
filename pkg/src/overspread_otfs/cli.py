"""Command-line entry point: ``otfs-sim <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .channel import apply_channel, generate_channel
from .estimator import estimate
from .otfs_core import read_signal, write_signal
from .training import training_from_snr


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    return harness.with_overrides(
        cfg,
        trials=getattr(args, "trials", None),
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
        profile=getattr(args, "profile", None),
        csi_mode=getattr(args, "csi_mode", None),
        max_frames=getattr(args, "max_frames", None),
    )


def _emit(rows, args, title: str) -> None:
    harness.write_csv(rows, args.out)
    if args.svg:
        harness.write_svg(rows, args.svg, title)
    for r in rows:
        flag = "  (low confidence)" if r.low_confidence else ""
        print(f"{r.sweep_db:6g} dB  {r.metric:<22} {r.value:.4e}  trials={r.trials} errors={r.errors}{flag}")


def cmd_nmse(args) -> int:
    cfg = _load_config(args)
    trial_log = [] if args.trial_log else None
    rows = harness.run_nmse_sweep(cfg, trial_log)
    _emit(rows, args, f"NMSE, channel {cfg.profile}")
    if trial_log is not None:
        Path(args.trial_log).write_text("\n".join(json.dumps(t) for t in trial_log) + "\n")
    return 0


def cmd_ber(args) -> int:
    cfg = _load_config(args)
    rows = harness.run_ber_sweep(cfg)
    _emit(rows, args, f"BER, channel {cfg.profile}, {cfg.csi_mode} CSI")
    return 0


def cmd_census(args) -> int:
    cfg = _load_config(args)
    _emit(harness.run_refinement_census(cfg), args, f"Refinements, channel {cfg.profile}")
    return 0


def cmd_estimate_file(args) -> int:
    cfg = _load_config(args)
    r, M, N = read_signal(args.signal)
    g = cfg.geometry
    if (M, N) != (g.M, g.N):
        print(f"signal geometry {M}x{N} does not match config {g.M}x{g.N}", file=sys.stderr)
        return 2
    tr = training_from_snr(cfg.snr_p_fixed_db, cfg.snr_c_db, g)
    est = estimate(r, tr, cfg.estimator_config())
    out = {
        "paths": [
            {"l": p.l, "k": p.k, "re": p.h.real, "im": p.h.imag, "source": p.source} for p in est.paths
        ],
        "diagnostics": {
            "mse": est.mse,
            "aliased_delays": est.stage1.aliased,
            "stage1_residual_rows": est.stage1.residual,
            "blocks": est.blocks,
            "refine1_invoked": est.refine1_invoked,
            "refine2_invoked": est.refine2_invoked,
            "refine1_applied": est.refine1_applied,
            "refine2_applied": est.refine2_applied,
            "complex_mults": est.ops.total,
            "notes": est.notes,
        },
    }
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_gen_channel(args) -> int:
    cfg = _load_config(args)
    g = cfg.geometry
    rng = harness.trial_rng(cfg.seed, 0, args.trial)
    ch = generate_channel(cfg.channel_profile, g, cfg.l_max, cfg.L, rng, cfg.gain_model)
    ch.save(args.out)
    print(f"wrote {len(ch)} paths to {args.out}")
    if args.signal_out:
        tr = training_from_snr(cfg.snr_p_fixed_db, cfg.snr_c_db, g)
        noise = 0.0 if args.noiseless else 1.0
        r = apply_channel(tr.time_signal, ch, noise, harness.trial_rng(cfg.seed, 1, 0, args.trial))
        write_signal(args.signal_out, r, g.M, g.N)
        print(f"wrote received training frame to {args.signal_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otfs-sim", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--trials", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--profile", choices=sorted(harness.PROFILES))
        if out_required:
            sp.add_argument("--out", required=True, help="CSV output path")
            sp.add_argument("--svg", help="optional SVG plot path")

    sp = sub.add_parser("nmse-sweep", help="NMSE vs pilot SNR")
    common(sp)
    sp.add_argument("--trial-log", help="write per-trial JSON lines here")
    sp.set_defaults(func=cmd_nmse)

    sp = sub.add_parser("ber-sweep", help="BER vs data SNR")
    common(sp)
    sp.add_argument("--csi-mode", choices=harness.CSI_MODES)
    sp.add_argument("--max-frames", type=int)
    sp.set_defaults(func=cmd_ber)

    sp = sub.add_parser("refine-census", help="refinement invocation rates")
    common(sp)
    sp.set_defaults(func=cmd_census)

    sp = sub.add_parser("estimate-file", help="estimate paths from a received training frame")
    sp.add_argument("signal", help="binary time-signal file")
    sp.add_argument("--config", help="JSON experiment config (geometry, SNRs, thresholds)")
    sp.add_argument("--profile", choices=sorted(harness.PROFILES))
    sp.add_argument("--out", help="also write the JSON result here")
    sp.set_defaults(func=cmd_estimate_file)

    sp = sub.add_parser("gen-channel", help="draw a channel realization")
    sp.add_argument("--config", help="JSON experiment config")
    sp.add_argument("--profile", choices=sorted(harness.PROFILES))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--out", required=True, help="channel JSON output path")
    sp.add_argument("--signal-out", help="also write the received training frame")
    sp.add_argument("--noiseless", action="store_true")
    sp.set_defaults(func=cmd_gen_channel)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

