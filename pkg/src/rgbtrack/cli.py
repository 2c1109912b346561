"""Command-line entry point: train, track, eval, synth, ablate.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import traceback
from pathlib import Path

import numpy as np

from . import ablation, data, metrics, tracker, trainer
from .config import RunConfig, dump_config, load_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rgbtrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="{train,track,eval,synth,ablate}")

    def common(p):
        p.add_argument("--config", type=Path, help="YAML run config (defaults apply otherwise)")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--preset", choices=("toy", "paper-scale"), help="network size preset")
        p.add_argument("--variant", choices=ablation.VARIANTS, help="network wiring")
        p.add_argument("--mode", choices=("gtot", "rgbt234"), help="PR operating point (5 px / 20 px)")
        p.add_argument("--dump-config", type=Path, help="write the effective config and continue")

    p = sub.add_parser("train", help="offline multi-domain training")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset dir of sequence subdirs")
    p.add_argument("--out", type=Path, required=True, help="checkpoint file (.npz)")
    p.add_argument("--trace", type=Path, help="loss trace CSV")

    p = sub.add_parser("track", help="run the online tracker on one sequence")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--seq", type=Path, required=True, help="sequence dir")
    p.add_argument("--out", type=Path, required=True, help="results file (x,y,w,h per line)")
    p.add_argument("--attention-log", type=Path, help="per-frame attention CSV")

    p = sub.add_parser("eval", help="precision/success evaluation")
    common(p)
    p.add_argument("--results", type=Path, required=True, help="dir of <sequence>.txt files")
    p.add_argument("--data", type=Path, required=True, help="dataset dir")
    p.add_argument("--out", type=Path, required=True, help="report output dir")
    p.add_argument("--plot", action="store_true", help="also write PNG curves (needs matplotlib)")
    p.add_argument("--per-sequence-mean", action="store_true",
                   help="aggregate by per-sequence averaging instead of frame pooling")

    p = sub.add_parser("synth", help="generate a synthetic RGBT sequence (or dataset)")
    common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=None,
                   help="emit N sequences (seed, seed+1, ...) as subdirs of --out")

    p = sub.add_parser("ablate", help="train+track+eval every variant on a synthetic suite")
    common(p)
    p.add_argument("--variants", default=",".join(ablation.VARIANTS),
                   help="comma-separated subset of " + ",".join(ablation.VARIANTS))
    p.add_argument("--out", type=Path, required=True, help="output dir (comparison.csv inside)")
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(seed=args.seed, preset=args.preset, variant=args.variant, mode=args.mode)
    if args.dump_config:
        dump_config(cfg, args.dump_config)
    return cfg


def _load_dataset(dataset_dir) -> list[data.RGBTSequence]:
    return [data.load_sequence(d) for d in data.list_sequence_dirs(dataset_dir)]


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    dataset = _load_dataset(args.data)
    model_cfg = cfg.model_config()
    params, trace = trainer.train_offline(dataset, cfg.train, model_cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(args.out, params, model_cfg)
    if args.trace:
        trainer.write_trace(args.trace, trace)
    print(f"trained {len(dataset)} domains for {len(trace)} iterations -> {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = _load_run_config(args)
    model_cfg = cfg.model_config()
    params = trainer.load_checkpoint(args.checkpoint, model_cfg)
    seq = data.load_sequence(args.seq)
    boxes, att_rows, _ = tracker.track_sequence(seq, params, model_cfg, cfg.online)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    tracker.write_results(args.out, boxes)
    if args.attention_log and att_rows:
        tracker.write_attention_log(args.attention_log, att_rows)
    print(f"tracked {len(seq)} frames of {seq.name} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    report = metrics.evaluate_dirs(args.results, args.data, cfg.mode,
                                   frame_weighted=not args.per_sequence_mean)
    metrics.write_report_csv(report, args.out)
    if args.plot:
        metrics.plot_report(report, args.out)
    print(f"PR@{report.pr_threshold:g}px = {report.pr:.4f}  SR = {report.sr:.4f} "
          f"({len(report.sequences)} sequences) -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    if args.count is None:
        seq = data.generate_synthetic(cfg.synth)
        data.write_sequence(seq, args.out)
        print(f"wrote {len(seq)} frames to {args.out}")
    else:
        for i in range(args.count):
            scfg = dataclasses.replace(cfg.synth, seed=cfg.synth.seed + i)
            seq = data.generate_synthetic(scfg)
            data.write_sequence(seq, Path(args.out) / seq.name)
        print(f"wrote {args.count} sequences to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in ablation.VARIANT_TABLE:
            raise UsageError(f"unknown variant {v!r}; valid: {', '.join(ablation.VARIANTS)}")
    base = cfg.model_config()
    train_seqs = [
        data.generate_synthetic(dataclasses.replace(cfg.synth, seed=cfg.synth.seed + i))
        for i in range(2)
    ]
    test_seq = data.generate_synthetic(dataclasses.replace(cfg.synth, seed=cfg.synth.seed + 100))
    results = ablation.run_ablation(
        variants, base, train_seqs, test_seq, cfg.train, cfg.online,
        out_csv=Path(args.out) / "comparison.csv", mode=cfg.mode,
    )
    for r in results:
        print(f"{r.variant:6s} pr={r.pr:.3f} sr={r.sr:.3f} mean_iou={r.mean_iou:.3f} params={r.n_params}")
    print(f"comparison table -> {Path(args.out) / 'comparison.csv'}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except Exception as e:  # runtime failure with module context
        tb = traceback.extract_tb(sys.exc_info()[2])
        where = next((f"rgbtrack.{Path(fr.filename).stem}" for fr in reversed(tb)
                      if "rgbtrack" in fr.filename), "rgbtrack")
        print(f"error [{where}]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
