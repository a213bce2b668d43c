"""Command line: ``bsdbnet {train,enhance,profile,probe-causality}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .complexity import complexity_report
from .config import RUN_DIR_ENV, ConfigError, load_run_config
from .dsp import AudioFormatError, Waveform, read_wav, write_wav
from .metrics import causality_probe
from .model import NAMED_CONFIGS, CheckpointError, build_model, load_checkpoint, named_config
from .pipeline import enhance_waveform
from .training import TrainingDivergedError, train

log = logging.getLogger("bsdbnet")

EXIT_FAIL = 1
EXIT_USAGE = 2


def _fail(msg: str, code: int = EXIT_USAGE) -> int:
    print(f"bsdbnet: error: {msg}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    try:
        run = load_run_config(args.config)
        train_set, val_set = run.data.datasets()
    except (ConfigError, FileNotFoundError, AudioFormatError) as exc:
        return _fail(str(exc))
    if not args.resume and (run.run_dir / "last.ckpt").exists():
        return _fail(f"{run.run_dir} already holds a run; pass --resume or choose another run_dir")
    try:
        result = train(run.model, run.optim, train_set, val_set, run.loss, run_dir=run.run_dir,
                       segment_seconds=run.data.segment_seconds, resume=args.resume)
    except TrainingDivergedError as exc:
        return _fail(str(exc), EXIT_FAIL)
    last = result.history[-1] if result.history else None
    print(f"run directory: {run.run_dir}")
    if last is not None:
        print(f"steps: {last.step}  final train loss: {last.train_loss:.4g}  "
              f"best val loss: {result.best_val:.4g}  lr: {last.lr:.3g}")
    return 0


def cmd_enhance(args) -> int:
    out = Path(args.out)
    if out.resolve() == Path(args.input).resolve():
        return _fail("refusing to overwrite the input file")
    try:
        wav = read_wav(args.input)
        model, _ = load_checkpoint(args.checkpoint)
    except (AudioFormatError, CheckpointError) as exc:
        return _fail(str(exc))
    except (OSError, EOFError) as exc:
        return _fail(f"cannot read input: {exc}")
    torch.manual_seed(args.seed)
    y = enhance_waveform(model, wav.samples, identity_mask=args.identity_mask)
    peak = float(np.max(np.abs(y))) if len(y) else 0.0
    if peak > 1.0:
        log.warning("enhanced signal peaks at %.2f and will be clipped", peak)
    write_wav(out, Waveform(y, wav.sample_rate))
    print(f"wrote {out} ({len(y)} samples)")
    return 0


def _expand_names(names):
    out = []
    for name in names:
        if name == "all":
            out.extend(NAMED_CONFIGS)
        elif name in NAMED_CONFIGS or name == "micro":
            out.append(name)
        else:
            raise ValueError(f"unknown config {name!r}; valid names: all, micro, {', '.join(NAMED_CONFIGS)}")
    return out


def cmd_profile(args, parser) -> int:
    if not args.names:
        parser.print_usage(sys.stderr)
        return _fail("give one or more config names, or 'all'")
    try:
        names = _expand_names(args.names)
    except ValueError as exc:
        return _fail(str(exc))
    report = complexity_report(names)
    print(report.to_csv() if args.csv else report.to_text())
    if args.check:
        failures = report.check()
        for msg in failures:
            print(f"CHECK FAILED: {msg}", file=sys.stderr)
        if failures:
            return EXIT_FAIL
        print("check: all complexity targets met")
    return 0


def cmd_probe(args) -> int:
    try:
        if args.checkpoint:
            model, _ = load_checkpoint(args.checkpoint)
        else:
            model = build_model(named_config(args.config), seed=args.seed)
    except (CheckpointError, ValueError) as exc:
        return _fail(str(exc))
    violation = causality_probe(model, trials=args.trials, n_frames=args.frames, seed=args.seed)
    ok = violation < args.tolerance
    print(f"max violation over {args.trials} trials: {violation:.3e} "
          f"({'causal' if ok else 'NOT causal'}, tolerance {args.tolerance:g})")
    return 0 if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsdbnet", description="Band-split dual-branch speech enhancement.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    t = sub.add_parser("train", help="train from a YAML run config",
                       description=f"Train from a YAML run config. Without run_dir in the file, "
                                   f"runs go to ${RUN_DIR_ENV}/<config stem> (default ./runs).")
    t.add_argument("config", help="YAML run configuration")
    t.add_argument("--resume", action="store_true", help="continue from run_dir/last.ckpt")

    e = sub.add_parser("enhance", help="enhance a 16 kHz mono WAV file")
    e.add_argument("input", help="noisy 16 kHz mono 16-bit WAV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True, help="output WAV path")
    e.add_argument("--identity-mask", action="store_true", help="bypass the network mask (debugging)")
    e.add_argument("--seed", type=int, default=0)

    pr = sub.add_parser("profile", help="parameter and MAC counts")
    pr.add_argument("names", nargs="*", help="config names or 'all'")
    pr.add_argument("--check", action="store_true", help="exit nonzero unless the complexity targets are met")
    pr.add_argument("--csv", action="store_true", help="comma-separated output")

    c = sub.add_parser("probe-causality", help="check that future frames never affect past output")
    c.add_argument("--config", default="64-4")
    c.add_argument("--checkpoint", help="probe a trained model instead of a fresh one")
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--frames", type=int, default=24)
    c.add_argument("--tolerance", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train":
        return cmd_train(args)
    if args.command == "enhance":
        return cmd_enhance(args)
    if args.command == "profile":
        return cmd_profile(args, parser)
    if args.command == "probe-causality":
        return cmd_probe(args)
    parser.print_usage(sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
