"""Command-line entry point: ``sccsi {train,sweep,baseline,gen-data}``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..datagen import gen_dataset, write_dataset
from .checkpoint import load_model, save_model
from .config import EvalConfig, ExperimentConfig, from_dict, load_config
from .experiment import BaselineReceiver, UnfoldedReceiver, evaluate_point, sweep, train_model, write_csv

log = logging.getLogger("sccsi")


def parse_float_list(text: str) -> list[float]:
    """``"0:2:14"`` (inclusive start:step:stop) or ``"0.05,0.1"``."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"range must be start:step:stop, got {text!r}")
        start, step, stop = map(float, parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"empty or invalid range {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [float(v) for v in np.round(start + step * np.arange(count), 12)]
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)

    def report(stage, it, loss):
        if (it + 1) % 500 == 0:
            log.info("stage %d iter %5d loss %.5f", stage + 1, it + 1, loss)

    model = train_model(cfg, on_step=report)
    save_model(model, args.out)
    for st in model.train_meta["stages"]:
        if st["iters"]:
            print(f"{st['stage']}: loss {st['first_loss']:.4f} -> {st['final_loss']:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    model = load_model(args.model) if args.model else None
    if args.config:
        cfg = load_config(args.config)
    elif model is not None and "config" in model.train_meta:
        cfg = from_dict(model.train_meta["config"])
    elif model is not None:
        cfg = ExperimentConfig(link=model.link.with_(sigma2=0.0))
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    ev = cfg.to_dict()["eval"]
    for key, val in (("snr_db_list", args.snr), ("rho_list", args.rho),
                     ("max_samples", args.max_samples), ("min_bit_errors", args.min_bit_errors)):
        if val is not None:
            ev[key] = val
    cfg.eval = EvalConfig(**ev)

    methods = args.methods or (["unfolded", "baseline"] if model is not None else ["baseline"])
    receivers = []
    for m in methods:
        if m == "unfolded":
            if model is None:
                raise ValueError("method 'unfolded' needs --model")
            receivers.append(UnfoldedReceiver(model))
        elif m == "baseline":
            receivers.append(BaselineReceiver(cfg.eval.baseline_iters))
        else:
            raise ValueError(f"unknown method {m!r} (expected unfolded or baseline)")
    rows = sweep(receivers, cfg, workers=args.workers)
    write_csv(rows, args.out)
    for r in rows:
        print(f"{r.method:8s} snr={r.snr_db:5.1f} rho={r.rho:.2f} nmse={r.nmse:.4g} "
              f"ber={r.ber:.4g} frames={r.samples_used}")
    print(f"appended {len(rows)} rows to {args.out}")
    if args.plot:
        from .plots import plot_metrics
        plot_metrics(rows, args.plot)
        print(f"wrote {args.plot}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(args)
    rho = cfg.link.rho if args.rho is None else args.rho
    # fixed frame budget: disable the high-SNR error-counting rule
    ev = EvalConfig(snr_db_list=[args.snr], rho_list=[rho], max_samples=args.frames,
                    high_snr_threshold_db=math.inf, chunk_size=min(1000, args.frames))
    row = evaluate_point(BaselineReceiver(args.iters), cfg.link, args.snr, rho, ev, cfg.seed)
    print(f"baseline iters={args.iters} snr={args.snr:g} dB rho={rho:g} frames={row.samples_used}")
    print(f"NMSE {row.nmse:.6g}")
    print(f"BER  {row.ber:.6g} ({row.bit_errors} bit errors)")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    snr = cfg.train.snr_db if args.snr is None else args.snr
    count = cfg.train.samples if args.count is None else args.count
    ds = gen_dataset(count, cfg.link, snr, cfg.seed)
    write_dataset(ds, args.out)
    print(f"wrote {count} frames to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sccsi", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the unfolded receiver and write a checkpoint")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="Monte-Carlo NMSE/BER over SNR and rho; appends CSV rows")
    p.add_argument("--model", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--snr", type=parse_float_list, help="e.g. 0:2:14 or 0,5,10")
    p.add_argument("--rho", type=parse_float_list, help="e.g. 0.05,0.1,0.15,0.2")
    p.add_argument("--methods", type=lambda s: [m.strip() for m in s.split(",") if m.strip()],
                   help="comma list of unfolded, baseline")
    p.add_argument("--max-samples", type=int)
    p.add_argument("--min-bit-errors", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", type=Path, help="also write an SVG chart")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", help="print NMSE/BER of the iterative MMSE receiver")
    p.add_argument("--config", type=Path)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--frames", type=int, default=10_000)
    p.add_argument("--rho", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gen-data", help="export a dataset in the binary exchange format")
    p.add_argument("--config", type=Path)
    p.add_argument("--count", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"sccsi {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
