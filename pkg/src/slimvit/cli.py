"""Command-line shell: training, sweeps, probes, cost model, export.

Exit codes: 0 success, 1 usage, 2 validation failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from . import runner
from .config import load_run_config
from .harness import flops, params_count
from .metrics import format_ratio
from .slicing import ValidationError, as_ratio


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _ratio_list(text: str):
    return [as_ratio(part.strip()) for part in text.split(",") if part.strip()]


def _build_parser() -> _Parser:
    parser = _Parser(prog="slimvit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-teacher", help="phase-1 CE-only training of the full model")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("train", help="joint subnet training over the grid")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("sweep", help="evaluate a checkpoint at a list of ratios")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratios", help="comma-separated exact ratios; default: the grid")
    p.add_argument("--split", default="eval", choices=("train", "eval"))
    p.add_argument("--out", help="CSV output path")

    p = sub.add_parser("probe", help="interpolation/extrapolation probe at unseen ratios")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratios", required=True)
    p.add_argument("--split", default="eval", choices=("train", "eval"))
    p.add_argument("--out", help="CSV output path")

    p = sub.add_parser("flops", help="analytic multiply-accumulate and parameter counts")
    p.add_argument("--config", required=True)
    p.add_argument("--ratio", help="single ratio; default: every grid ratio")

    p = sub.add_parser("export-subnet", help="copy one width slice into a standalone checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratio", required=True)
    p.add_argument("--mode", choices=("leading", "trailing"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("regranularize", help="swap the grid step and continue training")
    p.add_argument("--config", required=True)
    p.add_argument("--step", required=True, help="new slicing granularity, e.g. 1/8")
    p.add_argument("--epochs", required=True, type=int)

    return parser


def _run(args) -> int:
    if args.command == "pretrain-teacher":
        path = runner.pretrain_teacher_run(load_run_config(args.config), resume=args.resume)
        print(f"teacher checkpoint written: {path}")
    elif args.command == "train":
        path = runner.train_run(load_run_config(args.config), resume=args.resume)
        print(f"checkpoint written: {path}")
    elif args.command == "sweep":
        run_cfg = load_run_config(args.config)
        ratios = _ratio_list(args.ratios) if args.ratios else None
        report = runner.sweep_checkpoint(args.checkpoint, run_cfg, ratios, split=args.split)
        for row in report.rows:
            print(f"ratio={format_ratio(row.ratio)} acc={row.accuracy:.4f} "
                  f"ce={row.ce:.4f} params={row.params} flops={row.flops}")
        if args.out:
            runner.write_sweep_csv(report, args.out)
            print(f"sweep written: {args.out}")
    elif args.command == "probe":
        run_cfg = load_run_config(args.config)
        rows = runner.probe_checkpoint(args.checkpoint, run_cfg,
                                       _ratio_list(args.ratios), split=args.split)
        for row in rows:
            kind = "inbound" if row.inbound else "outbound"
            print(f"ratio={format_ratio(row.ratio)} [{kind}] acc={row.accuracy:.4f} "
                  f"nearest={format_ratio(row.nearest_trained)} gap={row.gap:+.4f}")
        if args.out:
            runner.write_probe_csv(rows, args.out)
            print(f"probe written: {args.out}")
    elif args.command == "flops":
        run_cfg = load_run_config(args.config)
        ratios = [as_ratio(args.ratio)] if args.ratio else run_cfg.model.grid.ratios()
        for r in ratios:
            print(f"ratio={format_ratio(r)} flops={flops(run_cfg.model, r)} "
                  f"params={params_count(run_cfg.model, r)}")
    elif args.command == "export-subnet":
        path = runner.export_checkpoint(args.checkpoint, args.ratio, args.mode, args.out)
        print(f"subnet checkpoint written: {path}")
    elif args.command == "regranularize":
        run_cfg = load_run_config(args.config)
        path = runner.regranularize_run(run_cfg, as_ratio(args.step), args.epochs)
        print(f"checkpoint written: {path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _run(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
