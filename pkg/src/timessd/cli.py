"""Command-line entry point: ``timessd <subcommand>``.

Machine-readable output (manifests, CSV tables, reports) goes to stdout;
progress and diagnostics go to stderr through :mod:`logging`.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, data, synthetic, verify
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, DivergenceError
from .model import TimeAwareSSDRec
from .trainer import evaluate, train

log = logging.getLogger("timessd")

ML1M_COUNTS = {"users": 6040, "items": 3416, "interactions": 999611}


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable; wins over --config)")
    p.add_argument("--print-config", action="store_true", help="print the merged configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="timessd", description="Time-aware SSD sequential recommender")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="ingest, k-core filter and split an event log")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="raw event file")
    src.add_argument("--synthetic", type=int, metavar="SEED", help="generate the time-gap synthetic log")
    p.add_argument("--format", default="ml-1m", help="ml-1m, csv or tsv preset (default ml-1m)")
    p.add_argument("--delimiter", help="override the preset delimiter")
    p.add_argument("--columns", type=_ints, help="user,item,time column indices")
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--k", type=int, default=5, help="k-core threshold (0 disables)")
    p.add_argument("--output", required=True, help="processed dataset directory")

    p = sub.add_parser("train", help="train a model on a processed dataset")
    _config_args(p)

    p = sub.add_parser("evaluate", help="rank held-out targets with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="processed dataset directory")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--ks", type=_ints, default=[10, 20, 50])
    p.add_argument("--mask-seen", action="store_true", help="exclude already-seen items from the ranking")
    p.add_argument("--output", help="also write metric,K,value rows to this file")

    p = sub.add_parser("bench", help="forward wall-clock timing of the kernels")
    p.add_argument("--T", dest="Ts", type=_ints, default=list(bench.DEFAULT_TS))
    p.add_argument("--dims", type=_ints, default=[16])
    p.add_argument("--kernels", default=",".join(bench.KERNELS))
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--state", type=int, default=8)
    p.add_argument("--chunk", type=int, default=64)

    p = sub.add_parser("verify", help="kernel parity, gradient and metric self-checks")
    p.add_argument("--quick", action="store_true", help="short sequences (T <= 64) and sampled coordinates")
    p.add_argument("--corrupt-rule", action="store_true", help="negative control: break the SiLU derivative")
    return ap


def cmd_prepare_data(args) -> int:
    if args.synthetic is not None:
        events = synthetic.generate(seed=args.synthetic)
    else:
        fmt = data.Format.preset(args.format)
        kw = {}
        if args.delimiter is not None:
            kw["delimiter"] = args.delimiter.encode().decode("unicode_escape")
        if args.columns is not None:
            if len(args.columns) != 3:
                raise ConfigError("--columns needs user,item,time")
            kw.update(user_col=args.columns[0], item_col=args.columns[1], time_col=args.columns[2])
        if args.skip_header:
            kw["skip_header"] = True
        fmt = data.Format(**{**fmt.__dict__, **kw})
        events = data.ingest(args.input, fmt)
        log.info("read %d events (%d rejected)", len(events), events.rejected)
    if args.k > 0:
        events = data.k_core_filter(events, args.k)
    ds = data.build_sequences(events, k=args.k)
    ds.save(args.output)
    sys.stdout.write(Path(args.output, "stats.txt").read_text(encoding="utf-8"))
    if args.input is not None and args.format == "ml-1m":
        stats = ds.stats()
        got = {k: stats[k] for k in ML1M_COUNTS}
        if got == ML1M_COUNTS:
            log.info("counts match the published MovieLens-1M statistics")
        else:
            log.warning("counts %s differ from published MovieLens-1M %s", got, ML1M_COUNTS)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.print_config:
        sys.stdout.write(cfg.dumps())
        return 0
    ds = data.SequenceDataset.load(cfg.data_dir)
    model = TimeAwareSSDRec(cfg.model_config(ds.n_items), seed=cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    result = train(model, ds, cfg.train_config(), out_dir=out, verbose=True)
    report = evaluate(model, ds, "test", batch=cfg.eval_batch, mask_seen=cfg.mask_seen)
    (out / "metrics.csv").write_text(report.csv(), encoding="utf-8")
    log.info("best epoch %d; test metrics:\n%s", result.best_epoch, report.table())
    sys.stdout.write(report.csv())
    return 0


def cmd_evaluate(args) -> int:
    model = TimeAwareSSDRec.load(args.checkpoint)
    ds = data.SequenceDataset.load(args.data)
    if ds.n_items != model.cfg.n_items:
        raise DataError(f"checkpoint expects {model.cfg.n_items} items, dataset has {ds.n_items}")
    report = evaluate(model, ds, args.split, ks=tuple(args.ks), mask_seen=args.mask_seen)
    print(report.table(), file=sys.stderr)
    sys.stdout.write(report.csv())
    if args.output:
        Path(args.output).write_text(report.csv(), encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    kernels = [k.strip() for k in args.kernels.split(",") if k.strip()]
    rows = bench.run_bench(args.Ts, args.dims, kernels, args.repeats, args.warmup,
                           args.heads, args.state, args.chunk)
    sys.stdout.write(bench.rows_csv(rows))
    sys.stdout.write("\n" + bench.slopes_csv(rows))
    if {"ssd", "tissd"} <= set(kernels):
        for d in args.dims:
            T = 2048 if 2048 in args.Ts else max(args.Ts)
            sys.stdout.write(f"\noverhead,T={T},dim={d},{bench.overhead(rows, T, d):.4f}\n")
    return 0


def cmd_verify(args) -> int:
    checks = verify.run_suite(quick=args.quick, corrupt_rule=args.corrupt_rule)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print("all checks passed")
    return 0


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ConfigError, DataError, DivergenceError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
