"""Command-line entry points: ``vie gen|stats|train|probe|retrieve|ablate|check``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .ablation import ablate
from .checkpoint import CheckpointError
from .config import TrainConfig
from .evaluation import embed_videos, evaluate, rank_gallery
from .synthetic import DatasetFormatError, SynthSpec, generate, read_dataset, write_dataset
from .training import TrainingDiverged, load_model, train, write_run

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("vie")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise UsageError(f"--set expects KEY=VALUE, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> TrainConfig:
    over = _overrides(args.set)
    for key in ("loss", "family", "seed", "epochs"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = str(val)
    try:
        if args.config:
            return TrainConfig.load(args.config, **over)
        return TrainConfig.from_mapping(over)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from exc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--loss", choices=["IR", "LA", "ir", "la"])
    p.add_argument("--family")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)


def cmd_gen(args) -> int:
    spec = SynthSpec(class_count=args.classes, videos_per_class=args.per_class, frame_count=args.frames,
                     height=args.size, width=args.size, label_mode=args.mode, noise=args.noise, seed=args.seed)
    ds = generate(spec)
    write_dataset(args.out, ds)
    print(ds.stats_text(), end="")
    return EXIT_OK


def cmd_stats(args) -> int:
    print(read_dataset(args.data).stats_text(), end="")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = read_dataset(args.data)
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg.save(run / "config.txt")
    try:
        result = train(cfg, ds, audit=args.audit)
    except TrainingDiverged as exc:
        (run / "diverged.log").write_text(f"{exc}\n{exc.record}\n")
        raise
    write_run(run, result)
    if args.dump_clusters and result.clusters is not None:
        (run / "clusters.txt").write_text(result.clusters.to_text())
    last = result.history[-1]["loss"] if result.history else float("nan")
    print(f"trained {cfg.family}/{cfg.loss} on {len(ds)} videos, final loss {last:.4f} -> {run}")
    return EXIT_OK


def _load(run_dir, ds):
    run = Path(run_dir)
    cfg = TrainConfig.load(run / "config.txt")
    model, _ = load_model(run / "checkpoint.bin", cfg, ds.videos[0].frame_shape)
    return cfg, model


def cmd_probe(args) -> int:
    ds = read_dataset(args.data)
    rows = ["run,loss,family,tap,train_top1,val_top1,chance"]
    for run_dir in args.run:
        cfg, model = _load(run_dir, ds)
        curve = []
        metrics = Path(run_dir) / "metrics.csv"
        if metrics.exists():
            curve = [float(line.split(",")[1]) for line in metrics.read_text().splitlines()[1:] if line]
        report = evaluate(model, ds, curve, seed=cfg.seed)
        (Path(run_dir) / "eval.csv").write_text(report.to_csv())
        for tap, p in report.probes.items():
            if args.tap in ("all", tap):
                rows.append(f"{run_dir},{cfg.loss},{cfg.family},{tap},{p.train_top1:.4f},{p.val_top1:.4f},{p.chance:.4f}")
        print(f"# {run_dir}: precision@5 {report.precision_at_5:.4f} nmi {report.nmi:.4f} "
              f"(chance {report.chance:.4f})", file=sys.stderr)
    print("\n".join(rows))
    return EXIT_OK


def cmd_retrieve(args) -> int:
    ds = read_dataset(args.data)
    _, model = _load(args.run, ds)
    ids = [v.index for v in ds.videos]
    if args.query not in ids:
        raise UsageError(f"no video with id {args.query}")
    if args.gallery == "all":
        keep = list(range(len(ds)))
    else:
        keep = [i for i, s in enumerate(ds.splits) if s == args.gallery]
    if not keep:
        raise UsageError(f"gallery split {args.gallery!r} is empty")
    emb = embed_videos(model, ds)
    q = emb[ids.index(args.query)]
    gallery_ids = np.array([ids[i] for i in keep])
    top = rank_gallery(q, emb[keep], gallery_ids)[:args.k]
    by_id = {vid: i for i, vid in enumerate(ids)}
    print("rank,id,label,score")
    for r, vid in enumerate(top, 1):
        i = by_id[int(vid)]
        print(f"{r},{vid},{ds.labels[i]},{float(emb[i] @ q):.6f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ds = read_dataset(args.data)
    bins = tuple(int(b) for b in args.bins.split(","))
    fractions = tuple(float(f) for f in args.fractions.split(","))
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg.save(run / "config.txt")
    table = ablate(cfg, ds, bins, fractions, subsample_seed=cfg.seed)
    (run / "ablation.csv").write_text(table.to_csv())
    print(table.to_csv(), end="")
    return EXIT_OK


def cmd_check(args) -> int:
    return EXIT_OK if checks.run_all() else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vie", description="Video instance embedding on synthetic videos.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["appearance", "dynamics", "mixed"], default="dynamics")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=75)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("data")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("train", help="unsupervised training into a run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--audit", action="store_true", help="write every sample record to samples.log")
    p.add_argument("--dump-clusters", action="store_true", help="write the final LA cluster labels")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("probe", help="linear probes, retrieval precision and NMI for trained runs")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, action="append", help="run directory (repeat to compare)")
    p.add_argument("--tap", choices=["all", "layer1", "layer2", "layer3"], default="all")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("retrieve", help="nearest gallery videos for one query video")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--query", type=int, required=True, help="video id")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--gallery", choices=["train", "val", "all"], default="all")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("ablate", help="bin-cutting and fraction sweeps")
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--bins", default="1,2,5")
    p.add_argument("--fractions", default="1.0,0.7,0.3")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("check", help="run the invariant and oracle self-check")
    p.set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"vie: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, CheckpointError, DatasetFormatError, OSError, ValueError, KeyError) as exc:
        print(f"vie: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
