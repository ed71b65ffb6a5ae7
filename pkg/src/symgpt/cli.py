"""Command-line entry point: ``symgpt generate|train|infer|benchmark|plot``."""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .config import ExperimentConfig, load_config
from .eqgen import generate_splits, read_corpus
from .gp import GPConfig
from .gpt import SymbolicGPT
from .pipeline import predict
from .training import TrainingDiverged, train

log = logging.getLogger("symgpt")

EXIT_DIVERGED = 3
EXIT_INPUT = 2


def data_dir(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "data"


def model_dir(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "model"


def bench_dir(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "bench"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, args) -> int:
    counts = cfg.split_counts()
    summaries = generate_splits(cfg.gen_configs(), counts, data_dir(cfg), workers=cfg.workers)
    for split, s in summaries.items():
        ins = s["insertion"]
        print(f"{split}: {counts[split]} instances, constant insertion rates "
              f"{ins['multiplicative_rate']:.3f}/{ins['additive_rate']:.3f} -> {data_dir(cfg) / (split + '.jsonl')}")
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    train_set = read_corpus(data_dir(cfg) / "train.jsonl")
    val_set = read_corpus(data_dir(cfg) / "val.jsonl")
    try:
        result = train(train_set, val_set, model_dir(cfg), cfg.tnet, cfg.gpt, cfg.train_config(),
                       resume=args.resume)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for rec in result.history:
        if "val_loss" in rec:
            print(f"epoch {rec['epoch']}: train {rec['train_loss']:.4f} val {rec['val_loss']:.4f}")
    print(f"best epoch {result.best_epoch} (val {result.best_val:.4f}) -> {model_dir(cfg) / 'best.npz'}")
    return 0


def _load_model(cfg: ExperimentConfig, checkpoint: str | None) -> SymbolicGPT:
    path = Path(checkpoint) if checkpoint else model_dir(cfg) / "best.npz"
    return SymbolicGPT.load(path)[0]


def cmd_infer(cfg: ExperimentConfig, args) -> int:
    model = _load_model(cfg, args.checkpoint)
    instances = read_corpus(Path(args.input) if args.input else data_dir(cfg) / "test.jsonl")
    ids = [args.index] if args.index is not None else list(range(len(instances)))
    if args.limit is not None:
        ids = ids[: args.limit]
    opts = replace(cfg.infer, seed=cfg.seed)
    out_path = cfg.out_dir / "predictions.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w") as f:
        for i in ids:
            if not 0 <= i < len(instances):
                print(f"instance index {i} out of range (0..{len(instances) - 1})", file=sys.stderr)
                return EXIT_INPUT
            inst = instances[i]
            p = predict(model, inst.X, inst.y, replace(opts, seed=opts.seed + i))
            rec = {"instance_id": i, "target": inst.eq, **p.to_dict()}
            f.write(json.dumps(rec) + "\n")
            print(f"[{i}] mse_n={p.mse_n:.3e} t={p.t_total:.2f}s {p.equation or '<failed>'}")
    return 0


def _methods(cfg: ExperimentConfig, checkpoint: str | None) -> dict[str, bench.Method]:
    methods: dict[str, bench.Method] = {}
    for name in cfg.methods:
        if name == "symbolicgpt":
            methods[name] = bench.SymbolicGPTMethod(_load_model(cfg, checkpoint), replace(cfg.infer, seed=cfg.seed))
        elif name in ("gp", "gp_max"):
            gp_cfg: GPConfig = getattr(cfg, name)
            methods[name] = bench.GPMethod(replace(gp_cfg, seed=gp_cfg.seed + cfg.seed))
        elif name == "mean":
            methods[name] = bench.mean_method
    return methods


def cmd_benchmark(cfg: ExperimentConfig, args) -> int:
    instances = read_corpus(data_dir(cfg) / "test.jsonl")
    limit = args.limit if args.limit is not None else cfg.bench_limit
    if limit is not None:
        instances = instances[:limit]
    methods = _methods(cfg, args.checkpoint)
    out = bench_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = bench.run_benchmark(instances, methods, cfg.workers)
    bench.write_csv(rows, out / "results.csv", args.deterministic)
    bench.write_cdf(rows, out / "cdf.csv")
    if not args.deterministic:
        (out / "timing.md").write_text(bench.timing_table({cfg.name: rows}))
    bench.plot_cdf(rows, out / "cdf.svg", title=cfg.name)
    if cfg.sweep and not args.no_sweep:
        sweep = bench.point_sweep(instances, methods, cfg.gen_configs()["test"], cfg.sweep, cfg.seed, cfg.workers)
        bench.write_sweep(sweep, out / "sweep.csv")
        bench.plot_sweep(sweep, out / "sweep.svg")
    for m, g in bench.by_method(rows).items():
        scores = [r.mse_n for r in g]
        failed = sum(1 for s in scores if s == float("inf"))
        print(f"{m}: median MSE_N {statistics.median(scores):.3e}, failures {failed}/{len(g)}")
    print(f"results -> {out}")
    return 0


def cmd_plot(cfg: ExperimentConfig, args) -> int:
    dirs = [Path(d) for d in args.results] if args.results else [bench_dir(cfg)]
    tables = {}
    for d in dirs:
        rows = bench.read_csv(d / "results.csv")
        bench.plot_cdf(rows, d / "cdf.svg", title=d.parent.name)
        if (d / "sweep.csv").exists():
            bench.plot_sweep(bench.read_sweep(d / "sweep.csv"), d / "sweep.svg")
        tables[d.parent.name] = rows
    table = bench.timing_table(tables)
    target = dirs[0] / "timing.md" if len(dirs) == 1 else cfg.out_dir / "timing.md"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(table)
    print(table, end="")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "infer": cmd_infer,
    "benchmark": cmd_benchmark,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (default: one_var preset)")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--scale", type=float, help="multiply the split sizes")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="symgpt", description="Symbolic regression with a point-cloud "
                                     "conditioned transformer.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write train/val/test corpora")
    p = sub.add_parser("train", parents=[common], help="train a model on the generated corpus")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    p = sub.add_parser("infer", parents=[common], help="predict equations for a corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="JSONL corpus (default: the test split)")
    p.add_argument("--index", type=int, help="only this instance")
    p.add_argument("--limit", type=int)
    p = sub.add_parser("benchmark", parents=[common], help="score all methods on the test split")
    p.add_argument("--checkpoint")
    p.add_argument("--limit", type=int, help="number of test instances")
    p.add_argument("--no-sweep", action="store_true", help="skip the point-count sweep")
    p.add_argument("--deterministic", action="store_true",
                   help="omit wall-clock times so repeated runs give identical files")
    p = sub.add_parser("plot", parents=[common], help="re-render plots and the timing table")
    p.add_argument("--results", nargs="*", help="benchmark directories to combine")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    updates = {k: getattr(args, k) for k in ("seed", "scale", "out") if getattr(args, k) is not None}
    return replace(cfg, **updates) if updates else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (OSError, ValueError) as exc:  # includes corrupt checkpoints
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
