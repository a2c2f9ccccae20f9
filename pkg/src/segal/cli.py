"""Command-line entry points.

Subcommands: ``train`` (fit on the labeled split), ``al-run`` (full
active-learning loop), ``eval`` (score a checkpoint), ``compare`` (strategy
sweep), ``serve`` (annotation service + human-oracle loop) and
``export-curves`` (plot-ready F1 tables). Every config value can come from
a YAML file (--config) and be overridden by the matching long flag.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import threading
from pathlib import Path

from .config import ConfigError, RunConfig

logger = logging.getLogger(__name__)

# flag name -> (RunConfig field, type)
_FLAG_FIELDS = {
    "labeled-path": ("labeled_path", str),
    "labeled-fraction": ("labeled_fraction", float),
    "max-len": ("max_len", int),
    "strategy": ("strategy", str),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "iters": ("iterations", int),
    "n": ("per_round", int),
    "char-dim": ("char_dim", int),
    "ngram-dim": ("ngram_dim", int),
    "hidden": ("hidden", int),
    "attn-dim": ("attn_dim", int),
    "dropout": ("dropout", float),
    "ngram-order": ("ngram_order", int),
    "epochs-with-ngrams": ("epochs_with_ngrams", int),
    "epochs-char-only": ("epochs_char_only", int),
    "batch-size": ("batch_size", int),
    "lr": ("lr", float),
    "lam": ("lam", float),
    "clip-norm": ("clip_norm", float),
    "patience": ("patience", int),
    "sg-window": ("sg_window", int),
    "sg-negatives": ("sg_negatives", int),
    "sg-epochs": ("sg_epochs", int),
    "sg-lr": ("sg_lr", float),
    "oracle": ("oracle", str),
    "human-deadline": ("human_deadline", float),
    "lease-seconds": ("lease_seconds", float),
    "port": ("port", int),
    "seed": ("seed", int),
    "eval-batch-size": ("eval_batch_size", int),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (flags override it)")
    for flag, (field, ftype) in _FLAG_FIELDS.items():
        p.add_argument(f"--{flag}", dest=f"cfg_{field}", type=ftype, default=None)
    p.add_argument(
        "--split-ratios", dest="cfg_split_ratios", default=None,
        help="train,test,val fractions, e.g. 0.6,0.2,0.2",
    )
    p.add_argument(
        "--warm-start", dest="cfg_warm_start", action="store_const",
        const=True, default=None,
    )
    p.add_argument(
        "--sg-train-only", dest="cfg_sg_train_only", action="store_const",
        const=True, default=None,
    )


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    overrides = {
        k[len("cfg_"):]: v
        for k, v in vars(args).items()
        if k.startswith("cfg_") and v is not None
    }
    if "split_ratios" in overrides:
        overrides["split_ratios"] = tuple(
            float(x) for x in overrides["split_ratios"].split(",")
        )
    return base.with_overrides(**overrides)


def _require_corpus(cfg: RunConfig) -> RunConfig:
    if not cfg.labeled_path:
        raise ConfigError("a labeled corpus is required (--labeled-path or config)")
    if not Path(cfg.labeled_path).is_file():
        raise ConfigError(f"cannot read corpus file {cfg.labeled_path!r}")
    return cfg


def cmd_train(args) -> int:
    from .al_loop import ActiveLearningRun

    cfg = _require_corpus(_config_from_args(args))
    rec = ActiveLearningRun(cfg, args.run_dir).train_once()
    print(
        f"trained on {rec.train_size} sentences: "
        f"test_nll={rec.test_nll:.4f} test_f1={rec.test_f1:.4f}"
    )
    return 0


def cmd_al_run(args) -> int:
    from .al_loop import run as al_run

    cfg = _require_corpus(_config_from_args(args))
    if cfg.oracle == "human":
        return _serve_and_run(cfg, args.run_dir)
    result = al_run(cfg, args.run_dir)
    best = result.state.best_iteration
    rec = result.state.history[best]
    print(
        f"completed {result.state.iteration} iterations; best iteration {best} "
        f"(test_nll={rec.test_nll:.4f}, test_f1={rec.test_f1:.4f}) "
        f"-> {result.best_checkpoint}"
    )
    return 0


def cmd_eval(args) -> int:
    from .corpus import load_labeled_corpus, split_dataset
    from .features import Vocab
    from .joint import JointModel, evaluate

    run_dir = Path(args.run_dir)
    cfg = RunConfig.from_yaml(str(run_dir / "config.yaml"))
    corpus = load_labeled_corpus(str(run_dir / "corpus.txt"), cfg.max_len)
    char_vocab = Vocab.load(str(run_dir / "char_vocab.txt"))
    ngram_path = run_dir / "ngram_vocab.txt"
    ngram_vocab = Vocab.load(str(ngram_path)) if ngram_path.exists() else None
    model = JointModel(cfg.model_config(), char_vocab, ngram_vocab, seed=0)
    checkpoint = args.checkpoint or str(run_dir / "best.npz")
    model.load(checkpoint)
    if args.corpus:
        data = load_labeled_corpus(args.corpus, cfg.max_len)
    else:
        data = split_dataset(
            corpus, cfg.split_ratios, cfg.labeled_fraction, cfg.seed
        ).testing
    nll, _ = evaluate(model, data, cfg.eval_batch_size)
    from .corpus import evaluate_f1

    outs = model.infer([ls.sentence for ls in data], want_marginals=False)
    ev = evaluate_f1([ls.tags for ls in data], [o.viterbi_tags for o in outs])
    print(ev.report())
    print(f"mean_nll={nll:.4f}")
    return 0


def _parse_seeds(spec: str, base: int) -> list[int]:
    if "," in spec:
        return [int(x) for x in spec.split(",")]
    count = int(spec)
    return [base + i for i in range(count)]


def cmd_compare(args) -> int:
    from .al_loop import compare_strategies

    cfg = _require_corpus(_config_from_args(args))
    kinds = args.strategies.split(",")
    seeds = _parse_seeds(args.seeds, cfg.seed)
    rows = compare_strategies(cfg, kinds, seeds, args.run_dir)
    print(f"wrote {len(rows)} rows to {Path(args.run_dir) / 'curves.csv'}")
    return 0


def _serve_and_run(cfg: RunConfig, run_dir: str) -> int:
    from .al_loop import ActiveLearningRun, HumanOracle
    from .service import AnnotationQueue, StatusBoard, build_app, serve_run

    queue = AnnotationQueue(lease_seconds=cfg.lease_seconds)
    board = StatusBoard()
    oracle = HumanOracle(queue)
    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = build_app(queue, board, ui_dir=str(ui_dir))
    stop = threading.Event()
    failure: list[BaseException] = []

    def loop_main():
        try:
            ar = ActiveLearningRun(
                cfg, run_dir, oracle=oracle,
                progress=lambda phase, state: board.update(phase, state),
            )
            ar.run()
        except BaseException as exc:  # surfaced after server shutdown
            failure.append(exc)
        finally:
            stop.set()

    thread = threading.Thread(target=loop_main, daemon=True)
    thread.start()
    print(f"annotation service on http://127.0.0.1:{cfg.port} (run: {run_dir})")
    serve_run(app, cfg.port, stop)
    thread.join(timeout=5)
    if failure:
        raise failure[0]
    print("active-learning loop finished")
    return 0


def cmd_serve(args) -> int:
    cfg = _require_corpus(_config_from_args(args)).with_overrides(oracle="human")
    return _serve_and_run(cfg, args.run_dir)


def cmd_export_curves(args) -> int:
    from .al_loop import ALState, write_curves

    root = Path(args.run_dir)
    rows: list[dict] = []
    state_files = sorted(root.glob("state.json")) + sorted(root.glob("*/state.json"))
    if not state_files:
        print(f"no run state found under {root}", file=sys.stderr)
        return 1
    for sf in state_files:
        sub = sf.parent
        cfg = RunConfig.from_yaml(str(sub / "config.yaml"))
        state = ALState.load(sf)
        for rec in state.history:
            rows.append(
                {
                    "strategy": cfg.strategy,
                    "seed": cfg.seed,
                    "iteration": rec.iteration,
                    "train_size": rec.train_size,
                    "f1": rec.test_f1,
                }
            )
    out = Path(args.out) if args.out else root / "curves.csv"
    write_curves(out, rows)
    # wide per-strategy table: iteration columns, one row per strategy/seed
    wide_path = out.with_name(out.stem + "_wide.csv")
    iters = sorted({r["iteration"] for r in rows})
    with open(wide_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "seed"] + [f"iter_{i}" for i in iters])
        keys = sorted({(r["strategy"], r["seed"]) for r in rows})
        for strat, seed in keys:
            by_iter = {
                r["iteration"]: r["f1"]
                for r in rows
                if r["strategy"] == strat and r["seed"] == seed
            }
            w.writerow(
                [strat, seed]
                + [f"{by_iter[i]:.6f}" if i in by_iter else "" for i in iters]
            )
    print(f"wrote {out} and {wide_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segal",
        description="active-learning toolkit for character-level segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the joint model on the labeled split")
    _add_config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("al-run", help="run the active-learning loop")
    _add_config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_al_run)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--checkpoint", help="defaults to <run-dir>/best.npz")
    p.add_argument("--corpus", help="defaults to the run's own testing split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="sweep sampling strategies")
    _add_config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--strategies", default="rand,lc,mte,mtm,nelp")
    p.add_argument("--seeds", default="3", help="count or comma list")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="annotation service + human-oracle loop")
    _add_config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-curves", help="emit per-iteration F1 tables")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_curves)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
