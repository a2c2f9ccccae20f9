"""The active-learning loop: train, score the pool, select, label, grow.

Each iteration retrains the joint model from scratch on the current labeled
set, scores every pool sentence with the configured strategy, moves the
top-n into the labeled set via the oracle, and records testing loss and F1.
The model with the smallest testing loss across all iterations is kept as
the final segmenter. State persists to the run directory after every
iteration, so an interrupted run resumes deterministically (single worker,
fixed seeds, gold oracle).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .corpus import (
    DatasetSplit,
    LabeledSentence,
    Sentence,
    load_labeled_corpus,
    save_labeled_corpus,
    split_dataset,
    validate_tags,
)
from .features import build_vocabs, ngram_features, train_skipgram
from .joint import JointModel, evaluate, train_model
from .strategies import StrategyScore, score_pool, select_top_n
from . import strategies

logger = logging.getLogger(__name__)

STATE_VERSION = 1


@dataclass
class IterationRecord:
    iteration: int
    train_size: int
    test_nll: float
    test_f1: float
    seconds: float
    head_loss: float = 0.0
    selected: list[int] = field(default_factory=list)
    shortfall: int = 0


@dataclass
class ALState:
    labeled_ids: list[int]
    unlabeled_ids: list[int]
    consumed_ids: list[int] = field(default_factory=list)
    iteration: int = -1  # last completed iteration; -1 = none yet
    history: list[IterationRecord] = field(default_factory=list)
    best_iteration: int = -1
    best_loss: float = float("inf")
    human_labels: dict[int, str] = field(default_factory=dict)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["version"] = STATE_VERSION
        d["human_labels"] = {str(k): v for k, v in self.human_labels.items()}
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ALState":
        d = json.loads(text)
        if d.pop("version", None) != STATE_VERSION:
            raise ValueError("unsupported state version")
        d["history"] = [IterationRecord(**r) for r in d["history"]]
        d["human_labels"] = {int(k): v for k, v in d["human_labels"].items()}
        return cls(**d)

    def save(self, path: Path) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(self.to_json(), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path) -> "ALState":
        return cls.from_json(path.read_text(encoding="utf-8"))


class GoldOracle:
    """Answers immediately and exactly from withheld reference tags."""

    kind = "gold"

    def __init__(self, reference: dict[int, str]):
        self._reference = reference

    def label(
        self, sentences: list[Sentence], iteration: int, deadline: float
    ) -> dict[int, str]:
        return {s.id: self._reference[s.id] for s in sentences}


class HumanOracle:
    """Routes sentences through the annotation queue and waits for humans.

    Returns whatever arrived by the deadline; callers handle the shortfall.
    """

    kind = "human"

    def __init__(self, queue, poll_seconds: float = 0.5):
        self.queue = queue
        self.poll_seconds = poll_seconds

    def label(
        self, sentences: list[Sentence], iteration: int, deadline: float
    ) -> dict[int, str]:
        self.queue.put(sentences, iteration)
        t_end = time.time() + deadline
        while time.time() < t_end:
            if self.queue.pending_count(iteration) == 0:
                break
            time.sleep(self.poll_seconds)
        labels = self.queue.collect(iteration)
        for tags in labels.values():
            validate_tags(tags)
        return labels


def derived_seed(base: int, *parts: int) -> int:
    return int(np.random.SeedSequence([base, *parts]).generate_state(1)[0])


@dataclass
class ALResult:
    state: ALState
    best_checkpoint: Path
    run_dir: Path


class ActiveLearningRun:
    """Owns the run directory, split, vocabularies and loop execution."""

    def __init__(
        self,
        config: RunConfig,
        run_dir: str | Path,
        corpus: list[LabeledSentence] | None = None,
        oracle=None,
        progress=None,
    ):
        # everything that can fail happens before the run directory is touched
        self.config = config.validate()
        self.progress = progress
        if corpus is None:
            corpus = load_labeled_corpus(config.labeled_path, config.max_len)
        self.split: DatasetSplit = split_dataset(
            corpus, config.split_ratios, config.labeled_fraction, config.seed
        )
        self.by_id: dict[int, LabeledSentence] = {
            ls.sentence.id: ls for ls in self.split.training
        }

        self.run_dir = Path(run_dir)
        cfg_path = self.run_dir / "config.yaml"
        if cfg_path.exists():
            existing = RunConfig.from_yaml(str(cfg_path))
            if existing.to_dict() != config.to_dict():
                raise ValueError(
                    f"{cfg_path} differs from the requested config; "
                    "refusing to resume with mismatched settings"
                )
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "checkpoints").mkdir(exist_ok=True)
        (self.run_dir / "selections").mkdir(exist_ok=True)
        if not cfg_path.exists():
            config.to_yaml(str(cfg_path))
        corpus_snapshot = self.run_dir / "corpus.txt"
        if not corpus_snapshot.exists():
            save_labeled_corpus(str(corpus_snapshot), corpus)

        self._build_features(corpus)
        self.char_vocab.save(str(self.run_dir / "char_vocab.txt"))
        if self.ngram_vocab is not None:
            self.ngram_vocab.save(str(self.run_dir / "ngram_vocab.txt"))
        self.oracle = oracle or GoldOracle(
            {ls.sentence.id: ls.tags for ls in self.split.training}
        )

    # -- setup ----------------------------------------------------------------

    def _build_features(self, corpus: list[LabeledSentence]) -> None:
        cfg = self.config
        order = cfg.ngram_order or None
        all_texts = [ls.sentence.chars for ls in corpus]
        self.char_vocab, self.ngram_vocab = build_vocabs(all_texts, order)
        self.pretrained_ngram = None
        if order:
            sg_texts = (
                [ls.sentence.chars for ls in self.split.training]
                if cfg.sg_train_only
                else all_texts
            )
            sequences = [
                self.ngram_vocab.ids(ngram_features(t, order)) for t in sg_texts
            ]
            self.pretrained_ngram, sg_losses = train_skipgram(
                sequences,
                vocab_size=len(self.ngram_vocab),
                dim=cfg.ngram_dim,
                window=cfg.sg_window,
                negatives=cfg.sg_negatives,
                epochs=cfg.sg_epochs,
                lr=cfg.sg_lr,
                seed=derived_seed(cfg.seed, 0x5109),
            )
            logger.info(
                "pretrained %d-gram embeddings: loss %.3f -> %.3f",
                order, sg_losses[0], sg_losses[-1],
            )

    def new_model(self, iteration: int) -> JointModel:
        return JointModel(
            self.config.model_config(),
            self.char_vocab,
            self.ngram_vocab,
            seed=derived_seed(self.config.seed, 1, iteration),
            pretrained_ngram=self.pretrained_ngram,
        )

    # -- state ----------------------------------------------------------------

    @property
    def state_path(self) -> Path:
        return self.run_dir / "state.json"

    def fresh_state(self) -> ALState:
        return ALState(
            labeled_ids=[ls.sentence.id for ls in self.split.labeled],
            unlabeled_ids=[ls.sentence.id for ls in self.split.unlabeled],
        )

    def _labeled_set(self, state: ALState) -> list[LabeledSentence]:
        out = []
        for i in state.labeled_ids:
            ls = self.by_id[i]
            if i in state.human_labels:
                ls = LabeledSentence(ls.sentence, state.human_labels[i])
            out.append(ls)
        return out

    def checkpoint_path(self, iteration: int) -> Path:
        return self.run_dir / "checkpoints" / f"iter_{iteration:04d}.npz"

    def _append_metrics(self, rec: IterationRecord) -> None:
        path = self.run_dir / "metrics.csv"
        new = not path.exists()
        with open(path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["iteration", "train_size", "test_nll", "test_f1", "seconds"])
            w.writerow([
                rec.iteration, rec.train_size,
                f"{rec.test_nll:.6f}", f"{rec.test_f1:.6f}", f"{rec.seconds:.2f}",
            ])

    def _notify(self, phase: str, state: ALState) -> None:
        if self.progress is not None:
            self.progress(phase, state)

    # -- training + evaluation --------------------------------------------------

    def _train_and_eval(
        self,
        state: ALState,
        iteration: int,
        selected: list[int],
        shortfall: int,
        prev_model: JointModel | None = None,
    ) -> tuple[JointModel, IterationRecord]:
        t0 = time.time()
        # retraining from scratch each iteration is the default protocol;
        # warm_start reuses the previous weights purely as a speed option
        if self.config.warm_start and prev_model is not None:
            model = prev_model
        else:
            model = self.new_model(iteration)
        labeled = self._labeled_set(state)
        tc = self.config.train_config(seed=derived_seed(self.config.seed, 2, iteration))
        train_model(model, labeled, tc, val_data=self.split.validation or None)
        test_nll, test_f1 = evaluate(
            model, self.split.testing, self.config.eval_batch_size
        )
        head_loss = self._test_head_loss(model)
        rec = IterationRecord(
            iteration=iteration,
            train_size=len(labeled),
            test_nll=test_nll,
            test_f1=test_f1,
            seconds=time.time() - t0,
            head_loss=head_loss,
            selected=sorted(selected),
            shortfall=shortfall,
        )
        return model, rec

    def _test_head_loss(self, model: JointModel) -> float:
        """Head regression error on the testing split, logged alongside the
        segmentation loss but never part of the model-selection criterion."""
        if self.config.lam <= 0:
            return 0.0
        sentences = [ls.sentence for ls in self.split.testing]
        tags = [ls.tags for ls in self.split.testing]
        outs = model.infer(
            sentences, tags=tags, batch_size=self.config.eval_batch_size,
            want_marginals=False, want_head=True,
        )
        return float(
            np.mean([(o.predicted_loss - o.nll) ** 2 for o in outs])
        )

    def _complete_iteration(
        self, state: ALState, model: JointModel, rec: IterationRecord
    ) -> None:
        state.history.append(rec)
        state.iteration = rec.iteration
        if rec.test_nll < state.best_loss:
            state.best_loss = rec.test_nll
            state.best_iteration = rec.iteration
        model.save(str(self.checkpoint_path(rec.iteration)))
        best = self.run_dir / "best.npz"
        if state.best_iteration == rec.iteration:
            shutil.copyfile(self.checkpoint_path(rec.iteration), best)
        state.save(self.state_path)
        self._append_metrics(rec)
        logger.info(
            "iteration %d: train %d, test nll %.4f, f1 %.4f (best: it %d)",
            rec.iteration, rec.train_size, rec.test_nll, rec.test_f1,
            state.best_iteration,
        )

    def train_once(self) -> IterationRecord:
        """Fit the joint model on the initial labeled split only (no
        selection rounds) and record the result as iteration 0."""
        state = (
            ALState.load(self.state_path)
            if self.state_path.exists()
            else self.fresh_state()
        )
        if state.iteration >= 0:
            raise ValueError(f"{self.run_dir} already holds a trained run")
        model, rec = self._train_and_eval(state, 0, [], 0)
        self._complete_iteration(state, model, rec)
        return rec

    # -- the loop ---------------------------------------------------------------

    def run(self) -> ALResult:
        cfg = self.config
        if self.state_path.exists():
            state = ALState.load(self.state_path)
            logger.info("resuming from iteration %d", state.iteration)
        else:
            state = self.fresh_state()

        if state.iteration < 0:
            self._notify("training", state)
            model, rec = self._train_and_eval(state, 0, [], 0)
            self._complete_iteration(state, model, rec)
            self._write_pool_predictions(model, state)
        else:
            model = self.new_model(state.iteration)
            model.load(str(self.checkpoint_path(state.iteration)))
            if cfg.lam > 0:
                model.head_trained = True

        for it in range(state.iteration + 1, cfg.iterations + 1):
            if not state.unlabeled_ids:
                logger.info("pool exhausted after iteration %d", state.iteration)
                break
            self._notify("scoring", state)
            pool = [self.by_id[i].sentence for i in state.unlabeled_ids]
            strat = cfg.strategy_config(seed=derived_seed(cfg.seed, 3, it))
            scores = score_pool(model, pool, strat, cfg.eval_batch_size)
            selected = select_top_n(scores, cfg.per_round)
            self._dump_selection(it, scores, selected)

            self._notify("labeling", state)
            chosen = [self.by_id[i].sentence for i in selected]
            labels = self.oracle.label(chosen, it, cfg.human_deadline)
            answered = [i for i in selected if i in labels]
            unanswered = [i for i in selected if i not in labels]
            if self.oracle.kind == "human":
                state.human_labels.update(labels)
            if unanswered:
                logger.warning(
                    "iteration %d: %d of %d selections unanswered by deadline",
                    it, len(unanswered), len(selected),
                )
            state.labeled_ids = state.labeled_ids + answered
            selected_set = set(selected)
            state.unlabeled_ids = [
                i for i in state.unlabeled_ids if i not in selected_set
            ]
            state.consumed_ids = state.consumed_ids + unanswered

            self._notify("training", state)
            model, rec = self._train_and_eval(
                state, it, answered, len(unanswered), prev_model=model
            )
            self._complete_iteration(state, model, rec)

        self._notify("done", state)
        best = self.run_dir / "best.npz"
        return ALResult(state=state, best_checkpoint=best, run_dir=self.run_dir)

    def _dump_selection(
        self, iteration: int, scores: list[StrategyScore], selected: list[int]
    ) -> None:
        path = self.run_dir / "selections" / f"iter_{iteration:04d}.csv"
        strategies.dump_scores(str(path), scores, self.config.strategy)
        with open(path, "a", newline="", encoding="utf-8") as fh:
            fh.write("# selected: " + " ".join(str(i) for i in sorted(selected)) + "\n")

    def _write_pool_predictions(self, model: JointModel, state: ALState) -> None:
        """Tag the pool with the initial model; recorded for inspection only
        (the loop itself always rescores with the current model)."""
        pool = [self.by_id[i].sentence for i in state.unlabeled_ids]
        if not pool:
            return
        outs = model.infer(pool, want_marginals=False)
        path = self.run_dir / "init_pool_predictions.txt"
        with open(path, "w", encoding="utf-8") as fh:
            for s, o in zip(pool, outs):
                fh.write(f"{s.id}\t{o.viterbi_tags}\n")


def run(config: RunConfig, run_dir: str | Path, corpus=None, oracle=None, progress=None) -> ALResult:
    return ActiveLearningRun(config, run_dir, corpus, oracle, progress).run()


def compare_strategies(
    config: RunConfig,
    strategy_kinds: list[str],
    seeds: list[int],
    run_root: str | Path,
    corpus: list[LabeledSentence] | None = None,
) -> list[dict]:
    """Run every (strategy, seed) pair on a shared protocol and collect
    per-iteration F1 rows: strategy, seed, iteration, train_size, f1."""
    run_root = Path(run_root)
    run_root.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for kind in strategy_kinds:
        for seed in seeds:
            sub = dataclasses.replace(config, strategy=kind, seed=seed).validate()
            result = run(sub, run_root / f"{kind}_seed{seed}", corpus=corpus)
            for rec in result.state.history:
                rows.append(
                    {
                        "strategy": kind,
                        "seed": seed,
                        "iteration": rec.iteration,
                        "train_size": rec.train_size,
                        "f1": rec.test_f1,
                    }
                )
    write_curves(run_root / "curves.csv", rows)
    return rows


def write_curves(path: str | Path, rows: list[dict]) -> None:
    """Long-format comma-separated table, one row per strategy x seed x
    iteration, ready for plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["strategy", "seed", "iteration", "train_size", "f1"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "f1": f"{r['f1']:.6f}"})
