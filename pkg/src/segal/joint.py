"""Joint model assembly and training: shared encoder, CRF segmenter and
loss prediction head, mini-batched Adam training, and evaluation."""

from __future__ import annotations

import logging
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from . import loss_head as lh
from . import segmenter as seg
from .autodiff import Tensor
from .corpus import TAGS, LabeledSentence, Sentence, evaluate_f1
from .features import PAD_ID, Vocab, init_embedding_table, ngram_features
from .optim import Adam, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    char_dim: int = 128
    ngram_dim: int = 128
    hidden: int = 512            # concatenated BiLSTM width (256 per direction)
    attn_dim: int = 64
    dropout: float = 0.2
    max_len: int = 200
    ngram_order: int | None = 2  # None disables n-gram features
    transition_mask_value: float = float("-inf")
    freeze_encoder_for_head: bool = False

    @property
    def input_dim(self) -> int:
        return self.char_dim + (self.ngram_dim if self.ngram_order else 0)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    lam: float = 1.0
    seed: int = 0
    # optional early stopping: epochs without validation-NLL improvement
    # before the run halts (0 = fixed epoch budget, the default protocol)
    patience: int = 0


@dataclass
class Batch:
    char_ids: np.ndarray    # [B, L]
    ngram_ids: np.ndarray | None
    mask: np.ndarray        # [B, L] float
    lengths: np.ndarray     # [B]
    tags: np.ndarray | None  # [B, L] gold ids, pad 3 (S, ignored past length)


def _name_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))])
    )


class JointModel:
    """Parameter container plus forward passes for training and inference."""

    def __init__(
        self,
        config: ModelConfig,
        char_vocab: Vocab,
        ngram_vocab: Vocab | None = None,
        seed: int = 0,
        pretrained_ngram: np.ndarray | None = None,
    ):
        if config.ngram_order and ngram_vocab is None:
            raise ValueError("ngram_order set but no ngram vocabulary given")
        self.config = config
        self.char_vocab = char_vocab
        self.ngram_vocab = ngram_vocab if config.ngram_order else None
        h_dir = config.hidden // 2

        char_table = init_embedding_table(
            len(char_vocab), config.char_dim, _name_rng(seed, "embeddings.char")
        )
        self.char_emb = Tensor(char_table, True)
        self.ngram_emb: Tensor | None = None
        if config.ngram_order:
            if pretrained_ngram is not None:
                if pretrained_ngram.shape != (len(ngram_vocab), config.ngram_dim):
                    raise ValueError(
                        f"pretrained table {pretrained_ngram.shape} does not match "
                        f"({len(ngram_vocab)}, {config.ngram_dim})"
                    )
                table = pretrained_ngram.copy()
                table[PAD_ID] = 0.0
            else:
                table = init_embedding_table(
                    len(ngram_vocab), config.ngram_dim, _name_rng(seed, "embeddings.ngram")
                )
            self.ngram_emb = Tensor(table, True)

        self.bilstm = seg.BiLSTMParams.init(
            _name_rng(seed, "bilstm.fwd"), _name_rng(seed, "bilstm.bwd"),
            config.input_dim, h_dir,
        )
        self.crf = seg.CRFParams.init(
            _name_rng(seed, "crf"), config.hidden,
            mask_value=config.transition_mask_value,
        )
        self.head = lh.AttentionParams.init(
            _name_rng(seed, "loss_head"), config.hidden, config.attn_dim
        )
        # set once the head has actually received training signal (lam > 0)
        self.head_trained = False

    # -- parameters ---------------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out = {
            "embeddings.char": self.char_emb,
            "bilstm.fwd.W": self.bilstm.fwd.W,
            "bilstm.fwd.U": self.bilstm.fwd.U,
            "bilstm.fwd.b": self.bilstm.fwd.b,
            "bilstm.bwd.W": self.bilstm.bwd.W,
            "bilstm.bwd.U": self.bilstm.bwd.U,
            "bilstm.bwd.b": self.bilstm.bwd.b,
            "crf.emission.W": self.crf.W,
            "crf.emission.b": self.crf.b,
            "crf.transitions": self.crf.trans,
            "loss_head.q": self.head.q,
            "loss_head.k": self.head.k,
            "loss_head.v": self.head.v,
            "loss_head.out.w": self.head.out_w,
            "loss_head.out.b": self.head.out_b,
        }
        if self.ngram_emb is not None:
            out["embeddings.ngram"] = self.ngram_emb
        return out

    def segmenter_param_names(self) -> set[str]:
        return {n for n in self.params() if not n.startswith("loss_head.")}

    def save(self, path: str) -> None:
        save_checkpoint(
            path,
            self.params(),
            meta={
                "char_vocab_size": len(self.char_vocab),
                "ngram_vocab_size": len(self.ngram_vocab) if self.ngram_vocab else 0,
                "ngram_order": self.config.ngram_order or 0,
                "hidden": self.config.hidden,
            },
        )

    def load(self, path: str) -> None:
        arrays, _ = load_checkpoint(path)
        for name, tensor in self.params().items():
            if name not in arrays:
                raise ValueError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != tensor.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {arrays[name].shape} "
                    f"!= model shape {tensor.data.shape}"
                )
            tensor.data[...] = arrays[name]

    # -- batching -----------------------------------------------------------

    def make_batch(
        self,
        sentences: list[Sentence],
        tags: list[str] | None = None,
    ) -> Batch:
        B = len(sentences)
        L = max(len(s.chars) for s in sentences)
        char_ids = np.full((B, L), PAD_ID, dtype=np.int64)
        ngram_ids = (
            np.full((B, L), PAD_ID, dtype=np.int64) if self.ngram_emb is not None else None
        )
        mask = np.zeros((B, L))
        lengths = np.zeros(B, dtype=np.int64)
        tag_ids = np.full((B, L), TAGS.index("S"), dtype=np.int64) if tags else None
        for i, s in enumerate(sentences):
            n = len(s.chars)
            lengths[i] = n
            mask[i, :n] = 1.0
            char_ids[i, :n] = self.char_vocab.ids(list(s.chars))
            if ngram_ids is not None:
                ngram_ids[i, :n] = self.ngram_vocab.ids(
                    ngram_features(s.chars, self.config.ngram_order)
                )
            if tags:
                tag_ids[i, :n] = [TAGS.index(t) for t in tags[i]]
        return Batch(char_ids, ngram_ids, mask, lengths, tag_ids)

    # -- forward passes -----------------------------------------------------

    def encode_batch(
        self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None
    ) -> Tensor:
        x = ad.gather_rows(self.char_emb, batch.char_ids)
        if self.ngram_emb is not None:
            x = ad.concat([x, ad.gather_rows(self.ngram_emb, batch.ngram_ids)], axis=-1)
        return seg.encode(
            x, batch.mask, self.bilstm,
            dropout_rate=self.config.dropout, train=train, rng=rng,
        )

    def seg_nll(self, h: Tensor, batch: Batch) -> Tensor:
        return seg.crf_nll(h, batch.tags, batch.lengths, self.crf)

    def head_losses(self, h: Tensor, batch: Batch) -> Tensor:
        h_in = h.detach() if self.config.freeze_encoder_for_head else h
        return lh.predict_loss(h_in, self.head, batch.mask, batch.lengths)

    # -- inference ----------------------------------------------------------

    def infer(
        self,
        sentences: list[Sentence],
        tags: list[str] | None = None,
        batch_size: int = 64,
        want_marginals: bool = True,
        want_head: bool = False,
    ) -> list[seg.SegOutput]:
        """Viterbi paths, posteriors and (optionally) predicted losses."""
        outputs: list[seg.SegOutput] = []
        trans = self.crf.effective_transitions_np()
        with ad.no_grad():
            for lo in range(0, len(sentences), batch_size):
                chunk = sentences[lo : lo + batch_size]
                chunk_tags = tags[lo : lo + batch_size] if tags else None
                batch = self.make_batch(chunk, chunk_tags)
                h = self.encode_batch(batch, train=False)
                emis = np.ascontiguousarray(seg.emissions(h, self.crf).data)
                paths, logprob = kernels.crf_viterbi(emis, trans, batch.lengths)
                marg = None
                if want_marginals:
                    marg, _, _ = kernels.crf_marginals(emis, trans, batch.lengths)
                nlls = self.seg_nll(h, batch).data if chunk_tags is not None else None
                pred = self.head_losses(h, batch).data if want_head else None
                for i, s in enumerate(chunk):
                    n = len(s.chars)
                    outputs.append(
                        seg.SegOutput(
                            viterbi_tags="".join(TAGS[j] for j in paths[i, :n]),
                            viterbi_logprob=float(logprob[i]),
                            marginals=marg[i, :n].copy() if marg is not None else None,
                            nll=float(nlls[i]) if nlls is not None else None,
                            predicted_loss=float(pred[i]) if pred is not None else None,
                        )
                    )
        return outputs

    def predict_losses(self, sentences: list[Sentence], batch_size: int = 64) -> np.ndarray:
        vals = np.zeros(len(sentences))
        with ad.no_grad():
            for lo in range(0, len(sentences), batch_size):
                chunk = sentences[lo : lo + batch_size]
                batch = self.make_batch(chunk)
                h = self.encode_batch(batch, train=False)
                vals[lo : lo + len(chunk)] = self.head_losses(h, batch).data
        return vals


@dataclass
class EpochStats:
    mean_seg_nll: float
    mean_head_loss: float


@dataclass
class TrainStats:
    epochs: list[EpochStats] = field(default_factory=list)
    seconds: float = 0.0


def train_model(
    model: JointModel,
    data: list[LabeledSentence],
    tc: TrainConfig,
    val_data: list[LabeledSentence] | None = None,
) -> TrainStats:
    """Mini-batched Adam training of the joint objective.

    With lam == 0 the head contributes nothing and is skipped, so the run
    is bit-identical to segmenter-only training under the same seed. When
    ``tc.patience`` > 0 and validation data is given, training stops after
    that many epochs without validation-NLL improvement.
    """
    if not data:
        raise ValueError("no training data")
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0xA11CE]))
    params = model.params()
    opt = Adam(
        params,
        lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps,
        clip_norm=tc.clip_norm,
        zero_rows={
            name: PAD_ID for name in ("embeddings.char", "embeddings.ngram")
            if name in params
        },
    )
    stats = TrainStats()
    t0 = time.time()
    if tc.lam > 0.0:
        model.head_trained = True
    sentences = [ls.sentence for ls in data]
    tag_strs = [ls.tags for ls in data]
    n = len(data)
    best_val = np.inf
    stall = 0
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        seg_total = 0.0
        head_total = 0.0
        n_batches = 0
        for lo in range(0, n, tc.batch_size):
            idx = order[lo : lo + tc.batch_size]
            batch = model.make_batch(
                [sentences[i] for i in idx], [tag_strs[i] for i in idx]
            )
            h = model.encode_batch(batch, train=True, rng=rng)
            nll_vec = model.seg_nll(h, batch)
            head_loss = None
            if tc.lam > 0.0:
                predicted = model.head_losses(h, batch)
                head_loss = lh.loss_head_loss(predicted, nll_vec.data.copy())
            loss = lh.joint_loss(nll_vec, head_loss, tc.lam)
            opt.zero_grad()
            loss.backward()
            opt.step()
            seg_total += float(nll_vec.data.mean())
            head_total += float(head_loss.data) if head_loss is not None else 0.0
            n_batches += 1
        stats.epochs.append(
            EpochStats(seg_total / n_batches, head_total / n_batches)
        )
        logger.debug(
            "epoch %d: seg nll %.4f head %.4f",
            epoch, stats.epochs[-1].mean_seg_nll, stats.epochs[-1].mean_head_loss,
        )
        if tc.patience > 0 and val_data:
            val_nll, _ = evaluate(model, val_data)
            if val_nll < best_val - 1e-9:
                best_val = val_nll
                stall = 0
            else:
                stall += 1
                if stall >= tc.patience:
                    logger.info("early stop after epoch %d (patience)", epoch)
                    break
    stats.seconds = time.time() - t0
    return stats


def evaluate(
    model: JointModel,
    data: list[LabeledSentence],
    batch_size: int = 64,
) -> tuple[float, float]:
    """(mean per-sentence segmentation NLL, word-span F1) on a labeled set."""
    sentences = [ls.sentence for ls in data]
    gold = [ls.tags for ls in data]
    outs = model.infer(sentences, tags=gold, batch_size=batch_size, want_marginals=False)
    mean_nll = float(np.mean([o.nll for o in outs]))
    f1 = evaluate_f1(gold, [o.viterbi_tags for o in outs]).f1
    return mean_nll, f1
