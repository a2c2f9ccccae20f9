import numpy as np
import pytest

from segal import autodiff as ad
from segal.autodiff import Tensor
from segal.corpus import LabeledSentence, Sentence
from segal.features import build_vocabs
from segal.joint import JointModel, ModelConfig, TrainConfig, train_model
from segal.loss_head import (
    AttentionParams,
    joint_loss,
    loss_head_loss,
    predict_loss,
    self_attention,
)
from tests.conftest import fd_check_params, toy_corpus


def _identity_params(d, out_w=None):
    eye = np.eye(d)
    return AttentionParams(
        q=Tensor(eye), k=Tensor(eye), v=Tensor(eye),
        out_w=Tensor(out_w if out_w is not None else np.zeros(d)),
        out_b=Tensor(np.zeros(1)),
    )


class TestSelfAttention:
    def test_single_position_returns_value(self, rng):
        p = _identity_params(3)
        h = rng.normal(size=(1, 1, 3))
        out = self_attention(Tensor(h), p)
        np.testing.assert_allclose(out.data, h, atol=1e-12)

    def test_hand_computed_weights(self):
        # d_k = 1; keys (1, 3), values (1, 3), query 1:
        # scores (1, 3), weights (0.1192, 0.8808), output ~ 2.7616
        p = _identity_params(1)
        h = np.array([[[1.0], [3.0]]])
        out = self_attention(Tensor(h), p)
        scores = np.array([1.0, 3.0])
        w = np.exp(scores) / np.exp(scores).sum()
        assert w[0] == pytest.approx(0.1192, abs=1e-4)
        assert w[1] == pytest.approx(0.8808, abs=1e-4)
        assert out.data[0, 0, 0] == pytest.approx(2.7616, abs=1e-4)
        assert out.data[0, 0, 0] == pytest.approx(w @ np.array([1.0, 3.0]), abs=1e-12)

    def test_identical_keys_split_evenly(self):
        p = _identity_params(2)
        h = np.array([[[1.0, 0.0], [1.0, 0.0]]])
        out = self_attention(Tensor(h), p)
        # weights (0.5, 0.5) -> output equals the mean of the (equal) values
        np.testing.assert_allclose(out.data[0, 0], [1.0, 0.0], atol=1e-12)

    def test_scaling_by_sqrt_dk(self, rng):
        d = 4
        p = _identity_params(d)
        h = rng.normal(size=(1, 2, d))
        out = self_attention(Tensor(h), p).data
        scores = (h[0] @ h[0].T) / np.sqrt(d)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(out[0], w @ h[0], atol=1e-12)


class TestPredictLoss:
    def test_softplus_at_zero_activation(self):
        # zero value projection and zero readout give softplus(0) = ln 2
        p = _identity_params(3)
        h = np.zeros((2, 4, 3))
        out = predict_loss(Tensor(h), p, np.ones((2, 4)), np.array([4, 4]))
        np.testing.assert_allclose(out.data, np.log(2), atol=1e-12)

    def test_nonnegative(self, rng):
        p = AttentionParams.init(rng, 6, 3)
        h = rng.normal(size=(3, 5, 6)) * 3
        out = predict_loss(Tensor(h), p, np.ones((3, 5)), np.array([5, 5, 5]))
        assert (out.data >= 0).all()

    def test_padding_invariance(self, rng):
        # a sentence padded out to a longer batch scores identically
        p = AttentionParams.init(np.random.default_rng(0), 4, 3)
        h_real = rng.normal(size=(1, 3, 4))
        out_short = predict_loss(
            Tensor(h_real), p, np.ones((1, 3)), np.array([3])
        ).data[0]
        h_padded = np.concatenate([h_real, rng.normal(size=(1, 2, 4))], axis=1)
        mask = np.array([[1.0, 1.0, 1.0, 0.0, 0.0]])
        out_padded = predict_loss(Tensor(h_padded), p, mask, np.array([3])).data[0]
        assert out_padded == pytest.approx(out_short, abs=1e-12)


class TestLossHeadLoss:
    def test_zero_at_identity(self):
        pred = Tensor(np.array([1.0, 2.0]))
        assert loss_head_loss(pred, np.array([1.0, 2.0])).item() == 0.0

    def test_hand_example(self):
        pred = Tensor(np.array([1.0, 3.0]))
        assert loss_head_loss(pred, np.array([2.0, 2.0])).item() == pytest.approx(1.0)

    def test_quadratic_homogeneity(self):
        base = loss_head_loss(Tensor(np.array([3.0, 5.0])), np.array([1.0, 2.0])).item()
        scaled = loss_head_loss(
            Tensor(np.array([1.0 + 2 * 2.0, 2.0 + 2 * 3.0])), np.array([1.0, 2.0])
        ).item()
        assert scaled == pytest.approx(4 * base)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            loss_head_loss(Tensor(np.zeros(0)), np.zeros(0))


class TestJointLoss:
    def test_linear_combination(self):
        seg = Tensor(np.array([1.0, 3.0]))  # mean 2.0
        head = Tensor(np.array(0.25))
        assert joint_loss(seg, head, 1.0).item() == pytest.approx(2.25)

    def test_lambda_zero_drops_head(self):
        seg = Tensor(np.array([2.0, 4.0]))
        head = Tensor(np.array(100.0))
        assert joint_loss(seg, head, 0.0).item() == pytest.approx(3.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            joint_loss(Tensor(np.ones(2)), Tensor(np.array(1.0)), -1.0)


def _tiny_model(lam_corpus_seed=0, dropout=0.0):
    corpus = toy_corpus(12, seed=lam_corpus_seed)
    cv, nv = build_vocabs([c.sentence.chars for c in corpus], 2, ngram_min_freq=1)
    cfg = ModelConfig(
        char_dim=4, ngram_dim=4, hidden=8, attn_dim=3, dropout=dropout, ngram_order=2
    )
    return corpus, cv, nv, cfg


class TestJointTraining:
    def test_lambda_zero_bit_identical_to_segmenter_only(self):
        corpus, cv, nv, cfg = _tiny_model()
        runs = []
        for _ in range(2):
            model = JointModel(cfg, cv, nv, seed=7)
            train_model(model, corpus, TrainConfig(epochs=2, batch_size=4, lam=0.0, seed=7))
            runs.append({k: t.data.copy() for k, t in model.params().items()})
        for key in runs[0]:
            np.testing.assert_array_equal(runs[0][key], runs[1][key])

        # training with the head attached but lam=0 must not move the head
        # and must leave segmenter parameters exactly as at init + updates
        model_init = JointModel(cfg, cv, nv, seed=7)
        for name in model_init.params():
            if name.startswith("loss_head"):
                np.testing.assert_array_equal(
                    runs[0][name], model_init.params()[name].data
                )

    def test_gradients_flow_with_lambda_one(self):
        corpus, cv, nv, cfg = _tiny_model()
        model = JointModel(cfg, cv, nv, seed=3)
        batch = model.make_batch(
            [c.sentence for c in corpus[:4]], [c.tags for c in corpus[:4]]
        )
        # freeze the regression targets: the objective treats them as
        # constants, so the finite-difference probe must too
        with ad.no_grad():
            h0 = model.encode_batch(batch)
            targets = model.seg_nll(h0, batch).data.copy()

        def loss_fn():
            h = model.encode_batch(batch)
            nll = model.seg_nll(h, batch)
            head = loss_head_loss(model.head_losses(h, batch), targets)
            return joint_loss(nll, head, 1.0)

        err, name = fd_check_params(loss_fn, model.params(), max_entries_per_param=20)
        assert err < 1e-4, f"max rel err {err:.2e} at {name}"

    def test_no_gradient_through_targets(self):
        # shifting the constant targets changes head-loss gradients but not
        # the segmentation path: targets are outside the tape entirely
        corpus, cv, nv, cfg = _tiny_model()
        model = JointModel(cfg, cv, nv, seed=3)
        batch = model.make_batch(
            [c.sentence for c in corpus[:4]], [c.tags for c in corpus[:4]]
        )

        def seg_grads(target_shift):
            for t in model.params().values():
                t.grad = None
            h = model.encode_batch(batch)
            nll = model.seg_nll(h, batch)
            targets = nll.data.copy() + target_shift
            head = loss_head_loss(model.head_losses(h, batch), targets)
            ad.reduce_mean(nll).backward()
            return {
                k: t.grad.copy()
                for k, t in model.params().items()
                if t.grad is not None
            }

        g0 = seg_grads(0.0)
        g1 = seg_grads(10.0)
        for k in g0:
            np.testing.assert_array_equal(g0[k], g1[k])

    def test_frozen_encoder_blocks_head_gradient(self):
        corpus, cv, nv, cfg = _tiny_model()
        import dataclasses

        cfg = dataclasses.replace(cfg, freeze_encoder_for_head=True)
        model = JointModel(cfg, cv, nv, seed=3)
        batch = model.make_batch(
            [c.sentence for c in corpus[:4]], [c.tags for c in corpus[:4]]
        )
        for t in model.params().values():
            t.grad = None
        h = model.encode_batch(batch)
        head = loss_head_loss(model.head_losses(h, batch), np.zeros(4))
        head.backward()
        assert model.bilstm.fwd.W.grad is None
        assert model.head.q.grad is not None
