import numpy as np
import pytest

from segal import autodiff as ad
from segal.autodiff import Tensor
from segal.optim import Adam, NonFiniteGradientError, adam_step


class TestPrimitiveValues:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)

    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor([1.0, 1.0, 1.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3)

    def test_softplus_at_zero(self):
        assert ad.softplus(Tensor(0.0)).item() == pytest.approx(np.log(2), abs=1e-12)

    def test_softmax_rows_normalized(self, rng):
        x = Tensor(rng.normal(size=(5, 7)) * 10)
        s = ad.softmax(x).data
        assert (s >= 0).all()
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_concat_last_axis(self):
        out = ad.concat([Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 3)))])
        assert out.shape == (2, 5)


class TestDropout:
    def test_eval_mode_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        out = ad.dropout(x, 0.5, train=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_rate_zero_identity_in_train(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        out = ad.dropout(x, 0.0, train=True, rng=rng)
        np.testing.assert_array_equal(out.data, x.data)

    def test_inverted_scaling_preserves_mean(self, rng):
        x = Tensor(np.ones((200, 200)))
        out = ad.dropout(x, 0.3, train=True, rng=rng)
        kept = out.data[out.data > 0]
        assert kept[0] == pytest.approx(1 / 0.7)
        assert out.data.mean() == pytest.approx(1.0, abs=0.02)


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        y = ad.mul(x, x)
        y.backward()
        assert x.grad == pytest.approx(6.0)

    def test_sum_sigmoid_at_zero(self):
        x = Tensor(np.zeros(5), requires_grad=True)
        ad.reduce_sum(ad.sigmoid(x)).backward()
        np.testing.assert_allclose(x.grad, 0.25)

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()

    def test_diamond_graph_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        y = ad.add(ad.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
        y.backward()
        assert x.grad == pytest.approx(5.0)

    def test_detach_blocks_gradient(self):
        x = Tensor(2.0, requires_grad=True)
        y = ad.mul(x.detach(), x)
        y.backward()
        assert x.grad == pytest.approx(2.0)  # only the non-detached path

    def test_random_graph_matches_finite_differences(self, rng):
        def f(ps):
            a = ad.tanh(ad.matmul(ps["x"], ps["w"]))
            b = ad.softmax(ad.add(a, ps["b"]))
            c = ad.mul(ad.exp(ad.mul(ps["x"], 0.1)), 0.5)
            return ad.reduce_mean(
                ad.add(ad.reduce_sum(ad.mul(b, b), axis=-1), ad.reduce_sum(c, axis=-1))
            )

        params = {
            "x": rng.normal(size=(3, 4)),
            "w": rng.normal(size=(4, 5)),
            "b": rng.normal(size=(5,)),
        }
        ok, err, name = ad.grad_check(f, params)
        assert ok, f"max rel err {err:.2e} at {name}"

    def test_batched_matmul_matches_finite_differences(self, rng):
        def f(ps):
            s = ad.matmul(ps["q"], ad.transpose_last2(ps["k"]))
            return ad.reduce_sum(ad.mul(ad.softmax(s), 1.3))

        params = {"q": rng.normal(size=(2, 3, 4)), "k": rng.normal(size=(2, 3, 4))}
        ok, err, name = ad.grad_check(f, params)
        assert ok, f"max rel err {err:.2e} at {name}"

    def test_gather_flip_concat_matches_finite_differences(self, rng):
        ids = np.array([[0, 2, 1], [2, 2, 0]])

        def f(ps):
            x = ad.gather_rows(ps["table"], ids)
            y = ad.concat([x, ad.flip(x, axis=1)], axis=-1)
            return ad.reduce_mean(ad.mul(y, y))

        ok, err, name = ad.grad_check(f, {"table": rng.normal(size=(3, 4))})
        assert ok, f"max rel err {err:.2e} at {name}"

    def test_masked_fill_blocks_filled_entries(self, rng):
        keep = np.array([True, False, True])
        x = Tensor(np.ones(3), requires_grad=True)
        ad.reduce_sum(ad.masked_fill(x, keep, -1e9)).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 0.0, 1.0])


class TestGradCheckHarness:
    def test_cubic(self):
        ok, err, _ = ad.grad_check(
            lambda ps: ad.mul(ad.mul(ps["x"], ps["x"]), ps["x"]),
            {"x": np.array(2.0)},
        )
        assert ok and err < 1e-6

    def test_linear_exact(self):
        ok, err, _ = ad.grad_check(
            lambda ps: ad.reduce_sum(ad.mul(ps["x"], 3.0)),
            {"x": np.arange(4.0)},
        )
        assert ok and err < 1e-9


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0])
        m, v = np.zeros(2), np.zeros(2)
        adam_step(p, np.zeros(2), m, v, t=1)
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_first_step_magnitude_and_direction(self):
        # fresh state: mhat = g, vhat = g^2, update = -lr * g/(|g| + eps)
        p = np.array([0.0, 0.0])
        g = np.array([0.3, -0.7])
        adam_step(p, g, np.zeros(2), np.zeros(2), t=1, lr=1e-3)
        np.testing.assert_allclose(p, [-1e-3, 1e-3], rtol=1e-6)

    def test_quadratic_descent(self):
        # f(x) = x^2 from x=1: two steps strictly reduce the value
        x = np.array([1.0])
        m, v = np.zeros(1), np.zeros(1)
        f0 = float(x[0] ** 2)
        adam_step(x, 2 * x, m, v, t=1, lr=0.05)
        f1 = float(x[0] ** 2)
        adam_step(x, 2 * x, m, v, t=2, lr=0.05)
        f2 = float(x[0] ** 2)
        assert f2 < f1 < f0

    def test_non_finite_gradient_aborts(self):
        t = Tensor(np.ones(2), requires_grad=True)
        t.grad = np.array([1.0, np.nan])
        opt = Adam({"p": t})
        with pytest.raises(NonFiniteGradientError, match="p"):
            opt.step()

    def test_clip_norm(self):
        t = Tensor(np.zeros(2), requires_grad=True)
        t.grad = np.array([30.0, 40.0])  # norm 50
        opt = Adam({"p": t}, clip_norm=5.0)
        norm = opt.step()
        assert norm == pytest.approx(50.0)

    def test_frozen_and_pinned_rows(self):
        frozen = Tensor(np.ones(2), requires_grad=True)
        table = Tensor(np.ones((2, 2)), requires_grad=True)
        frozen.grad = np.ones(2)
        table.grad = np.ones((2, 2))
        opt = Adam(
            {"a": frozen, "emb": table},
            frozen={"a"},
            zero_rows={"emb": 0},
        )
        opt.step()
        np.testing.assert_array_equal(frozen.data, [1.0, 1.0])
        np.testing.assert_array_equal(table.data[0], [1.0, 1.0])
        assert (table.data[1] < 1.0).all()


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        from segal.optim import load_checkpoint, save_checkpoint

        params = {
            "b.weight": Tensor(rng.normal(size=(3, 4))),
            "a.bias": Tensor(rng.normal(size=5)),
        }
        path = tmp_path / "ckpt.npz"
        save_checkpoint(str(path), params, meta={"note": 1})
        arrays, meta = load_checkpoint(str(path))
        assert meta == {"note": 1}
        assert sorted(arrays) == ["a.bias", "b.weight"]
        np.testing.assert_array_equal(arrays["b.weight"], params["b.weight"].data)

    def test_deterministic_bytes(self, tmp_path, rng):
        from segal.optim import save_checkpoint

        params = {"w": Tensor(rng.normal(size=(4, 4))), "b": Tensor(np.ones(2))}
        p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
        save_checkpoint(str(p1), params)
        save_checkpoint(str(p2), params)
        assert p1.read_bytes() == p2.read_bytes()
