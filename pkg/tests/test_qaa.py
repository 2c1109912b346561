import numpy as np
import pytest

from rgbtrack import qaa
from rgbtrack.gradcheck import check_param_grads
from rgbtrack.qaa import QAAParams


def make_params(rng, channels=6, d=5):
    return qaa.init_qaa_params(channels, d, rng)


class TestGlobalAvgPool:
    def test_constant_map(self):
        x = np.full((3, 4, 5), 2.75)
        np.testing.assert_array_equal(qaa.global_avg_pool(x), np.full(3, 2.75))

    def test_documented_2x2_mean(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        assert qaa.global_avg_pool(x)[0] == 2.5

    def test_zero_map(self):
        assert (qaa.global_avg_pool(np.zeros((4, 3, 3))) == 0).all()

    def test_empty_map_rejected(self):
        with pytest.raises(ValueError):
            qaa.global_avg_pool(np.zeros((3, 0, 2)))


class TestEmbed:
    def test_zero_matrix_gives_zero(self, rng):
        p = make_params(rng)
        p.w = np.zeros_like(p.w)
        assert (qaa.embed(rng.random(12), p) == 0).all()

    def test_zero_descriptor_gives_zero(self, rng):
        p = make_params(rng)
        assert (qaa.embed(np.zeros(12), p) == 0).all()

    def test_matches_naive_double_loop(self, rng):
        p = make_params(rng)
        f = rng.normal(size=12)
        z = qaa.embed(f, p)
        naive = np.zeros(p.d)
        for i in range(p.d):
            acc = 0.0
            for j in range(12):
                acc += p.w[i, j] * f[j]
            naive[i] = max(acc, 0.0)
        np.testing.assert_allclose(z, naive, atol=1e-9)

    def test_dimension_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            qaa.embed(np.zeros(5), make_params(rng))


class TestModalityAttention:
    def test_equal_logit_paths_give_half(self, rng):
        p = make_params(rng)
        p.w22 = p.w21.copy()
        a, b = qaa.modality_attention(rng.random(p.d), p)
        np.testing.assert_allclose(a, 0.5, atol=1e-12)
        np.testing.assert_allclose(b, 0.5, atol=1e-12)

    def test_scalar_softmax_value(self):
        # V_rgb = 1, V_t = 0 -> a = e / (e + 1)
        p = QAAParams(w=np.ones((1, 2)), w21=np.array([[1.0]]), w22=np.array([[0.0]]))
        a, b = qaa.modality_attention(np.array([1.0]), p)
        assert a[0] == pytest.approx(np.e / (np.e + 1.0), abs=1e-9)
        assert a[0] == pytest.approx(0.731059, abs=1e-6)

    def test_normalization_exact(self, rng):
        p = make_params(rng)
        for _ in range(50):
            a, b = qaa.modality_attention(rng.normal(size=p.d) * 10, p)
            assert np.max(np.abs(a + b - 1.0)) < 1e-12

    def test_pair_softmax_shift_invariance(self, rng):
        vr = rng.normal(size=16) * 5
        vt = rng.normal(size=16) * 5
        a1, b1 = qaa.pair_softmax(vr, vt)
        a2, b2 = qaa.pair_softmax(vr + 321.5, vt + 321.5)
        np.testing.assert_allclose(a1, a2, atol=1e-12)
        np.testing.assert_allclose(b1, b2, atol=1e-12)

    def test_overflow_safe(self):
        a, b = qaa.pair_softmax(np.array([1000.0]), np.array([0.0]))
        assert np.isfinite(a).all() and np.isfinite(b).all()
        assert a[0] == pytest.approx(1.0)


class TestFuse:
    def test_all_rgb_hook(self, rng):
        x_rgb = rng.normal(size=(4, 3, 3))
        x_t = rng.normal(size=(4, 3, 3))
        f = qaa.fuse(x_rgb, x_t, np.ones(4))
        np.testing.assert_allclose(f, x_rgb, rtol=1e-12, atol=1e-12)

    def test_half_weight_gives_mean(self, rng):
        x_rgb = rng.normal(size=(4, 3, 3))
        x_t = rng.normal(size=(4, 3, 3))
        f = qaa.fuse(x_rgb, x_t, np.full(4, 0.5))
        np.testing.assert_allclose(f, (x_rgb + x_t) / 2, atol=1e-12)

    def test_convex_bound_exact(self, rng):
        for _ in range(200):
            x_rgb = rng.normal(size=(5, 2, 2)) * rng.uniform(0.1, 100)
            x_t = rng.normal(size=(5, 2, 2)) * rng.uniform(0.1, 100)
            a = rng.random(5)
            f = qaa.fuse(x_rgb, x_t, a)
            lo = np.minimum(x_rgb, x_t)
            hi = np.maximum(x_rgb, x_t)
            assert (f >= lo).all() and (f <= hi).all()

    def test_shape_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            qaa.fuse(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)), np.full(3, 0.5))


class TestQaaForward:
    def test_identical_inputs_pass_through_exactly(self, rng):
        p = make_params(rng)
        x = rng.normal(size=(6, 4, 4))
        f, (a, b), _ = qaa.qaa_forward(x, x, p)
        np.testing.assert_array_equal(f, x)
        np.testing.assert_allclose(a + b, 1.0, atol=1e-12)

    def test_attention_shapes(self, rng):
        p = make_params(rng)
        x_rgb = rng.random((2, 6, 4, 4))
        x_t = rng.random((2, 6, 4, 4))
        f, (a, b), _ = qaa.qaa_forward(x_rgb, x_t, p)
        assert f.shape == x_rgb.shape and a.shape == (2, 6)

    def test_gradients_match_finite_differences(self, rng):
        p = make_params(rng)
        x_rgb = rng.random((1, 6, 3, 3))
        x_t = rng.random((1, 6, 3, 3))
        proj = rng.normal(size=(1, 6, 3, 3))

        def loss():
            f, _, _ = qaa.qaa_forward(x_rgb, x_t, p)
            return float((f * proj).sum())

        _, _, cache = qaa.qaa_forward(x_rgb, x_t, p)
        dx_rgb, dx_t, grads = qaa.qaa_backward(proj, cache, p)
        tensors = {"w": p.w, "w21": p.w21, "w22": p.w22, "x_rgb": x_rgb, "x_t": x_t}
        analytic = {"w": grads.w, "w21": grads.w21, "w22": grads.w22,
                    "x_rgb": dx_rgb, "x_t": dx_t}
        errs = check_param_grads(loss, tensors, analytic, rng=rng)
        assert max(errs.values()) < 1e-4, errs

    def test_gradients_with_bias_terms(self, rng):
        p = qaa.init_qaa_params(4, 3, rng, use_bias=True)
        # nonzero biases so every path is exercised
        p.b = rng.normal(size=3) * 0.1
        p.b21 = rng.normal(size=4) * 0.1
        p.b22 = rng.normal(size=4) * 0.1
        x_rgb = rng.random((1, 4, 3, 3))
        x_t = rng.random((1, 4, 3, 3))
        proj = rng.normal(size=(1, 4, 3, 3))

        def loss():
            f, _, _ = qaa.qaa_forward(x_rgb, x_t, p)
            return float((f * proj).sum())

        _, _, cache = qaa.qaa_forward(x_rgb, x_t, p)
        _, _, grads = qaa.qaa_backward(proj, cache, p)
        tensors = {"b": p.b, "b21": p.b21, "b22": p.b22}
        analytic = {"b": grads.b, "b21": grads.b21, "b22": grads.b22}
        errs = check_param_grads(loss, tensors, analytic, rng=rng)
        assert max(errs.values()) < 1e-4, errs
