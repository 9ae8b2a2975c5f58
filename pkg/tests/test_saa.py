import math

import numpy as np
import pytest

from ustra import autodiff as ad
from ustra import saa
from ustra.errors import ContractError, DimensionError
from ustra.relational import glorot


def _const(x):
    return ad.Tape().constant(x)


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class TestPool:
    def test_identical_nodes(self, rng):
        v = rng.standard_normal(3)
        out = saa.pool_states([_const(np.tile(v, (4, 1)))]).value
        np.testing.assert_allclose(out, [np.concatenate([v, v])], rtol=1e-15)

    def test_single_node(self, rng):
        h = rng.standard_normal((1, 3))
        out = saa.pool_states([_const(h)]).value
        np.testing.assert_array_equal(out, np.hstack([h, h]))

    def test_column_oracle(self, rng):
        hs = [rng.standard_normal((3, 4)) for _ in range(5)]
        t = ad.Tape()
        out = saa.pool_states([t.constant(h) for h in hs]).value
        for i, h in enumerate(hs):
            np.testing.assert_allclose(out[i, :4], [np.mean(h[:, j]) for j in range(4)], rtol=1e-14)
            np.testing.assert_array_equal(out[i, 4:], [max(h[:, j]) for j in range(4)])

    def test_stacked_form(self, rng):
        hs = rng.standard_normal((15, 4))
        a = saa.pool_states(_const(hs), n_nodes=3).value
        b = saa.pool_states([_const(hs[3 * i : 3 * i + 3]) for i in range(5)]).value
        np.testing.assert_array_equal(a, b)

    def test_empty(self):
        with pytest.raises(ContractError):
            saa.pool_states([])


class TestAttention:
    def test_single_step(self, rng):
        S = rng.standard_normal((1, 6))
        np.testing.assert_allclose(saa.self_attention(_const(S)).value, S, rtol=1e-15)

    def test_identical_rows(self, rng):
        S = np.tile(rng.standard_normal(6), (5, 1))
        np.testing.assert_allclose(saa.self_attention(_const(S)).value, S, rtol=1e-14)

    def test_matrix_oracle(self, rng):
        S = rng.standard_normal((4, 6))
        W = np.zeros((4, 4))
        for i in range(4):
            logits = [S[i] @ S[j] / math.sqrt(6) for j in range(4)]
            W[i] = _softmax(np.array(logits))
        np.testing.assert_allclose(saa.self_attention(_const(S)).value, W @ S, rtol=1e-12)

    def test_rows_in_convex_hull(self, rng):
        S = rng.standard_normal((6, 4)) * 3
        out = saa.self_attention(_const(S)).value
        assert np.all(out <= S.max(axis=0) + 1e-12)
        assert np.all(out >= S.min(axis=0) - 1e-12)


class TestScore:
    def _params(self, rng, h):
        p = saa.init_saa(rng, h, 4, glorot)
        p["saa_fc1_b"] = rng.standard_normal(h)
        p["saa_fc2_b"] = rng.standard_normal(2)
        return p

    def test_uniform_aggregation_is_mean(self, rng):
        S = rng.standard_normal((4, 6))
        agg = np.full((1, 4), 0.25)
        v = ad.matmul(_const(agg), _const(S)).value
        np.testing.assert_allclose(v[0], S.mean(axis=0), rtol=1e-14)
        np.testing.assert_array_equal(saa.init_saa(rng, 3, 4, glorot)["saa_agg"], agg)

    def test_zero_head(self, rng):
        p = {k: np.zeros(s) for k, s in saa.saa_shapes(3, 4).items()}
        a = saa.aggregate_and_score(_const(rng.standard_normal((4, 6))), p["saa_agg"], p).value
        np.testing.assert_array_equal(a, [[0.5, 0.5]])

    def test_dense_oracle(self, rng):
        p = self._params(rng, 3)
        p["saa_agg"] = rng.random((1, 4))
        S = rng.standard_normal((4, 6))
        a = saa.aggregate_and_score(_const(S), p["saa_agg"], p).value
        v = p["saa_agg"] @ S
        h = np.maximum(v @ p["saa_fc1_w"] + p["saa_fc1_b"], 0)
        np.testing.assert_allclose(a, _softmax(h @ p["saa_fc2_w"] + p["saa_fc2_b"]), rtol=1e-12)

    def test_length_mismatch(self, rng):
        p = self._params(rng, 3)
        with pytest.raises(DimensionError):
            saa.aggregate_and_score(_const(rng.standard_normal((5, 6))), p["saa_agg"], p)

    def test_head_gradients(self, rng):
        p0 = self._params(rng, 3)
        p0["saa_agg"] = rng.random((1, 4))
        hs = rng.standard_normal((12, 3))

        def build(tape, P):
            S = saa.pool_states(tape.constant(hs), n_nodes=3)
            return saa.video_bce(saa.saa_video_score(S, P), True)

        errs = ad.grad_check_params(build, p0)
        assert max(errs.values()) < 1e-4, errs


class TestBce:
    @pytest.mark.parametrize(
        "a,positive,expected",
        [((0.0, 1.0), True, 0.0), ((0.5, 0.5), True, math.log(2)), ((0.9, 0.1), False, -math.log(0.9))],
    )
    def test_examples(self, a, positive, expected):
        assert saa.video_bce(np.array(a), positive) == pytest.approx(expected, abs=1e-12)
        node = saa.video_bce(_const(np.array([a])), positive)
        assert float(node.value) == pytest.approx(expected, abs=1e-12)

    def test_clamped(self):
        assert saa.video_bce(np.array([1.0, 0.0]), True) == pytest.approx(-math.log(1e-12))
