import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ustra import autodiff as ad
from ustra.errors import ContractError
from ustra.uncertainty import (
    PredictionStep,
    decompose,
    ensemble_moments,
    mean_uncertainties,
    mean_uncertainties_of_steps,
    ranking_loss,
    ranking_loss_node,
    uncertainty_traces,
)


def _simplex(rng, m, c=2):
    p = rng.random((m, c))
    return p / p.sum(axis=1, keepdims=True)


def _decompose_oracle(a):
    """Per-sample loops over the defining sums."""
    m = len(a)
    abar = sum(a) / m
    alt = sum(np.diag(x) - np.outer(x, x) for x in a) / m
    ept = sum(np.outer(x - abar, x - abar) for x in a) / m
    return alt, ept


class TestDecompose:
    def test_one_hot(self):
        alt, ept = decompose(np.array([[1.0, 0.0]] * 3))
        assert not alt.any() and not ept.any()

    def test_opposite_corners(self):
        step = PredictionStep(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert step.aleatoric == 0.0
        assert step.epistemic == 0.5

    def test_uniform(self):
        step = PredictionStep(np.full((4, 2), 0.5))
        assert step.aleatoric == 0.5
        assert not step.U_ept.any()

    def test_matches_loop_oracle(self, rng):
        a = _simplex(rng, 7, 3)
        alt, ept = decompose(a)
        ref_alt, ref_ept = _decompose_oracle(a)
        np.testing.assert_allclose(alt, ref_alt, atol=1e-15)
        np.testing.assert_allclose(ept, ref_ept, atol=1e-15)

    def test_batched_equals_loop(self, rng):
        a = _simplex(rng, 10 * 6).reshape(10, 6, 2)
        alt, ept = decompose(a)
        for t in range(6):
            ra, re = decompose(a[:, t])
            np.testing.assert_allclose(alt[t], ra, atol=1e-16)
            np.testing.assert_allclose(ept[t], re, atol=1e-16)

    def test_traces_match_matrices(self, rng):
        a = _simplex(rng, 10 * 5).reshape(10, 5, 2)
        alt, ept = decompose(a)
        ta, te = uncertainty_traces(a)
        np.testing.assert_allclose(ta, np.trace(alt, axis1=-2, axis2=-1), atol=1e-15)
        np.testing.assert_allclose(te, np.trace(ept, axis1=-2, axis2=-1), atol=1e-15)

    def test_empty(self):
        with pytest.raises(ContractError):
            decompose(np.empty((0, 2)))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**31))
    def test_identity_and_bounds(self, m, seed):
        a = _simplex(np.random.default_rng(seed), m)
        alt, ept = decompose(a)
        abar = a.mean(axis=0)
        total = np.mean([np.diag(x) for x in a], axis=0) - np.outer(abar, abar)
        np.testing.assert_allclose(alt + ept, total, atol=1e-12)
        assert np.linalg.eigvalsh(alt).min() >= -1e-12
        assert np.linalg.eigvalsh(ept).min() >= -1e-12
        assert np.trace(alt) <= 0.5 + 1e-15 and np.trace(ept) <= 0.5 + 1e-15


class TestRankingLoss:
    @pytest.mark.parametrize(
        "traces,expected",
        [((0.5, 0.3, 0.1), 0.0), ((0.3, 0.5), 0.2), ((0.4, 0.4, 0.6, 0.5), 0.2), ((0.7,), 0.0)],
    )
    def test_examples(self, traces, expected):
        assert ranking_loss(traces) == pytest.approx(expected, abs=1e-15)

    def test_zero_iff_non_increasing(self):
        for n in range(1, 6):
            for seq in itertools.product((0.1, 0.2, 0.3), repeat=n):
                monotone = all(a >= b for a, b in zip(seq, seq[1:]))
                loss = ranking_loss(seq)
                assert loss >= 0
                assert (loss == 0) == monotone, seq

    def test_node_matches_numpy(self, rng):
        tr = rng.random((3, 6))
        t = ad.Tape()
        node = ranking_loss_node(t.variable(tr))
        assert float(node.value) == pytest.approx(ranking_loss(tr).sum(), abs=1e-14)

    def test_node_gradient(self, rng):
        tr = rng.random((2, 5))
        assert ad.grad_check(ranking_loss_node, tr) < 1e-8


class TestEnsembleMoments:
    @pytest.mark.parametrize("m", [1, 2, 10])
    def test_matches_numpy(self, rng, m):
        samples = [_simplex(rng, 4) for _ in range(m)]
        t = ad.Tape()
        mean, ept = ensemble_moments([t.variable(s) for s in samples], m)
        arr = np.stack(samples)
        np.testing.assert_allclose(mean.value, arr.mean(axis=0), atol=1e-15)
        if m == 1:
            assert ept is None
        else:
            np.testing.assert_allclose(ept.value[:, 0], uncertainty_traces(arr)[1], atol=1e-15)


class TestMeans:
    def test_constant(self):
        assert mean_uncertainties([0.3] * 4, [0.3] * 4) == (pytest.approx(0.3), pytest.approx(0.3))

    def test_two_frames(self):
        assert mean_uncertainties([0.1, 0.3], [0.0, 0.0])[0] == pytest.approx(0.2)

    def test_flat_average_oracle(self, rng):
        alts = [rng.random(n) for n in (3, 7, 1)]
        epts = [rng.random(n) for n in (3, 7, 1)]
        acc_a = acc_e = 0.0
        count = 0
        for a, e in zip(alts, epts):
            for x, y in zip(a, e):
                acc_a += x
                acc_e += y
                count += 1
        mau, meu = mean_uncertainties(alts, epts)
        assert mau == pytest.approx(acc_a / count, abs=1e-15)
        assert meu == pytest.approx(acc_e / count, abs=1e-15)

    def test_of_steps(self, rng):
        steps = [PredictionStep(_simplex(rng, 5)) for _ in range(4)]
        mau, _ = mean_uncertainties_of_steps(steps)
        assert mau == pytest.approx(np.mean([s.aleatoric for s in steps]))

    def test_empty(self):
        with pytest.raises(ContractError):
            mean_uncertainties([], [])
