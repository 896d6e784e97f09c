import math

import numpy as np
import pytest

from xnap import tensorcore as tc
from xnap.errors import NonFiniteInput, ShapeMismatch


def naive_matvec(w, x):
    """Scalar triple-loop oracle, independent of numpy's dot."""
    n, d = len(w), len(w[0])
    out = [0.0] * n
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += float(w[i][j]) * float(x[j])
        out[i] = acc
    return out


class TestMatvecAffine:
    def test_identity(self):
        x = np.array([1.5, -2.0, 3.0])
        assert np.array_equal(tc.matvec(np.eye(3), x), x)
        assert np.array_equal(tc.affine(np.eye(3), x, np.zeros(3)), x)

    def test_hand_example(self):
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(tc.affine(w, np.array([1.0, 1.0]), np.zeros(2)), [3.0, 7.0])

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n, d = rng.integers(1, 9, size=2)
            w = rng.normal(size=(n, d))
            x = rng.normal(size=d)
            b = rng.normal(size=n)
            expected = np.asarray(naive_matvec(w, x))
            assert np.max(np.abs(tc.matvec(w, x) - expected)) < 1e-12
            assert np.max(np.abs(tc.affine(w, x, b) - (expected + b))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tc.matvec(np.eye(3), np.zeros(2))
        with pytest.raises(ShapeMismatch):
            tc.affine(np.eye(3), np.zeros(3), np.zeros(2))


class TestNonlinearities:
    def test_fixed_points(self):
        assert tc.sigmoid(np.array([0.0]))[0] == 0.5
        assert tc.tanh_(np.array([0.0]))[0] == 0.0

    def test_ranges(self):
        x = np.linspace(-30, 30, 101)
        s, t = tc.sigmoid(x), tc.tanh_(x)
        assert np.all(s > 0) and np.all(s < 1)
        assert np.all(t >= -1) and np.all(t <= 1)

    def test_softmax_symmetry(self):
        assert np.allclose(tc.softmax(np.zeros(3)), [1 / 3] * 3)

    def test_softmax_stability(self):
        p = tc.softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0)

    def test_softmax_properties_random(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.normal(scale=10, size=rng.integers(1, 12))
            p = tc.softmax(x)
            assert np.all(p >= 0)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.argmax(p) == np.argmax(x)

    def test_nonfinite_rejected(self):
        for fn in (tc.sigmoid, tc.tanh_, tc.softmax):
            with pytest.raises(NonFiniteInput):
                fn(np.array([1.0, np.nan]))

    def test_elementwise_kernels_match_scalar_math(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            x = rng.normal(scale=4, size=int(rng.integers(1, 9)))
            sig = [1 / (1 + math.exp(-v)) if v >= 0
                   else math.exp(v) / (1 + math.exp(v)) for v in x]
            assert np.max(np.abs(tc.sigmoid(x) - sig)) < 1e-12
            assert np.max(np.abs(tc.tanh_(x) - [math.tanh(v) for v in x])) < 1e-12
            top = max(x)
            exps = [math.exp(v - top) for v in x]
            soft = [e / sum(exps) for e in exps]
            assert np.max(np.abs(tc.softmax(x) - soft)) < 1e-12


class TestCrossEntropy:
    def test_certain_prediction(self):
        assert tc.cross_entropy(np.array([1.0, 0.0, 0.0]), 0) == 0.0

    def test_fifty_fifty(self):
        assert tc.cross_entropy(np.array([0.5, 0.5]), 1) == pytest.approx(math.log(2))

    def test_zero_probability_clipped(self):
        loss = tc.cross_entropy(np.array([1.0, 0.0]), 1)
        assert loss == pytest.approx(-math.log(1e-12))
        assert math.isfinite(loss)

    def test_bad_index(self):
        with pytest.raises(ShapeMismatch):
            tc.cross_entropy(np.array([0.5, 0.5]), 2)

    def test_not_a_distribution(self):
        with pytest.raises(ValueError):
            tc.cross_entropy(np.array([0.7, 0.7]), 0)
