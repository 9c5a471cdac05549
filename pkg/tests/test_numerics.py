import math

import numpy as np
import pytest

from roi_attend.numerics import (
    EvaluationError,
    SeededRng,
    ShapeError,
    activation,
    grad_check,
    matmul,
    sigmoid,
    softmax,
    tanh,
)


class TestMatmul:
    def test_hand_expanded_product(self):
        out = matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(out, [[19.0, 22.0], [43.0, 50.0]])

    def test_identity_left_factor(self):
        m = np.arange(12, dtype=np.float64).reshape(3, 4)
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_zero_matrix_annihilates(self):
        out = matmul(np.zeros((2, 3)), np.ones((3, 4)))
        assert out.shape == (2, 4)
        assert not out.any()

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as exc:
            matmul(np.ones((2, 3)), np.ones((4, 2)))
        assert "(2, 3)" in str(exc.value)
        assert "(4, 2)" in str(exc.value)

    def test_rejects_vectors(self):
        with pytest.raises(ShapeError):
            matmul(np.ones(3), np.ones((3, 2)))

    def test_associativity_on_random_matrices(self):
        rng = SeededRng(7)
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4, 5))
            c = rng.normal(size=(5, 2))
            np.testing.assert_allclose(
                matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9
            )

    def test_overflow_is_an_error_not_inf(self):
        with np.errstate(over="ignore"), pytest.raises(EvaluationError):
            matmul([[1e308, 1e308]], [[1e308], [1e308]])


class TestSoftmax:
    def test_uniform_for_equal_scores(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), np.full(3, 1 / 3), atol=1e-12)

    def test_log_counts_give_proportions(self):
        out = softmax([math.log(1), math.log(2), math.log(3)])
        np.testing.assert_allclose(out, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_large_scores_do_not_overflow(self):
        out = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-12)

    def test_shift_invariance(self):
        rng = SeededRng(3)
        v = rng.normal(size=9)
        for c in (-5.0, 0.25, 1e6):
            np.testing.assert_allclose(softmax(v), softmax(v + c), atol=1e-12)

    def test_sums_to_one_and_preserves_argmax(self):
        rng = SeededRng(4)
        for _ in range(50):
            v = rng.normal(scale=10.0, size=6)
            out = softmax(v)
            assert abs(out.sum() - 1.0) <= 1e-12
            assert np.argmax(out) == np.argmax(v)

    def test_empty_input_rejected(self):
        with pytest.raises(ShapeError):
            softmax([])


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_tanh_at_zero(self):
        assert tanh(0.0) == 0.0

    def test_sigmoid_symmetry(self):
        assert sigmoid(2.5) + sigmoid(-2.5) == pytest.approx(1.0, abs=1e-15)

    def test_open_interval_ranges(self):
        v = np.linspace(-8, 8, 33)
        s = sigmoid(v)
        t = tanh(v)
        assert np.all((s > 0) & (s < 1))
        assert np.all((t > -1) & (t < 1))

    def test_activation_dispatch(self):
        np.testing.assert_array_equal(activation([0.3], "sigmoid"), sigmoid([0.3]))
        np.testing.assert_array_equal(activation([0.3], "tanh"), tanh([0.3]))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            activation([0.0], "relu")


class TestGradCheck:
    def test_quadratic_closed_form(self):
        theta = np.array([1.0, 2.0])
        report = grad_check(lambda t: float(t @ t), theta, 2.0 * theta, h=1e-5)
        assert report.max_rel_err < 1e-8
        np.testing.assert_allclose(report.analytic, [2.0, 4.0])

    def test_sine_closed_form(self):
        report = grad_check(
            lambda t: math.sin(t[0]), np.array([0.3]), np.array([math.cos(0.3)]), h=1e-5
        )
        assert report.max_rel_err < 1e-8

    def test_constant_function(self):
        report = grad_check(lambda t: 5.0, np.zeros(4), np.zeros(4), h=1e-5)
        assert report.max_rel_err == 0.0
        assert report.mean_rel_err == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            grad_check(lambda t: float(t.sum()), np.zeros(3), np.zeros(2))

    def test_nonpositive_step_rejected(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: 0.0, np.zeros(1), np.zeros(1), h=0.0)

    def test_nonfinite_value_names_coordinate(self):
        def f(t):
            return float("nan") if t[1] != 0 else 0.0

        with pytest.raises(EvaluationError) as exc:
            grad_check(f, np.zeros(3), np.zeros(3))
        assert "1" in str(exc.value)


class TestSeededRng:
    def test_equal_seeds_equal_streams(self):
        a = SeededRng(42).uniform(size=10_000)
        b = SeededRng(42).uniform(size=10_000)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(SeededRng(1).uniform(size=100), SeededRng(2).uniform(size=100))

    def test_state_roundtrip_resumes_stream(self):
        rng = SeededRng(9)
        rng.normal(size=17)
        blob = rng.get_state()
        want = rng.uniform(size=5)
        resumed = SeededRng.from_state(blob)
        np.testing.assert_array_equal(resumed.uniform(size=5), want)
        assert resumed.seed == 9

    def test_seed_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            SeededRng(-1)
        with pytest.raises(ValueError):
            SeededRng(2**64)

    def test_permutation_is_a_permutation(self):
        perm = SeededRng(5).permutation(30)
        assert sorted(perm.tolist()) == list(range(30))

    def test_foreign_state_rejected(self):
        with pytest.raises(ValueError):
            SeededRng.from_state('{"bit_generator": "MT19937", "seed": 0}')
