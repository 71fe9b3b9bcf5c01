"""Tests for the dense kernels and their adjoints."""

import math

import numpy as np
import pytest

from resus.core import kernels
from resus.core.errors import GradientCheckError, ShapeError, SingularSystemError


def _random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


class TestMatmul:
    """Tests for matmul and its adjoint."""

    def test_identity(self):
        """Test multiplying by the identity returns the operand."""
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(kernels.matmul(np.eye(2), b), b)

    def test_identity_adjoint(self):
        """Test dB equals dC when A is the identity."""
        _, db = kernels.matmul_adjoint(np.eye(2), np.zeros((2, 2)), np.ones((2, 2)))
        np.testing.assert_array_equal(db, np.ones((2, 2)))

    def test_shape_mismatch_names_operands(self):
        """Test incompatible shapes raise a ShapeError naming both operands."""
        with pytest.raises(ShapeError, match=r"A\(2, 3\).*B\(2, 2\)"):
            kernels.matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_adjoint_matches_finite_differences(self):
        """Test dA and dB against central differences on a random 3x4 @ 4x2."""
        rng = np.random.default_rng(0)
        weights = rng.normal(size=(3, 2))

        def f(params):
            c = kernels.matmul(params["a"], params["b"])
            da, db = kernels.matmul_adjoint(params["a"], params["b"], weights)
            return float(np.sum(c * weights)), {"a": da, "b": db}

        error = kernels.grad_check(f, {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))})
        assert error < 1e-6

    def test_vector_operand(self):
        """Test a 1-D right operand and its outer-product adjoint."""
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([1.0, -1.0])
        np.testing.assert_array_equal(kernels.matmul(a, b), [-1.0, -1.0])
        da, db = kernels.matmul_adjoint(a, b, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(da, [[1.0, -1.0], [0.0, 0.0]])
        np.testing.assert_array_equal(db, [1.0, 2.0])


class TestSolveSpd:
    """Tests for the SPD solve and its adjoint."""

    def test_scaled_identity(self):
        """Test 2I x = (2, 4, 6) gives (1, 2, 3)."""
        x = kernels.solve_spd(2 * np.eye(3), np.array([2.0, 4.0, 6.0]))
        np.testing.assert_allclose(x, [1.0, 2.0, 3.0])

    def test_unit_lambda_identity(self):
        """Test I x = e1 gives e1."""
        e1 = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(kernels.solve_spd(np.eye(3), e1), e1)

    def test_random_residual(self):
        """Test the relative residual of a random 30x30 system."""
        rng = np.random.default_rng(1)
        m = _random_spd(rng, 30)
        b = rng.normal(size=30)
        x = kernels.solve_spd(m, b)
        assert np.linalg.norm(m @ x - b) / np.linalg.norm(b) < 1e-10

    def test_no_jitter_for_well_conditioned(self):
        """Test a positive-definite matrix factors without jitter."""
        assert kernels.factor_spd(np.eye(4)).jitter == 0.0

    def test_jitter_rescues_singular_psd(self):
        """Test a rank-one PSD matrix factors after jitter escalation."""
        factor = kernels.factor_spd(np.ones((3, 3)))
        assert factor.jitter > 0.0

    def test_indefinite_raises_with_condition(self):
        """Test an indefinite matrix raises SingularSystemError after all jitter steps."""
        with pytest.raises(SingularSystemError) as info:
            kernels.solve_spd(-np.eye(3), np.ones(3))
        assert info.value.condition == pytest.approx(1.0)

    def test_non_square_raises(self):
        """Test a non-square matrix is rejected."""
        with pytest.raises(ShapeError):
            kernels.factor_spd(np.ones((2, 3)))

    def test_adjoint_identity(self):
        """Test db = dx for the identity system."""
        e1 = np.array([1.0, 0.0])
        b = np.array([0.3, -0.7])
        x = kernels.solve_spd(np.eye(2), b)
        _, db = kernels.solve_spd_adjoint(np.eye(2), b, x, e1)
        np.testing.assert_allclose(db, e1)

    def test_adjoint_closed_form(self):
        """Test dM equals the symmetrized -db x^T."""
        m = 3 * np.eye(3)
        b = np.array([3.0, 0.0, -3.0])
        x = kernels.solve_spd(m, b)
        dx = np.array([1.0, 2.0, 0.0])
        dm, db = kernels.solve_spd_adjoint(m, b, x, dx)
        expected = -np.outer(db, x)
        np.testing.assert_allclose(dm, 0.5 * (expected + expected.T))

    def test_adjoint_matches_finite_differences(self):
        """Test both adjoints of ||x||^2 on a random 5x5 system."""
        rng = np.random.default_rng(2)
        m = _random_spd(rng, 5)
        b = rng.normal(size=5)

        def loss(mm, bb):
            x = kernels.solve_spd(mm, bb)
            return float(x @ x), x

        _, x = loss(m, b)
        dm, db = kernels.solve_spd_adjoint(m, b, x, 2 * x)

        h = 1e-6
        for k in range(5):
            step = np.zeros(5)
            step[k] = h
            numeric = (loss(m, b + step)[0] - loss(m, b - step)[0]) / (2 * h)
            assert db[k] == pytest.approx(numeric, rel=1e-5, abs=1e-8)

        direction = rng.normal(size=(5, 5))
        direction = direction + direction.T
        numeric = (loss(m + h * direction, b)[0] - loss(m - h * direction, b)[0]) / (2 * h)
        assert np.sum(dm * direction) == pytest.approx(numeric, rel=1e-5, abs=1e-8)


class TestElementwise:
    """Tests for sigmoid, BCE, softmax and friends."""

    def test_sigmoid_zero(self):
        """Test sigmoid(0) is one half."""
        assert kernels.sigmoid(np.array(0.0)) == 0.5

    def test_bce_ln2(self):
        """Test BCE of a positive at 0.5 is ln 2."""
        assert kernels.bce_loss(np.array(1.0), np.array(0.5)) == pytest.approx(math.log(2))

    def test_bce_finite_at_extremes(self):
        """Test clamping keeps BCE finite at probabilities 0 and 1."""
        loss = kernels.bce_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.all(np.isfinite(loss))
        assert loss[0] == pytest.approx(-math.log(kernels.BCE_EPS))

    def test_softmax_shift_invariance(self):
        """Test softmax of a constant vector is uniform."""
        for c in (-50.0, 0.0, 3.5, 700.0):
            np.testing.assert_allclose(kernels.softmax_weights(np.full(3, c)), [1 / 3] * 3)

    def test_softmax_is_distribution(self):
        """Test softmax weights are nonnegative and sum to one per row."""
        scores = np.random.default_rng(3).normal(size=(4, 7)) * 10
        weights = kernels.softmax_weights(scores, axis=1)
        assert np.all(weights >= 0)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-6)

    @pytest.mark.parametrize(
        ("forward", "adjoint", "use_output"),
        [
            (kernels.sigmoid, kernels.sigmoid_adjoint, True),
            (kernels.softplus, kernels.softplus_adjoint, False),
            (kernels.relu, kernels.relu_adjoint, False),
        ],
    )
    def test_adjoints_match_finite_differences(self, forward, adjoint, use_output):
        """Test elementwise adjoints against central differences."""
        x0 = np.array([-1.3, -0.2, 0.4, 2.1])
        weights = np.array([0.5, -1.0, 2.0, 1.5])

        def f(params):
            y = forward(params["x"])
            grad = adjoint(y if use_output else params["x"], weights)
            return float(np.sum(y * weights)), {"x": grad}

        assert kernels.grad_check(f, {"x": x0}) < 1e-6

    def test_softmax_adjoint(self):
        """Test the softmax adjoint against central differences."""
        weights = np.array([0.2, -1.0, 0.7])

        def f(params):
            y = kernels.softmax_weights(params["s"])
            return float(y @ weights), {"s": kernels.softmax_adjoint(y, weights)}

        assert kernels.grad_check(f, {"s": np.array([0.1, 1.5, -0.3])}) < 1e-6

    def test_bce_adjoint(self):
        """Test the BCE adjoint inside the clamp range."""
        labels = np.array([1.0, 0.0, 1.0])

        def f(params):
            p = params["p"]
            return float(kernels.bce_loss(labels, p).sum()), {
                "p": kernels.bce_adjoint(labels, p, np.ones(3))
            }

        assert kernels.grad_check(f, {"p": np.array([0.3, 0.6, 0.9])}) < 1e-6


class TestInteractionKernels:
    """Tests for FM pooling and the absolute-difference similarity."""

    def test_fm_pool_zero(self):
        """Test zero embeddings pool to zero."""
        np.testing.assert_array_equal(kernels.fm_pool(np.zeros((4, 3))), np.zeros(3))

    def test_fm_pool_two_fields(self):
        """Test (1,2) and (3,4) pool to (6,16)."""
        np.testing.assert_allclose(kernels.fm_pool(np.array([[1.0, 2.0], [3.0, 4.0]])), [6.0, 16.0])

    def test_fm_pool_pairwise_oracle(self):
        """Test pooling equals twice the brute-force pairwise product sum."""
        rng = np.random.default_rng(4)
        for fields in (1, 3, 6):
            e = rng.normal(size=(fields, 5))
            brute = sum(2 * e[i] * e[j] for i in range(fields) for j in range(i + 1, fields))
            np.testing.assert_allclose(kernels.fm_pool(e), brute + np.zeros(5), atol=1e-10)

    def test_fm_pool_batched_adjoint(self):
        """Test the FM pooling adjoint on a (batch, fields, d) tensor."""
        rng = np.random.default_rng(5)
        weights = rng.normal(size=(2, 3))

        def f(params):
            y = kernels.fm_pool(params["e"])
            return float(np.sum(y * weights)), {"e": kernels.fm_pool_adjoint(params["e"], weights)}

        assert kernels.grad_check(f, {"e": rng.normal(size=(2, 4, 3))}) < 1e-6

    def test_abs_similarity_pairs(self):
        """Test every (query, support) entry equals w^T|q - s| + b."""
        rng = np.random.default_rng(6)
        q, s, w = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=4)
        scores = kernels.abs_similarity(q, s, w, 0.25)
        assert scores.shape == (3, 5)
        assert scores[2, 4] == pytest.approx(w @ np.abs(q[2] - s[4]) + 0.25)

    def test_abs_similarity_shape_error(self):
        """Test mismatched widths raise ShapeError."""
        with pytest.raises(ShapeError):
            kernels.abs_similarity(np.ones((1, 3)), np.ones((2, 4)), np.ones(3), 0.0)

    def test_abs_similarity_adjoint(self):
        """Test all four adjoints of the similarity kernel."""
        rng = np.random.default_rng(7)
        weights = rng.normal(size=(2, 3))

        def f(params):
            q, s, w, b = params["q"], params["s"], params["w"], params["b"]
            y = kernels.abs_similarity(q, s, w, float(b))
            dq, ds, dw, db = kernels.abs_similarity_adjoint(q, s, w, weights)
            return float(np.sum(y * weights)), {"q": dq, "s": ds, "w": dw, "b": np.asarray(db)}

        params = {
            "q": rng.normal(size=(2, 4)),
            "s": rng.normal(size=(3, 4)),
            "w": rng.normal(size=4),
            "b": np.asarray(0.1),
        }
        assert kernels.grad_check(f, params) < 1e-6


class TestGradCheck:
    """Tests for the finite-difference oracle itself."""

    def test_square(self):
        """Test f(w) = w^2 at w = 3."""

        def f(params):
            w = params["w"]
            return float(w[0] ** 2), {"w": 2 * w}

        assert kernels.grad_check(f, {"w": np.array([3.0])}) < 1e-6

    def test_detects_wrong_gradient(self):
        """Test a wrong analytic gradient yields a large error."""

        def f(params):
            w = params["w"]
            return float(w[0] ** 2), {"w": w}

        assert kernels.grad_check(f, {"w": np.array([3.0])}) > 1.0

    def test_non_finite_names_parameter(self):
        """Test a non-finite loss raises GradientCheckError naming the parameter."""

        def f(params):
            return float(np.log(params["w"][0])), {"w": 1 / params["w"]}

        with pytest.raises(GradientCheckError, match="w"):
            kernels.grad_check(f, {"w": np.array([0.0])}, h=1e-3)

    def test_max_entries_subsamples(self):
        """Test only max_entries entries are perturbed per parameter."""
        calls = []

        def f(params):
            calls.append(1)
            return float(np.sum(params["w"])), {"w": np.ones_like(params["w"])}

        kernels.grad_check(f, {"w": np.zeros(50)}, max_entries=4)
        assert len(calls) == 1 + 2 * 4
