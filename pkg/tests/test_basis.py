"""B-spline bases, difference penalties, tensor products, centering."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhazard import (
    ConfigError,
    IndividualRecord,
    TermSpec,
    augment,
    bspline_basis,
    build_blocks,
    center_block,
    difference_penalty,
    tensor_product,
)
from dhazard.basis import build_block, row_kronecker


class TestBsplineBasis:
    def test_partition_of_unity(self):
        x = np.random.default_rng(0).uniform(-2, 5, size=400)
        B = bspline_basis(x, 10, 3)
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)

    def test_left_boundary_clamps(self):
        x = np.linspace(0, 1, 50)
        B = bspline_basis(x, 10, 3)
        assert B[0, 0] == pytest.approx(1.0)
        np.testing.assert_allclose(B[0, 1:], 0.0, atol=1e-14)

    def test_right_boundary_clamps(self):
        x = np.linspace(0, 1, 50)
        B = bspline_basis(x, 10, 3)
        assert B[-1, -1] == pytest.approx(1.0)

    def test_degree_one_midpoint(self):
        # hat functions: halfway between adjacent knots both are 0.5
        x = np.linspace(0.0, 1.0, 5)  # knots at 0, .25, .5, .75, 1
        B = bspline_basis(np.array([0.0, 0.125, 1.0]), 5, degree=1)
        np.testing.assert_allclose(B[1, :2], [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(B[1, 2:], 0.0, atol=1e-14)

    def test_degenerate_input_raises(self):
        with pytest.raises(ValueError):
            bspline_basis(np.full(10, 2.5), 10, 3)

    def test_shape(self):
        B = bspline_basis(np.linspace(0, 1, 30), 12, 3)
        assert B.shape == (30, 12)


class TestDifferencePenalty:
    def test_hand_product_d3_q2(self):
        K = difference_penalty(3, 2)
        np.testing.assert_array_equal(K, [[1, -2, 1], [-2, 4, -2], [1, -2, 1]])

    def test_affine_null_space_q2(self):
        K = difference_penalty(8, 2)
        m = np.arange(8.0)
        np.testing.assert_allclose(K @ (3.0 + 0.5 * m), 0.0, atol=1e-12)

    def test_constant_null_space_q1(self):
        K = difference_penalty(6, 1)
        np.testing.assert_allclose(K @ np.ones(6), 0.0, atol=1e-12)

    def test_null_space_dimension_is_order(self):
        for q in (1, 2, 3):
            K = difference_penalty(10, q)
            rank = np.linalg.matrix_rank(K)
            assert 10 - rank == q

    def test_dimension_error(self):
        with pytest.raises(ValueError):
            difference_penalty(2, 2)

    @given(st.integers(3, 12), st.integers(1, 2), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_positive_semidefinite(self, d, q, seed):
        K = difference_penalty(d, q)
        beta = np.random.default_rng(seed).normal(size=d)
        assert beta @ K @ beta >= -1e-12


class TestTensorProduct:
    def test_hand_row_kronecker(self):
        out = row_kronecker(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0, 5.0]]))
        np.testing.assert_array_equal(out, [[3, 4, 5, 6, 8, 10]])

    def test_identity_row_copies_other_margin(self):
        Bx = np.array([[0.0, 1.0, 0.0]])
        By = np.array([[0.2, 0.3, 0.5]])
        out = row_kronecker(Bx, By)
        np.testing.assert_allclose(out[0, 3:6], By[0])
        np.testing.assert_allclose(out[0, :3], 0.0)
        np.testing.assert_allclose(out[0, 6:], 0.0)

    def test_row_mismatch_raises(self):
        with pytest.raises(ValueError):
            row_kronecker(np.ones((3, 2)), np.ones((4, 2)))

    def test_bilinear_null_space(self):
        # constant-in-both-margins coefficients are annihilated by both parts
        Kx = difference_penalty(4, 2)
        Ky = difference_penalty(5, 2)
        _, (P1, P2) = tensor_product(np.ones((2, 4)) / 4, np.ones((2, 5)) / 5, Kx, Ky)
        u = np.arange(4.0)
        v = np.arange(5.0)
        bilinear = np.kron(1.0 + 2 * u, 3.0 - v)
        np.testing.assert_allclose(P1 @ bilinear, 0.0, atol=1e-10)
        np.testing.assert_allclose(P2 @ bilinear, 0.0, atol=1e-10)

    def test_penalty_shapes(self):
        x = np.linspace(0, 1, 40)
        Bx = bspline_basis(x, 5)
        By = bspline_basis(x ** 2, 6)
        design, (P1, P2) = tensor_product(
            Bx, By, difference_penalty(5, 2), difference_penalty(6, 2)
        )
        assert design.shape == (40, 30)
        assert P1.shape == P2.shape == (30, 30)


def small_dataset(n=60, seed=3):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        t = int(rng.integers(1, 6))
        records.append(
            IndividualRecord(
                i,
                t,
                int(rng.integers(0, 2)),
                {"x": float(rng.uniform(-1, 1)), "z": float(rng.uniform(0, 2))},
            )
        )
    return augment(records, 5)


class TestCenterBlock:
    def test_column_sums_zero_over_rows(self):
        ds = small_dataset()
        block = build_block(TermSpec("s(x)", "univariate_smooth", ("x",)), ds)
        X = block.rows(ds)
        np.testing.assert_allclose(X.sum(axis=0), 0.0, atol=1e-10)

    def test_idempotent(self):
        ds = small_dataset()
        block = build_block(TermSpec("s(x)", "univariate_smooth", ("x",)), ds)
        again = center_block(block)
        assert again is block

    def test_linear_term_shifted(self):
        ds = small_dataset()
        block = build_block(TermSpec("x", "linear", ("x",)), ds)
        X = block.rows(ds)
        assert abs(X.sum()) < 1e-10
        assert block.transform.shift is not None

    def test_penalty_transformed_consistently(self):
        ds = small_dataset()
        raw = build_block(
            TermSpec("s(x)", "univariate_smooth", ("x",)), ds, center=False
        )
        centered = center_block(raw)
        Z = centered.transform.basis_map
        np.testing.assert_allclose(
            centered.penalties[0], Z.T @ raw.penalties[0] @ Z, atol=1e-12
        )

    def test_centered_fit_matches_uncentered_on_eta(self):
        # intercept + smooth, penalized weighted least squares both ways
        ds = small_dataset(n=80, seed=9)
        rng = np.random.default_rng(5)
        y = rng.normal(size=ds.n_rows)
        w = rng.uniform(0.5, 1.5, size=ds.n_rows)
        tau = 2.5

        raw = build_block(
            TermSpec("s(x)", "univariate_smooth", ("x",)), ds, center=False
        )
        cen = center_block(raw)

        def fit_eta(block):
            X = np.column_stack([np.ones(ds.n_rows), block.rows(ds)])
            p = X.shape[1]
            P = np.zeros((p, p))
            P[1:, 1:] = tau * block.penalties[0]
            A = X.T @ (X * w[:, None]) + P
            beta = np.linalg.pinv(A) @ (X.T @ (w * y))
            return X @ beta

        np.testing.assert_allclose(fit_eta(raw), fit_eta(cen), atol=1e-8)


class TestBuildBlocks:
    def terms(self):
        return [
            TermSpec("baseline", "baseline_smooth"),
            TermSpec("s(x)", "univariate_smooth", ("x",)),
            TermSpec("z", "linear", ("z",)),
        ]

    def test_baseline_carries_single_intercept(self):
        ds = small_dataset()
        blocks = build_blocks(self.terms(), ds)
        assert blocks[0].has_intercept
        assert not blocks[1].has_intercept
        np.testing.assert_allclose(blocks[0].values[:, 0], 1.0)

    def test_requires_exactly_one_baseline(self):
        ds = small_dataset()
        with pytest.raises(ConfigError):
            build_blocks(self.terms()[1:], ds)

    def test_unknown_column_raises(self):
        ds = small_dataset()
        with pytest.raises(ConfigError):
            build_blocks(
                [
                    TermSpec("baseline", "baseline_smooth"),
                    TermSpec("s(q)", "univariate_smooth", ("q",)),
                ],
                ds,
            )

    def test_categorical_block(self):
        rng = np.random.default_rng(0)
        records = [
            IndividualRecord(
                i,
                int(rng.integers(1, 4)),
                0,
                {"g": ["a", "b", "c"][i % 3]},
            )
            for i in range(30)
        ]
        ds = augment(records, 4, categorical=("g",))
        blocks = build_blocks(
            [
                TermSpec("baseline", "baseline_smooth", basis_dim=5, degree=2),
                TermSpec("g", "categorical", ("g",)),
            ],
            ds,
        )
        g_block = blocks[1]
        assert g_block.ncoef == 2  # 3 levels minus the centering constraint
        X = g_block.rows(ds)
        np.testing.assert_allclose(X.sum(axis=0), 0.0, atol=1e-10)

    def test_termspec_validation(self):
        with pytest.raises(ConfigError):
            TermSpec("s(x)", "univariate_smooth", ("x",), basis_dim=4)
        with pytest.raises(ConfigError):
            TermSpec("s(x)", "univariate_smooth", ("x", "y"))
        with pytest.raises(ConfigError):
            TermSpec("s(x)", "no_such_kind", ("x",))

    def test_prediction_matches_training_design(self):
        ds = small_dataset()
        blocks = build_blocks(self.terms(), ds)
        rng = np.random.default_rng(1)
        for block in blocks:
            beta = rng.normal(size=block.ncoef)
            if block.term.kind == "baseline_smooth":
                inputs = {"__time__": ds.row_t.astype(float)}
            else:
                col = block.term.columns[0]
                inputs = {col: ds.covariates[col][ds.row_individual]}
            np.testing.assert_allclose(
                block.effect(beta, inputs), block.rows(ds) @ beta, atol=1e-12
            )
