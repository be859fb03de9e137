import numpy as np
import pytest
from scipy.special import comb

from nplcm.core import CovariateTable, InputError
from nplcm.regression import (
    bspline_basis,
    build_design,
    cscf_weights,
    first_difference_matrix,
    parse_formula,
    sample_coef_prior,
    spline_knots,
    subclass_weights,
    update_penalty_precisions,
)


class TestParseFormula:
    def test_intercept_only(self):
        f = parse_formula("~ 1")
        assert f.intercept and not f.terms

    def test_no_intercept_factor(self):
        f = parse_formula("~ -1 + factor(SITE)")
        assert not f.intercept
        assert f.terms[0].kind == "factor" and f.terms[0].column == "SITE"

    def test_as_factor_alias(self):
        f = parse_formula("~ as.factor(SITE)")
        assert f.terms[0].kind == "factor"

    def test_smooth(self):
        f = parse_formula("~ -1 + s(DATE, ps, dof=7) + factor(SITE)")
        sm = f.terms[0]
        assert sm.kind == "smooth" and sm.column == "DATE" and sm.dof == 7

    def test_smooth_with_basis_keyword(self):
        f = parse_formula('~ s(AGE, basis="ps", dof=5)')
        assert f.terms[0].dof == 5

    def test_small_dof_rejected(self):
        with pytest.raises(InputError, match="dof"):
            parse_formula("~ s(DATE, ps, dof=2)")

    def test_garbage_term(self):
        with pytest.raises(InputError, match="cannot parse"):
            parse_formula("~ log(AGE)")


def covs(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return CovariateTable.from_dict(
        {
            "AGE": rng.normal(50, 10, n),
            "SITE": rng.choice(["s1", "s2", "s3"], n).tolist(),
        }
    )


class TestBuildDesign:
    def test_factor_full_rank_without_intercept(self):
        d = build_design("~ -1 + factor(SITE)", covs())
        assert d.n_cols == 3
        assert np.allclose(d.matrix.sum(axis=1), 1.0)

    def test_factor_drop_first_with_intercept(self):
        d = build_design("~ 1 + factor(SITE)", covs())
        assert d.n_cols == 1 + 2

    def test_linear_standardized(self):
        d = build_design("~ -1 + AGE", covs())
        col = d.matrix[:, 0]
        assert col.mean() == pytest.approx(0.0, abs=1e-12)
        assert col.std() == pytest.approx(1.0, abs=1e-12)

    def test_empty_design_rejected(self):
        with pytest.raises(InputError, match="empty design"):
            build_design("~ -1", covs())

    def test_missing_column(self):
        with pytest.raises(InputError, match="missing column"):
            build_design("~ WEIGHT", covs())

    def test_prediction_rows_reuse_training_stats(self):
        c = covs()
        d = build_design("~ AGE + factor(SITE)", c)
        again = d.rows_for(c)
        assert np.allclose(again, d.matrix)

    def test_prediction_unseen_level_rejected(self):
        d = build_design("~ -1 + factor(SITE)", covs())
        newc = CovariateTable.from_dict({"SITE": ["s1", "s9"]})
        with pytest.raises(InputError, match="levels"):
            d.rows_for(newc)


class TestSpline:
    def test_partition_of_unity(self):
        x = np.linspace(-2, 2, 101)
        basis = bspline_basis(x, dof=7)
        assert np.abs(basis.sum(axis=1) - 1.0).max() < 1e-10

    def test_out_of_range_clamped(self):
        x = np.linspace(0, 1, 50)
        knots = spline_knots(x, 6)
        wide = bspline_basis(np.array([-5.0, 0.5, 7.0]), 6, knots=knots)
        edge = bspline_basis(np.array([0.0, 0.5, 1.0]), 6, knots=knots)
        assert np.allclose(wide, edge)

    def test_matches_bernstein_without_interior_knots(self):
        # dof = degree+1 means no interior knots: the basis reduces to
        # Bernstein polynomials on [min, max]
        x = np.linspace(0, 1, 21)
        basis = bspline_basis(x, dof=4, degree=3)
        bern = np.stack(
            [comb(3, i) * x**i * (1 - x) ** (3 - i) for i in range(4)], axis=1
        )
        assert np.allclose(basis, bern, atol=1e-12)

    def test_constant_column_rejected(self):
        with pytest.raises(InputError, match="constant"):
            spline_knots(np.ones(10), 6)


class TestLinks:
    def test_softmax_shift_invariance_exact(self):
        rng = np.random.default_rng(3)
        row = rng.normal(size=4)
        gamma = rng.normal(size=(3, 4))
        shifted = gamma + rng.normal()  # same constant added to every class
        assert np.array_equal(cscf_weights(row, gamma), cscf_weights(row, shifted))

    def test_cscf_simplex(self):
        rng = np.random.default_rng(4)
        w = cscf_weights(rng.normal(size=(10, 4)), rng.normal(size=(5, 4)))
        assert w.shape == (10, 5)
        assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-12

    def test_subclass_weights_simplex(self):
        rng = np.random.default_rng(5)
        w = subclass_weights(rng.normal(size=(8, 3)), rng.normal(size=(2, 3)), [0.2, -0.4])
        assert w.shape == (8, 3)
        assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-12

    def test_subclass_weights_k1(self):
        w = subclass_weights(np.zeros(3), np.empty((0, 3)), [])
        assert w.tolist() == [1.0]

    def test_large_predictors_stay_finite(self):
        w = cscf_weights(np.array([1e3, -1e3]), np.array([[800.0, 0.0], [0.0, 800.0]]))
        assert np.isfinite(w).all() and w.sum() == pytest.approx(1.0)


def test_first_difference_matrix():
    d = first_difference_matrix(4)
    assert np.allclose(d @ np.ones(4), 0.0)
    assert np.allclose(d @ np.arange(4.0), 1.0)


def test_penalty_precision_update_moments():
    # with beta fixed, tau | beta ~ Gamma(shape + (m-1)/2, rate + rss/2)
    c = covs(n=60, seed=8)
    d = build_design("~ -1 + s(AGE, ps, dof=6)", c)
    rng = np.random.default_rng(11)
    beta = rng.normal(size=d.n_cols)
    from nplcm.regression import TAU_PRIOR_RATE, TAU_PRIOR_SHAPE

    b = d.spline_blocks[0]
    rss = float(np.sum((first_difference_matrix(b.n_cols) @ beta[b.start:b.stop]) ** 2))
    want_mean = (TAU_PRIOR_SHAPE + (b.n_cols - 1) / 2) / (TAU_PRIOR_RATE + rss / 2)
    draws = np.array([update_penalty_precisions(beta, d, rng)[0] for _ in range(4000)])
    se = draws.std() / np.sqrt(len(draws))
    assert abs(draws.mean() - want_mean) < 4 * se


def test_sample_coef_prior_shapes():
    d = build_design("~ AGE + s(AGE, ps, dof=5)", covs())
    beta, taus = sample_coef_prior(d, np.random.default_rng(0))
    assert beta.shape == (d.n_cols,)
    assert taus.shape == (1,)
