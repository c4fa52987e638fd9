"""Group-lasso solver: closed forms, OLS limit, KKT, CV behavior."""

import numpy as np
import pytest

from mixselect.basis import ExpandedDesign, Group, RawData, build_design
from mixselect.grouplasso import (cv_lambda, fit_cv, fit_group_lasso,
                                  fold_assignments, kkt_residuals,
                                  lambda_grid, lambda_max, ols_refit)


def _design(n=60, p=3, q=0, seed=0, k=2):
    rng = np.random.default_rng(seed)
    raw = RawData(X=rng.standard_normal((n, p)),
                  C=rng.standard_normal((n, q)) if q else None,
                  y=np.zeros(n))
    return build_design(raw, k), rng


def _single_column_design(n=50, seed=0):
    """One penalized size-1 group whose column satisfies u'u/n = 1."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n)
    u -= u.mean()
    u /= np.sqrt(u @ u / n)
    groups = [Group(gid=("main", 1), kind="main", start=0, size=1, weight=1.0)]
    return ExpandedDesign(D=u[:, None], groups=groups, transform=None), u, rng


def test_soft_threshold_closed_form():
    design, u, rng = _single_column_design()
    y = 0.8 * u + rng.standard_normal(u.size)
    z = float(u @ (y - y.mean())) / u.size
    for lam in (0.0, 0.3 * abs(z), 0.9 * abs(z), 1.5 * abs(z)):
        fit = fit_group_lasso(design, y, lam)
        expect = np.sign(z) * max(0.0, abs(z) - lam)
        assert fit.beta[0] == pytest.approx(expect, abs=1e-10)


def test_lambda_zero_equals_ols():
    design, rng = _design(n=80, p=3, q=1, seed=1)
    y = rng.standard_normal(80)
    fit = fit_group_lasso(design, y, 0.0)
    y_c = y - y.mean()
    ols, *_ = np.linalg.lstsq(design.D, y_c, rcond=None)
    assert np.max(np.abs(fit.beta - ols)) <= 1e-6


def test_null_fit_at_lambda_max():
    design, rng = _design(n=70, p=3, q=2, seed=2)
    y = rng.standard_normal(70) + design.D[:, 0] * 1.5  # covariate signal
    lmax = lambda_max(design, y)
    fit = fit_group_lasso(design, y, lmax * (1 + 1e-10))
    for g in design.groups:
        norm = np.linalg.norm(fit.beta[g.cols])
        if g.weight > 0:
            assert norm == 0.0
    # just below lambda_max something penalized must activate
    fit2 = fit_group_lasso(design, y, lmax * 0.99)
    assert any(np.linalg.norm(fit2.beta[g.cols]) > 0
               for g in design.groups if g.weight > 0)


def test_covariates_stay_unpenalized():
    design, rng = _design(n=90, p=2, q=1, seed=3)
    g_cov = design.groups[0]
    assert g_cov.kind == "covariate" and g_cov.weight == 0.0
    y = 2.0 * design.D[:, g_cov.start] + 0.1 * rng.standard_normal(90)
    fit = fit_group_lasso(design, y, lambda_max(design, y) * 2)
    assert abs(fit.beta[g_cov.start] - 2.0) < 0.1


def test_kkt_holds_along_cv_grid():
    design, rng = _design(n=80, p=3, q=1, seed=4)
    beta = np.zeros(design.n_cols)
    beta[design.group(("main", 1)).cols] = (1.0, -0.5)
    y = design.D @ beta + rng.standard_normal(80)
    grid = lambda_grid(lambda_max(design, y), 12)
    for lam in grid:
        fit = fit_group_lasso(design, y, lam)
        assert fit.converged
        rep = kkt_residuals(design, y, fit)
        assert rep.ok, f"KKT violated at lam={lam}: {rep}"


def test_objective_monotone_over_sweeps():
    design, rng = _design(n=60, p=4, q=0, seed=5)
    y = design.D[:, :2] @ np.array([1.0, 2.0]) + rng.standard_normal(60)
    lam = 0.3 * lambda_max(design, y)
    fit = fit_group_lasso(design, y, lam, record_objective=50)
    path = fit.objective_path
    assert path.size >= 2
    assert np.all(np.diff(path) <= 1e-12)


def test_solution_equivariant_to_within_group_permutation():
    design, rng = _design(n=70, p=2, q=0, seed=6)
    y = design.D @ rng.standard_normal(design.n_cols) + rng.standard_normal(70)
    lam = 0.2 * lambda_max(design, y)
    base = fit_group_lasso(design, y, lam)

    g = design.group(("main", 1))
    perm = np.arange(design.n_cols)
    perm[g.start], perm[g.start + 1] = g.start + 1, g.start
    design_p = ExpandedDesign(D=design.D[:, perm], groups=design.groups,
                              transform=design.transform)
    swapped = fit_group_lasso(design_p, y, lam)
    assert np.max(np.abs(swapped.beta[perm] - base.beta)) <= 1e-8


def test_sigma_hat_df_floor():
    design, rng = _design(n=9, p=2, q=0, seed=7)  # 8 columns, n = 9
    y = rng.standard_normal(9)
    fit = fit_group_lasso(design, y, 0.0)
    assert np.isfinite(fit.sigma_hat)


def test_nonconvergence_is_flagged_not_raised():
    design, rng = _design(n=80, p=4, q=0, seed=8)
    y = design.D @ rng.standard_normal(design.n_cols) + rng.standard_normal(80)
    fit = fit_group_lasso(design, y, 1e-4 * lambda_max(design, y), max_sweeps=2)
    assert not fit.converged


def test_negative_lambda_rejected():
    design, _ = _design(n=30, p=2, seed=9)
    with pytest.raises(ValueError):
        fit_group_lasso(design, np.zeros(30), -0.1)


def test_lambda_grid_shape_and_endpoints():
    g = lambda_grid(2.0, 30)
    assert g.size == 30
    assert g[0] == pytest.approx(2.0)
    assert g[-1] == pytest.approx(2.0e-3)
    ratios = g[1:] / g[:-1]
    assert np.allclose(ratios, ratios[0])  # geometric
    np.testing.assert_array_equal(lambda_grid(2.0, 1), [2.0])


def test_cv_single_lambda_returns_lambda_max():
    design, rng = _design(n=60, p=2, seed=10)
    y = rng.standard_normal(60)
    cv = cv_lambda(design, y, n_lambda=1)
    assert cv.lam == pytest.approx(lambda_max(design, y))


def test_cv_pure_noise_prefers_large_lambda():
    """Noise-only responses should select lambda in the top grid quartile."""
    hits = 0
    for seed in range(20):
        design, rng = _design(n=150, p=3, q=0, seed=100 + seed)
        y = rng.standard_normal(150)
        cv = cv_lambda(design, y, rng=np.random.default_rng(seed))
        top = cv.grid[: max(1, len(cv.grid) // 4)]
        hits += cv.lam >= top[-1]
    assert hits >= 16  # >= 80% of 20 seeds


def test_cv_strong_signal_activates_group():
    hits = 0
    for seed in range(20):
        design, rng = _design(n=150, p=3, q=0, seed=200 + seed)
        g = design.group(("main", 2))
        b = np.zeros(design.n_cols)
        b[g.cols] = (2.0, 1.0)
        signal = design.D @ b
        noise = rng.standard_normal(150)
        y = signal + noise * np.sqrt(signal.var() / (10 * noise.var()))  # SNR 10
        fit, _ = fit_cv(design, y, rng=np.random.default_rng(seed))
        hits += np.linalg.norm(fit.beta[g.cols]) > 0
    assert hits >= 19  # >= 95% of 20 seeds


def test_cv_1se_selects_no_smaller_lambda():
    design, rng = _design(n=120, p=3, q=0, seed=11)
    b = np.zeros(design.n_cols)
    b[design.group(("main", 1)).cols] = (1.0, 0.5)
    y = design.D @ b + rng.standard_normal(120)
    cv_min = cv_lambda(design, y, rng=np.random.default_rng(0))
    cv_1se = cv_lambda(design, y, rule="1se", rng=np.random.default_rng(0))
    assert cv_1se.lam >= cv_min.lam


def test_fit_cv_returns_full_precision_fit():
    design, rng = _design(n=100, p=3, q=1, seed=12)
    b = np.zeros(design.n_cols)
    b[design.group(("main", 3)).cols] = (1.5, -1.0)
    y = design.D @ b + rng.standard_normal(100)
    fit, cv = fit_cv(design, y, rng=np.random.default_rng(3))
    assert fit.lam == pytest.approx(cv.lam)
    assert fit.converged
    assert kkt_residuals(design, y, fit).ok


def test_fold_assignments_balanced_and_deterministic():
    a = fold_assignments(103, 5, np.random.default_rng(42))
    b = fold_assignments(103, 5, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
    counts = np.bincount(a, minlength=5)
    assert counts.max() - counts.min() <= 1
    assert counts.sum() == 103


def test_ols_refit_handles_collinear_columns():
    rng = np.random.default_rng(13)
    D = rng.standard_normal((50, 4))
    D[:, 3] = D[:, 0] - 2 * D[:, 1]  # exact collinearity
    y = D[:, 0] + rng.standard_normal(50)
    coef, cov, sigma, dropped = ols_refit(D, y)
    # exactly one of the dependent triple goes; which one is the QR pivot's call
    assert len(dropped) == 1 and dropped[0] in {0, 1, 3}
    d = dropped[0]
    assert coef[d] == 0.0 and np.all(cov[d] == 0.0)
    # fitted values are still the least-squares projection
    proj, *_ = np.linalg.lstsq(D, y, rcond=None)
    np.testing.assert_allclose(D @ coef, D @ proj, atol=1e-8)
    assert sigma > 0
