"""Debiased group lasso with chi-squared group tests and FDR thresholding.

The penalized fit is corrected with a nodewise-lasso estimate Theta of the
precision matrix: beta_d = beta + (1/n) Theta D'(y - D beta). Under the null
for group g, T_g = beta_d,g' Omega_g^{-1} beta_d,g is approximately
chi-squared with df = group size, and a threshold t0 is chosen so the
estimated false discovery proportion stays at or below q.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from . import _solver
from .basis import ExpandedDesign, Group, RawData, build_design
from .exceptions import NumericalError
from .grouplasso import (GroupLassoFit, fit_cv, fold_assignments, _fold_grams,
                         CV_MAX_SWEEPS, CV_TOL, DEFAULT_TOL, DEFAULT_MAX_SWEEPS)
from .reports import SelectionReport
from .rng import substream


def chi2_sf(t: float | np.ndarray, df: int) -> float | np.ndarray:
    """Chi-squared survival function Q(df/2, t/2) (regularized upper gamma)."""
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    return scipy.special.gammaincc(df / 2.0, np.asarray(t, dtype=float) / 2.0)[()]


def chi2_isf(p: float, df: int) -> float:
    """Inverse of chi2_sf in t."""
    return 2.0 * float(scipy.special.gammainccinv(df / 2.0, p))


@dataclass
class NodewiseTheta:
    """Row-normalized nodewise precision estimate."""

    theta: np.ndarray
    tau2: np.ndarray
    lam: np.ndarray  # per-regression penalty actually used
    shared: bool

    def diag_check(self, sigma: np.ndarray) -> np.ndarray:
        """diag(Theta Sigma); equals 1 up to solver tolerance by construction."""
        return np.einsum("ij,ji->i", self.theta, sigma)


def nodewise_theta(design: ExpandedDesign, n_folds: int = 5, n_lambda: int = 30,
                   shared_lambda: float | None = None,
                   rng: np.random.Generator | None = None,
                   tol: float = DEFAULT_TOL,
                   max_sweeps: int = DEFAULT_MAX_SWEEPS) -> NodewiseTheta:
    """Nodewise lasso for every design column.

    Each column is regressed on the rest; the penalty is chosen per regression
    by K-fold CV on a geometric grid (or fixed at shared_lambda for every
    regression when given). Row j of Theta is [1, -gamma_j] / tau_j^2 with
    tau_j^2 = S_jj - S[:,j]'gamma_j, which makes diag(Theta S) = 1 exactly.
    """
    Sigma = design.gram()
    if np.any(np.diag(Sigma) <= 0):
        raise NumericalError("design has a zero-variance column; cannot run nodewise lasso")
    pt = design.n_cols
    if shared_lambda is None:
        if rng is None:
            rng = np.random.default_rng(0)
        labels = fold_assignments(design.n, n_folds, rng)
        y0 = np.zeros(design.n)
        S_tr, _, S_val, _, _ = _fold_grams(design, y0, labels, n_folds)
        gamma, tau2, lam = _solver.nodewise_cv(
            Sigma, S_tr, S_val, n_lambda, 1e-3, CV_TOL, CV_MAX_SWEEPS,
            tol, max_sweeps, -1.0)
        shared = False
    else:
        if shared_lambda <= 0:
            raise ValueError("shared_lambda must be positive")
        dummy = np.empty((1, pt, pt))
        gamma, tau2, lam = _solver.nodewise_cv(
            Sigma, dummy, dummy, max(n_lambda, 2), 1e-3, CV_TOL,
            CV_MAX_SWEEPS, tol, max_sweeps, float(shared_lambda))
        shared = True
    if np.any(tau2 <= 1e-12 * np.diag(Sigma)):
        bad = int(np.argmin(tau2 / np.diag(Sigma)))
        raise NumericalError(
            f"nodewise residual variance vanished at column {bad}; "
            "design too collinear for debiasing")
    theta = -gamma / tau2[:, None]
    theta[np.arange(pt), np.arange(pt)] = 1.0 / tau2
    return NodewiseTheta(theta=theta, tau2=tau2, lam=lam, shared=shared)


@dataclass
class DebiasedFit:
    """Debiased coefficients with covariance and per-group test statistics."""

    beta_d: np.ndarray
    cov: np.ndarray
    sigma_hat: float
    stats: dict  # gid -> chi-squared statistic (penalized groups)
    pvalues: dict  # gid -> survival probability at the statistic


def group_chi2_stat(beta_g: np.ndarray, omega_g: np.ndarray) -> float:
    """Quadratic form beta' Omega^{-1} beta via Cholesky; Omega must be PD."""
    try:
        cho = scipy.linalg.cho_factor(omega_g, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError("group covariance block is not positive definite") from exc
    z = scipy.linalg.cho_solve(cho, beta_g)
    return float(beta_g @ z)


def debias(fit: GroupLassoFit, design: ExpandedDesign, y: np.ndarray,
           nodewise: NodewiseTheta) -> DebiasedFit:
    """One-step correction of a penalized fit, with group statistics."""
    y = np.asarray(y, dtype=float).ravel()
    y_c = y - y.mean()
    n = design.n
    Sigma = design.gram()
    cty = design.D.T @ y_c / n
    theta = nodewise.theta
    beta_d = fit.beta + theta @ (cty - Sigma @ fit.beta)
    mid = theta @ Sigma @ theta.T
    cov = (fit.sigma_hat ** 2 / n) * mid
    stats: dict = {}
    pvalues: dict = {}
    for g in design.penalized_groups():
        omega = cov[g.cols, g.cols]
        try:
            t = group_chi2_stat(beta_d[g.cols], omega)
        except NumericalError as exc:
            raise NumericalError(f"group {g.label()}: {exc}") from exc
        stats[g.gid] = t
        pvalues[g.gid] = float(chi2_sf(t, g.size))
    return DebiasedFit(beta_d=beta_d, cov=cov, sigma_hat=fit.sigma_hat,
                       stats=stats, pvalues=pvalues)


def fdr_threshold_dbl(stats: np.ndarray, df: int, q: float) -> float:
    """Exact infimum t0 of { t > 0 : m (1 - C(t)) / max(1, R(t)) <= q }.

    R(t) = #{T > t}. The satisfying set is scanned piecewise: on each interval
    of constant rejection count the left end is either an observed statistic
    or the point where m * sf(t) crosses q * R. Thresholds that reject nothing
    are not candidates; +inf means no rejections at level q.
    """
    if not 0 < q < 1:
        raise ValueError(f"q must be in (0, 1), got {q}")
    T = np.asarray(stats, dtype=float).ravel()
    m = T.size
    if m == 0:
        return np.inf
    if np.any(T < 0):
        raise ValueError("statistics must be nonnegative")
    Ts = np.sort(T)
    best = np.inf
    for r in range(1, m + 1):
        lo = 0.0 if r == m else Ts[m - r - 1]
        hi = Ts[m - r]
        if not lo < hi:
            continue  # ties collapse this rejection count
        cross = chi2_isf(q * r / m, df)
        cand = max(lo, cross)
        if cand < hi and cand > 0.0 and cand < best:
            best = cand
    return float(best)


def threshold_groups(stats: dict, df: int, q: float) -> tuple[float, list]:
    """Apply fdr_threshold_dbl to a gid -> statistic map; select T > t0."""
    gids = list(stats.keys())
    values = np.array([stats[g] for g in gids])
    t0 = fdr_threshold_dbl(values, df, q)
    selected = [g for g, t in zip(gids, values) if t > t0]
    return t0, selected


def select_dbl(data: RawData, k: int = 2, q: float = 0.2, seed: int = 0,
               n_folds: int = 5, n_lambda: int = 30, rule: str = "min",
               shared_nodewise_lambda: float | None = None) -> SelectionReport:
    """Full debiased-lasso pipeline from raw data to a selection report.

    Interactions and main effects are thresholded as separate families, each
    with its own t0 (df = k^2 and df = k). Reported coefficients are the
    debiased estimates restricted to the selected blocks, with normal
    intervals from the corresponding covariance sub-block.
    """
    design = build_design(data, k)
    n = design.n
    if n < 2 * (k * k + k):
        warnings.warn(
            f"n = {n} is small for k = {k} (fewer than {2 * (k * k + k)} rows); "
            "debiased inference may be unreliable", UserWarning, stacklevel=2)
    rng_cv = substream(seed, "cv")
    fit, cv = fit_cv(design, data.y, n_folds=n_folds, n_lambda=n_lambda,
                     rule=rule, rng=rng_cv)
    ndw = nodewise_theta(design, n_folds=n_folds, n_lambda=n_lambda,
                         shared_lambda=shared_nodewise_lambda, rng=rng_cv)
    dfit = debias(fit, design, data.y, ndw)

    int_stats = {g: t for g, t in dfit.stats.items() if g[0] == "interaction"}
    main_stats = {g: t for g, t in dfit.stats.items() if g[0] == "main"}
    t0_int, sel_int = threshold_groups(int_stats, k * k, q)
    t0_main, sel_main = threshold_groups(main_stats, k, q)
    selected_pairs = sorted((g[1], g[2]) for g in sel_int)
    selected_mains = sorted(g[1] for g in sel_main)

    chosen: list[Group] = []
    pos = 0
    cols: list[np.ndarray] = []
    for g in design.groups:
        if (g.kind == "main" and g.gid[1] in selected_mains) or \
           (g.kind == "interaction" and (g.gid[1], g.gid[2]) in selected_pairs):
            chosen.append(Group(gid=g.gid, kind=g.kind, start=pos,
                                size=g.size, weight=g.weight))
            cols.append(np.arange(g.start, g.start + g.size))
            pos += g.size
    # spec order: selected main blocks first, then interactions; design order
    # already provides that
    idx = np.concatenate(cols) if cols else np.array([], dtype=int)
    coef = dfit.beta_d[idx]
    coef_cov = dfit.cov[np.ix_(idx, idx)] if idx.size else np.zeros((0, 0))

    cov_idx = np.array([g.start for g in design.groups if g.kind == "covariate"],
                       dtype=int)
    cov_coef = dfit.beta_d[cov_idx] if cov_idx.size else np.zeros(0)
    cov_se = (np.sqrt(np.diag(dfit.cov)[cov_idx]) if cov_idx.size else np.zeros(0))

    return SelectionReport(
        method="dbl", k=k, q=q, seed=seed,
        transform=design.transform,
        selected_mains=selected_mains,
        selected_pairs=selected_pairs,
        mixture_groups=chosen,
        coef=coef,
        coef_cov=coef_cov,
        intercept=fit.intercept,
        covariate_names=design.transform.covariate_names,
        covariate_coef=cov_coef,
        covariate_se=cov_se,
        sigma_hat=fit.sigma_hat,
        n_fit=n,
        intervals_caveat=False,
        diagnostics={
            "lambda": fit.lam,
            "cv_grid": cv.grid,
            "t0_interaction": t0_int,
            "t0_main": t0_main,
            "stats": dfit.stats,
            "pvalues": dfit.pvalues,
            "beta_debiased": dfit.beta_d,
            "cov_diag": np.diag(dfit.cov).copy(),
            "nodewise_lambda": ndw.lam,
            "group_cols": {g.gid: (g.start, g.size) for g in design.groups},
        },
    )
