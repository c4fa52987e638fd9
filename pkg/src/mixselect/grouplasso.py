"""Group lasso with unpenalized covariates, plus lambda selection by CV.

The objective is (1/2n)||y - D beta||^2 + lam * sum_g w_g ||beta_g||_2 with
w_g = sqrt(group size) for penalized groups and w_g = 0 for covariates. The
intercept is absorbed by centering y (design columns are already centered).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _solver
from .basis import ExpandedDesign
from .exceptions import NumericalError

DEFAULT_TOL = 1e-7
DEFAULT_MAX_SWEEPS = 100_000
LAMBDA_MIN_RATIO = 1e-3
# exploration fits only; the fit at the selected lambda uses the defaults
# above (augmented designs make twin groups nearly collinear, and exact
# coordinate descent there can need 1e5 sweeps that change nothing relevant)
CV_TOL = 1e-5
CV_MAX_SWEEPS = 300
PATH_MAX_SWEEPS = 2_000


@dataclass
class GroupLassoFit:
    """Solution at one penalty value, on centered columns."""

    beta: np.ndarray
    intercept: float  # mean of y; valid for centered design columns
    lam: float
    sigma_hat: float
    df: int
    n_sweeps: int
    converged: bool
    objective_path: np.ndarray  # per-sweep objective (first sweeps only)
    group_norms: dict
    active: list  # gids with nonzero blocks

    def coef_block(self, design: ExpandedDesign, gid: tuple) -> np.ndarray:
        return self.beta[design.group(gid).cols]


@dataclass
class CVResult:
    lam: float
    grid: np.ndarray
    mean_err: np.ndarray
    se_err: np.ndarray
    rule: str
    fold_assign: np.ndarray


@dataclass
class KKTReport:
    max_active: float
    max_inactive: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_active <= self.tol and self.max_inactive <= self.tol


def _solver_arrays(design: ExpandedDesign):
    starts = np.array([g.start for g in design.groups], dtype=np.int64)
    sizes = np.array([g.size for g in design.groups], dtype=np.int64)
    weights = np.array([g.weight for g in design.groups], dtype=np.float64)
    return starts, sizes, weights


def _design_eig(design: ExpandedDesign, starts: np.ndarray, sizes: np.ndarray):
    """Eig buffers for the full-design Gram, cached on the design."""
    if design._eig is None:
        design._eig = _solver.group_eig_buffers(design.gram(), starts, sizes)
    return design._eig


def lambda_max(design: ExpandedDesign, y: np.ndarray) -> float:
    """Smallest lambda at which every penalized group is zero.

    Covariates are unpenalized, so the check uses the residual of y on the
    covariate columns (OLS), not y itself.
    """
    y_c = y - y.mean()
    cov_cols = [g.start for g in design.groups if g.weight == 0.0]
    if cov_cols:
        Ccols = design.D[:, cov_cols]
        coef, *_ = np.linalg.lstsq(Ccols, y_c, rcond=None)
        r = y_c - Ccols @ coef
    else:
        r = y_c
    n = design.n
    lmax = 0.0
    for g in design.groups:
        if g.weight == 0.0:
            continue
        corr = design.D[:, g.cols].T @ r / n
        lmax = max(lmax, float(np.linalg.norm(corr)) / g.weight)
    return lmax


def fit_group_lasso(design: ExpandedDesign, y: np.ndarray, lam: float,
                    beta0: np.ndarray | None = None, tol: float = DEFAULT_TOL,
                    max_sweeps: int = DEFAULT_MAX_SWEEPS,
                    record_objective: int = 0,
                    order: np.ndarray | None = None) -> GroupLassoFit:
    """Solve the group lasso at one penalty value.

    record_objective > 0 stores the objective after each of the first that
    many sweeps (used by the monotonicity tests). order, when given, sets the
    block sweep order (knockoff fits randomize twin precedence with it).
    Raises on negative lam.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != design.n:
        raise ValueError(f"y has {y.shape[0]} rows, design has {design.n}")
    ybar = float(y.mean())
    y_c = y - ybar
    n = design.n
    Sigma = design.gram()
    cty = design.D.T @ y_c / n
    yty = float(y_c @ y_c) / n
    starts, sizes, weights = _solver_arrays(design)
    d_flat, u_flat, d_off, u_off = _design_eig(design, starts, sizes)
    if beta0 is None:
        beta0 = np.zeros(design.n_cols)
    if order is None:
        order = np.arange(len(design.groups), dtype=np.int64)
    beta, sweeps, converged, obj = _solver.bcd_fit(
        Sigma, cty, starts, sizes, weights, d_flat, u_flat, d_off, u_off,
        float(lam), np.asarray(beta0, dtype=float), tol, max_sweeps, yty,
        int(record_objective), np.asarray(order, dtype=np.int64))
    resid = y_c - design.D @ beta
    df = int(np.count_nonzero(beta))
    dfree = max(n - df, 1)
    sigma_hat = float(np.linalg.norm(resid) / np.sqrt(dfree))
    norms = {g.gid: float(np.linalg.norm(beta[g.cols])) for g in design.groups}
    active = [g.gid for g in design.groups if norms[g.gid] > 0.0]
    return GroupLassoFit(beta=beta, intercept=ybar, lam=float(lam),
                         sigma_hat=sigma_hat, df=df, n_sweeps=int(sweeps),
                         converged=bool(converged), objective_path=obj,
                         group_norms=norms, active=active)


def lambda_grid(lmax: float, n_lambda: int) -> np.ndarray:
    """Geometric grid from lambda_max down to lambda_max * 1e-3."""
    if n_lambda < 1:
        raise ValueError("n_lambda must be >= 1")
    if n_lambda == 1:
        return np.array([lmax])
    t = np.arange(n_lambda) / (n_lambda - 1)
    return lmax * LAMBDA_MIN_RATIO ** t


def fold_assignments(n: int, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic fold labels (0..n_folds-1) from the given generator."""
    if not 2 <= n_folds <= n:
        raise ValueError(f"n_folds must be in [2, n], got {n_folds}")
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=np.int64)
    sizes = np.full(n_folds, n // n_folds)
    sizes[: n % n_folds] += 1
    pos = 0
    for f in range(n_folds):
        labels[perm[pos:pos + sizes[f]]] = f
        pos += sizes[f]
    return labels


def _fold_grams(design: ExpandedDesign, y_c: np.ndarray, labels: np.ndarray,
                n_folds: int):
    """Training and validation Gram quantities for every fold."""
    D = design.D
    n, pt = D.shape
    S_sum = design.gram() * n
    c_sum = D.T @ y_c
    S_tr = np.empty((n_folds, pt, pt))
    c_tr = np.empty((n_folds, pt))
    S_val = np.empty((n_folds, pt, pt))
    c_val = np.empty((n_folds, pt))
    yty_val = np.empty(n_folds)
    for f in range(n_folds):
        idx = labels == f
        Dv = D[idx]
        yv = y_c[idx]
        nv = Dv.shape[0]
        nt = n - nv
        Sv = Dv.T @ Dv
        cv = Dv.T @ yv
        S_tr[f] = (S_sum - Sv) / nt
        c_tr[f] = (c_sum - cv) / nt
        S_val[f] = Sv / nv
        c_val[f] = cv / nv
        yty_val[f] = float(yv @ yv) / nv
    return S_tr, c_tr, S_val, c_val, yty_val


def cv_lambda(design: ExpandedDesign, y: np.ndarray, n_folds: int = 5,
              n_lambda: int = 30, rule: str = "min",
              rng: np.random.Generator | None = None,
              tol: float = CV_TOL, max_sweeps: int = CV_MAX_SWEEPS,
              order: np.ndarray | None = None) -> CVResult:
    """Select lambda by K-fold CV on a geometric grid under lambda_max.

    rule "min" picks the grid point with the smallest mean held-out error;
    "1se" picks the largest lambda within one standard error of that minimum.
    Ties resolve to the larger lambda. Folds reuse the full-sample column
    centering. n_lambda == 1 returns lambda_max without any fitting.

    Fold fits run at a looser tolerance than the final fit: held-out error
    curves are flat at that scale, while exact paths on rank-deficient fold
    Grams (augmented designs have twice the columns) can take orders of
    magnitude more sweeps near the grid floor for no change in the selected
    lambda. The fit at the selected lambda is always refit at full precision.
    """
    if rule not in ("min", "1se"):
        raise ValueError(f"rule must be 'min' or '1se', got {rule!r}")
    y = np.asarray(y, dtype=float).ravel()
    lmax = lambda_max(design, y)
    grid = lambda_grid(lmax, n_lambda)
    if n_lambda == 1:
        return CVResult(lam=float(lmax), grid=grid, mean_err=np.zeros(1),
                        se_err=np.zeros(1), rule=rule,
                        fold_assign=np.zeros(design.n, dtype=np.int64))
    if rng is None:
        rng = np.random.default_rng(0)
    labels = fold_assignments(design.n, n_folds, rng)
    y_c = y - y.mean()
    S_tr, c_tr, S_val, c_val, yty_val = _fold_grams(design, y_c, labels, n_folds)
    starts, sizes, weights = _solver_arrays(design)
    d_all, u_all = [], []
    for f in range(n_folds):
        d_flat, u_flat, d_off, u_off = _solver.group_eig_buffers(S_tr[f], starts, sizes)
        d_all.append(d_flat)
        u_all.append(u_flat)
    if order is None:
        order = np.arange(len(design.groups), dtype=np.int64)
    err = _solver.cv_group_path(S_tr, c_tr, S_val, c_val, yty_val,
                                starts, sizes, weights,
                                np.stack(d_all), np.stack(u_all), d_off, u_off,
                                grid, tol, max_sweeps,
                                np.asarray(order, dtype=np.int64))
    mean_err = err.mean(axis=0)
    se_err = err.std(axis=0, ddof=1) / np.sqrt(n_folds)
    i_min = int(np.argmin(mean_err))
    if rule == "1se":
        cutoff = mean_err[i_min] + se_err[i_min]
        i_sel = int(np.argmax(mean_err <= cutoff))  # grid descends, first hit is largest lam
    else:
        i_sel = i_min
    return CVResult(lam=float(grid[i_sel]), grid=grid, mean_err=mean_err,
                    se_err=se_err, rule=rule, fold_assign=labels)


def fit_cv(design: ExpandedDesign, y: np.ndarray, n_folds: int = 5,
           n_lambda: int = 30, rule: str = "min",
           rng: np.random.Generator | None = None,
           order: np.ndarray | None = None) -> tuple[GroupLassoFit, CVResult]:
    """CV-select lambda, then fit at it along a warm-started path.

    Intermediate path fits only provide warm starts and run at the loose CV
    tolerance; the returned fit, at the selected lambda, uses full precision.
    """
    cv = cv_lambda(design, y, n_folds=n_folds, n_lambda=n_lambda, rule=rule,
                   rng=rng, order=order)
    beta = np.zeros(design.n_cols)
    for lam in cv.grid:
        if lam <= cv.lam:
            break
        warm = fit_group_lasso(design, y, lam, beta0=beta,
                               tol=CV_TOL, max_sweeps=PATH_MAX_SWEEPS,
                               order=order)
        beta = warm.beta
    return fit_group_lasso(design, y, cv.lam, beta0=beta, order=order), cv


def kkt_residuals(design: ExpandedDesign, y: np.ndarray, fit: GroupLassoFit) -> KKTReport:
    """Stationarity residuals of a fit, against tol = 1e-6 * ||y||_2.

    Active groups need ||grad_g + lam w_g beta_g/||beta_g|| || <= tol;
    inactive penalized groups need ||grad_g|| <= lam w_g + tol. Unpenalized
    groups must have (near) zero gradient.
    """
    y = np.asarray(y, dtype=float).ravel()
    y_c = y - y.mean()
    n = design.n
    grad = -(design.D.T @ (y_c - design.D @ fit.beta)) / n
    tol = 1e-6 * float(np.linalg.norm(y))
    max_active = 0.0
    max_inactive = 0.0
    for g in design.groups:
        b = fit.beta[g.cols]
        gg = grad[g.cols]
        nb = np.linalg.norm(b)
        if g.weight == 0.0 or nb > 0:
            direction = b / nb if nb > 0 else np.zeros_like(b)
            viol = float(np.linalg.norm(gg + fit.lam * g.weight * direction))
            max_active = max(max_active, viol)
        else:
            viol = float(np.linalg.norm(gg)) - fit.lam * g.weight
            max_inactive = max(max_inactive, viol)
    return KKTReport(max_active=max_active, max_inactive=max_inactive, tol=tol)


def ols_refit(D: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, list[int]]:
    """Unpenalized least squares with rank handling.

    Returns (coef, cov, sigma_hat, dropped_cols). Collinear columns (found by
    pivoted QR) get coefficient 0 and zero covariance rows; sigma uses the
    rank-adjusted degrees of freedom.
    """
    import scipy.linalg

    n, m = D.shape
    if m == 0:
        resid = y - y.mean()
        sigma = float(np.linalg.norm(resid) / np.sqrt(max(n - 1, 1)))
        return np.zeros(0), np.zeros((0, 0)), sigma, []
    _, Rq, piv = scipy.linalg.qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rq))
    tol = max(n, m) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    keep = np.sort(piv[:rank])
    dropped = sorted(set(range(m)) - set(keep.tolist()))
    Dk = D[:, keep]
    coef_k, *_ = np.linalg.lstsq(Dk, y, rcond=None)
    resid = y - Dk @ coef_k
    dfree = max(n - rank, 1)
    sigma = float(np.linalg.norm(resid) / np.sqrt(dfree))
    XtX = Dk.T @ Dk
    try:
        cov_k = sigma ** 2 * np.linalg.inv(XtX)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("second-stage normal matrix is singular") from exc
    coef = np.zeros(m)
    cov = np.zeros((m, m))
    coef[keep] = coef_k
    cov[np.ix_(keep, keep)] = cov_k
    return coef, cov, sigma, dropped
