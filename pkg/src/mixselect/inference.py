"""Pointwise inference on the fitted mixture surface.

The mixture effect f_hat(x) is the contribution of the selected main and
interaction blocks only: no intercept, no covariates. It is therefore
centered relative to the training sample (the fitted columns average to zero
over training rows). Standard errors come from the report's coefficient
covariance, so their validity matches the engine that produced the report.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, ExtrapolationWarning
from .reports import SelectionReport, Z95

DEFAULT_GRID = (-2.0, 2.0, 41)  # standardized units
EXTRAPOLATION_SD = 10.0


@dataclass
class MixturePrediction:
    """Mixture-effect predictions with pointwise 95% normal intervals."""

    X: np.ndarray  # evaluation points, raw exposure units, one row each
    f_hat: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    axes: dict = field(default_factory=dict)  # grid metadata for curves/surfaces


def default_grid() -> np.ndarray:
    lo, hi, m = DEFAULT_GRID
    return np.linspace(lo, hi, m)


def predict_f(report: SelectionReport, Xnew: np.ndarray) -> MixturePrediction:
    """Evaluate the selected mixture effect at new exposure rows.

    Rows are expanded with the stored basis constants, so training rows
    reproduce their training columns exactly. Points beyond 10 training SDs
    in any exposure trigger ExtrapolationWarning. With nothing selected the
    mixture effect is identically zero with zero se.
    """
    tf = report.transform
    X = np.atleast_2d(np.asarray(Xnew, dtype=float))
    if X.shape[1] != tf.p:
        raise DataError(f"expected {tf.p} exposure columns, got {X.shape[1]}")
    means = np.array([pc.mean for pc in tf.poly])
    sds = np.array([pc.sd for pc in tf.poly])
    z = (X - means) / sds
    if np.any(np.abs(z) > EXTRAPOLATION_SD):
        worst = float(np.max(np.abs(z)))
        warnings.warn(
            f"prediction points reach {worst:.1f} training SDs from the "
            "exposure means; the fitted surface is an extrapolation there",
            ExtrapolationWarning, stacklevel=2)
    m = X.shape[0]
    if not report.mixture_groups:
        zeros = np.zeros(m)
        return MixturePrediction(X=X, f_hat=zeros, se=zeros.copy(),
                                 ci_lo=zeros.copy(), ci_hi=zeros.copy())
    body = tf.expand(X, None, mains=report.selected_mains,
                     pairs=report.selected_pairs)
    f = body @ report.coef
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", body, report.coef_cov, body),
                         0.0, None))
    return MixturePrediction(X=X, f_hat=f, se=se,
                             ci_lo=f - Z95 * se, ci_hi=f + Z95 * se)


def _baseline_rows(report: SelectionReport, m: int) -> np.ndarray:
    tf = report.transform
    means = np.array([pc.mean for pc in tf.poly])
    return np.tile(means, (m, 1))


def response_curve(report: SelectionReport, j: int,
                   grid: np.ndarray | None = None) -> MixturePrediction:
    """Mixture effect along one exposure, the others at their training means.

    j is 1-based. The grid is in standardized units (default 41 points on
    [-2, 2]) and is converted to raw units with the stored constants. If no
    selected block involves j the curve is flat.
    """
    tf = report.transform
    if not 1 <= j <= tf.p:
        raise DataError(f"exposure index {j} outside 1..{tf.p}")
    g = default_grid() if grid is None else np.asarray(grid, dtype=float).ravel()
    X = _baseline_rows(report, g.size)
    pc = tf.poly[j - 1]
    X[:, j - 1] = pc.mean + g * pc.sd
    pred = predict_f(report, X)
    pred.axes = {"exposure": j, "grid": g}
    return pred


def interaction_surface(report: SelectionReport, pair: tuple[int, int],
                        grid1: np.ndarray | None = None,
                        grid2: np.ndarray | None = None) -> MixturePrediction:
    """Mixture effect over a two-exposure grid, row-major.

    Row index moves over grid1 (first pair member) slowest: the point
    (grid1[i], grid2[l]) sits at flat position i * len(grid2) + l. Grids are
    standardized units. With no selected block touching either exposure the
    surface is flat; with only additive blocks its cross-differences vanish.
    """
    a, b = sorted(pair)
    tf = report.transform
    if a == b:
        raise DataError("interaction surface needs two distinct exposures")
    if not 1 <= a <= tf.p or not 1 <= b <= tf.p:
        raise DataError(f"pair ({a}, {b}) outside 1..{tf.p}")
    g1 = default_grid() if grid1 is None else np.asarray(grid1, dtype=float).ravel()
    g2 = default_grid() if grid2 is None else np.asarray(grid2, dtype=float).ravel()
    m = g1.size * g2.size
    X = _baseline_rows(report, m)
    pa, pb = tf.poly[a - 1], tf.poly[b - 1]
    X[:, a - 1] = np.repeat(pa.mean + g1 * pa.sd, g2.size)
    X[:, b - 1] = np.tile(pb.mean + g2 * pb.sd, g1.size)
    pred = predict_f(report, X)
    pred.axes = {"pair": (a, b), "grid1": g1, "grid2": g2}
    return pred
