"""Selection and estimation metrics for simulation studies.

Conventions: FDP with nothing selected is 0; power against an empty truth is
undefined and reported as None. Exposure-level quantities treat an exposure
as selected when it appears as a main effect or as a member of a selected
interaction. mse_f and coverage95 compare against the truth centered over the
evaluation points, because the mixture effect is identified only up to a
constant (the intercept absorbs its mean).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .inference import MixturePrediction
from .reports import SelectionReport

Pair = tuple[int, int]


@dataclass(frozen=True)
class TruthSpec:
    """True support and mixture function for one data generating process."""

    S: frozenset  # exposures entering f, 1-based
    S_int: frozenset  # interacting pairs, sorted tuples
    f_true: Callable[[np.ndarray], np.ndarray]
    weakest: int | None = None  # designated hardest member of S, if any


def _norm_pairs(pairs: Iterable[Pair]) -> set[Pair]:
    return {tuple(sorted(pr)) for pr in pairs}


def fdp(selected: Iterable[int], truth: Iterable[int]) -> float:
    sel = set(selected)
    if not sel:
        return 0.0
    return len(sel - set(truth)) / len(sel)


def power(selected: Iterable[int], truth: Iterable[int]) -> float | None:
    tr = set(truth)
    if not tr:
        return None
    return len(set(selected) & tr) / len(tr)


def fdp_int(selected_pairs: Iterable[Pair], truth_pairs: Iterable[Pair]) -> float:
    return fdp(_norm_pairs(selected_pairs), _norm_pairs(truth_pairs))


def power_int(selected_pairs: Iterable[Pair],
              truth_pairs: Iterable[Pair]) -> float | None:
    return power(_norm_pairs(selected_pairs), _norm_pairs(truth_pairs))


def interaction_overlap(pairs: Iterable[Pair]) -> tuple[float, int]:
    """Overlap count O_d and distinct member count D for a set of pairs.

    O_d = len(pairs) - D / 2; it is 0 exactly when the pairs are disjoint and
    can be half-integer.
    """
    prs = _norm_pairs(pairs)
    members = {j for pr in prs for j in pr}
    d = len(members)
    return len(prs) - d / 2.0, d


@dataclass(frozen=True)
class FdpBound:
    fdp_int: float
    o_d: float
    d: int
    bound: float  # fdp_int * (1 + 2 * o_d / d)


def fdp_bound(selected_pairs: Iterable[Pair],
              truth_pairs: Iterable[Pair]) -> FdpBound | None:
    """Bound on the exposure-level FDP implied by the selected interactions.

    With D distinct members across the selected pairs and O_d the overlap
    count, the FDP of the implied exposure set is at most
    fdp_int * (1 + 2 * O_d / D). Returns None when no pairs are selected
    (D = 0); the exposure FDP contribution is then 0 anyway.
    """
    sel = _norm_pairs(selected_pairs)
    if not sel:
        return None
    o_d, d = interaction_overlap(sel)
    f_int = fdp_int(sel, truth_pairs)
    return FdpBound(fdp_int=f_int, o_d=o_d, d=d,
                    bound=f_int * (1.0 + 2.0 * o_d / d))


@dataclass
class ReplicateMetrics:
    """Per-replicate selection and surface metrics for one fitted report."""

    fdp: float
    power: float | None
    fdp_int: float
    power_int: float | None
    power_weakest: float | None
    mse_f: float
    coverage95: float
    o_d: float
    bound_factor: float  # 1 + 2 O_d / D, 1.0 when no pairs selected
    n_selected_mains: int
    n_selected_pairs: int


def replicate_metrics(report: SelectionReport, truth: TruthSpec,
                      prediction: MixturePrediction) -> ReplicateMetrics:
    sel_pairs = _norm_pairs(report.selected_pairs)
    sel_exposures = set(report.selected_exposures)
    f0 = np.asarray(truth.f_true(prediction.X), dtype=float)
    f0c = f0 - f0.mean()
    mse = float(np.mean((prediction.f_hat - f0c) ** 2))
    cover = float(np.mean((prediction.ci_lo <= f0c) & (f0c <= prediction.ci_hi)))
    bnd = fdp_bound(sel_pairs, truth.S_int)
    if bnd is None:
        o_d, factor = 0.0, 1.0
    else:
        o_d, factor = bnd.o_d, 1.0 + 2.0 * bnd.o_d / bnd.d
    weakest = None
    if truth.weakest is not None:
        weakest = float(truth.weakest in sel_exposures)
    return ReplicateMetrics(
        fdp=fdp(sel_exposures, truth.S),
        power=power(sel_exposures, truth.S),
        fdp_int=fdp_int(sel_pairs, truth.S_int),
        power_int=power_int(sel_pairs, truth.S_int),
        power_weakest=weakest,
        mse_f=mse,
        coverage95=cover,
        o_d=o_d,
        bound_factor=factor,
        n_selected_mains=len(report.selected_mains),
        n_selected_pairs=len(sel_pairs),
    )
