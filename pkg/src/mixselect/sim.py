"""Synthetic data generators and the simulation harness.

Exposures are jointly Gaussian with AR(1) correlation 0.5^|j-l|, one standard
normal covariate enters with coefficient beta_C, and the noise is standard
normal. All draws come from the "data" substream of the replicate seed, in
the fixed order X, C, eps, so a (scenario, n, p, seed) cell is reproducible
regardless of which methods run on it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from .basis import RawData
from .debias import select_dbl
from .exceptions import DataError
from .inference import predict_f
from .knockoff import run_kfull, run_ksplit
from .metrics import ReplicateMetrics, TruthSpec, replicate_metrics
from .reports import SelectionReport
from .rng import substream

log = logging.getLogger(__name__)

SCENARIOS = ("1", "2", "3", "A", "null")
METHODS = ("dbl", "kfull", "ksplit")

AR_RHO = 0.5
DEFAULT_P_GRID = (10, 20)

# smallest exposure index each scenario's truth references (null needs the
# RawData minimum of 2)
_MIN_P = {"1": 8, "2": 5, "3": 9, "A": 10, "null": 2}


def default_n_grid(p: int) -> tuple[int, ...]:
    """Sample sizes studied at a given p; p = 20 adds the n = 850 point."""
    return (200, 500, 850, 1000) if p == 20 else (200, 500, 1000)


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell: scenario label plus data dimensions."""

    scenario: str
    n: int
    p: int
    beta_c: float = 1.0
    scenario2_typo_fix: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}")
        if self.p < _MIN_P[self.scenario]:
            raise DataError(
                f"scenario {self.scenario} needs p >= {_MIN_P[self.scenario]}")

    @property
    def label(self) -> str:
        return f"s{self.scenario}-n{self.n}-p{self.p}"


def ar_covariance(p: int, rho: float = AR_RHO) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _f_scenario1(X):
    x = X.T
    return (0.3 * x[6] + 0.5 * x[7] ** 2 - 0.2 * x[4] + 0.4 * x[4] ** 2
            + 2.5 * x[0] * x[3] ** 2 + 1.8 * x[1] * x[2])


def _f_scenario2(X):
    x = X.T
    # the fourth term repeats exposure 2; see scenario_truth for the variant
    return (0.5 * x[0] + 0.4 * x[1] + 0.3 * x[2] + 0.2 * x[1] + 0.1 * x[4])


def _f_scenario2_fix(X):
    x = X.T
    return (0.5 * x[0] + 0.4 * x[1] + 0.3 * x[2] + 0.2 * x[3] + 0.1 * x[4])


def _f_scenario3(X):
    x = X.T
    return (0.3 * np.exp(x[0]) + 0.5 * np.sin(0.7 * x[1]) - 0.2 * x[3]
            + 0.07 * x[4] + 0.4 * x[5] ** 2 + 0.6 * x[7] - 0.3 * x[8])


def _f_scenario_a(X):
    x = X.T
    return (2.3 * x[0] + 1.9 * x[0] ** 2 - 0.2 * x[1] + 0.4 * x[1] ** 2
            - 1.5 * x[3] - 1.5 * x[3] ** 2 + 0.05 * x[4] + 1.2 * x[6]
            + 0.8 * x[7] + x[8] + 0.2 * x[9] + 0.1 * x[9] ** 2)


def _f_null(X):
    return np.zeros(X.shape[0])


def scenario_truth(scenario: str, scenario2_typo_fix: bool = False) -> TruthSpec:
    """True support, interaction pairs, mixture function and weakest signal.

    Scenario 2's printed form repeats exposure 2 in its fourth term, leaving
    exposure 4 inert; scenario2_typo_fix=True replaces that term with
    0.2 * x4 so the support becomes {1,...,5}.
    """
    if scenario == "1":
        return TruthSpec(S=frozenset({1, 2, 3, 4, 5, 7, 8}),
                         S_int=frozenset({(1, 4), (2, 3)}),
                         f_true=_f_scenario1, weakest=7)
    if scenario == "2":
        if scenario2_typo_fix:
            return TruthSpec(S=frozenset({1, 2, 3, 4, 5}), S_int=frozenset(),
                             f_true=_f_scenario2_fix, weakest=5)
        return TruthSpec(S=frozenset({1, 2, 3, 5}), S_int=frozenset(),
                         f_true=_f_scenario2, weakest=5)
    if scenario == "3":
        return TruthSpec(S=frozenset({1, 2, 4, 5, 6, 8, 9}), S_int=frozenset(),
                         f_true=_f_scenario3, weakest=5)
    if scenario == "A":
        return TruthSpec(S=frozenset({1, 2, 4, 5, 7, 8, 9, 10}),
                         S_int=frozenset(), f_true=_f_scenario_a, weakest=5)
    if scenario == "null":
        return TruthSpec(S=frozenset(), S_int=frozenset(), f_true=_f_null,
                         weakest=None)
    raise DataError(f"unknown scenario {scenario!r}")


def generate(spec: ScenarioSpec, seed: int) -> RawData:
    """Draw one replicate of the scenario. Deterministic in (spec, seed)."""
    rng = substream(seed, "data")
    chol = np.linalg.cholesky(ar_covariance(spec.p))
    X = rng.standard_normal((spec.n, spec.p)) @ chol.T
    C = rng.standard_normal((spec.n, 1))
    eps = rng.standard_normal(spec.n)
    truth = scenario_truth(spec.scenario, spec.scenario2_typo_fix)
    y = truth.f_true(X) + spec.beta_c * C[:, 0] + eps
    return RawData(X=X, C=C, y=y)


def run_method(method: str, data: RawData, *, k: int = 2, q: float = 0.2,
               seed: int = 0, offset: int = 0, split_fraction: float = 0.5,
               rule: str = "min") -> SelectionReport:
    """Dispatch one selection engine by name: dbl, kfull or ksplit."""
    if method == "dbl":
        return select_dbl(data, k=k, q=q, seed=seed, rule=rule)
    if method == "kfull":
        return run_kfull(data, k=k, q=q, seed=seed, offset=offset, rule=rule)
    if method == "ksplit":
        return run_ksplit(data, k=k, q=q, seed=seed, fraction=split_fraction,
                          offset=offset, rule=rule)
    raise DataError(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass
class ExperimentResult:
    replicates: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    reports: dict | None = None


_AGG_FIELDS = ("fdp", "power", "fdp_int", "power_int", "power_weakest",
               "mse_f", "coverage95", "o_d", "n_selected_mains",
               "n_selected_pairs")


def _mean_se(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, 0
    mean = math.fsum(vals) / len(vals)
    if len(vals) > 1:
        var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
        se = math.sqrt(var / len(vals))
    else:
        se = 0.0
    return mean, se, len(vals)


def _cs_bound(rows: list[ReplicateMetrics]) -> float | None:
    """Cauchy-Schwarz bound on the exposure FDR implied by interactions:
    E[fdp_int * factor] <= sqrt(E[fdp_int^2] * E[factor^2])."""
    if not rows:
        return None
    m2_f = math.fsum(r.fdp_int ** 2 for r in rows) / len(rows)
    m2_c = math.fsum(r.bound_factor ** 2 for r in rows) / len(rows)
    return math.sqrt(m2_f * m2_c)


def run_experiment(scenarios: Iterable[ScenarioSpec], methods: Iterable[str],
                   seeds: Iterable[int], *, k: int = 2, q: float = 0.2,
                   offset: int = 0, split_fraction: float = 0.5,
                   rule: str = "min",
                   collect_reports: bool = False) -> ExperimentResult:
    """Run every method on every (scenario, seed) replicate and aggregate.

    Data are drawn once per (scenario, seed) and shared across methods.
    Replicates that raise are recorded under failures and excluded from the
    aggregates. Aggregation uses exact summation, so results do not depend on
    the order of the seeds.
    """
    scenarios = list(scenarios)
    methods = list(methods)
    seeds = list(seeds)
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method {m!r}; expected one of {METHODS}")
    result = ExperimentResult(reports={} if collect_reports else None)
    cells: dict[tuple, list[ReplicateMetrics]] = {
        (spec, m): [] for spec in scenarios for m in methods}
    for spec in scenarios:
        truth = scenario_truth(spec.scenario, spec.scenario2_typo_fix)
        for seed in seeds:
            data = generate(spec, seed)
            for method in methods:
                try:
                    report = run_method(method, data, k=k, q=q, seed=seed,
                                        offset=offset,
                                        split_fraction=split_fraction,
                                        rule=rule)
                    pred = predict_f(report, data.X)
                    mets = replicate_metrics(report, truth, pred)
                except Exception as exc:  # noqa: BLE001 - recorded, not hidden
                    log.warning("%s %s seed=%d failed: %r",
                                spec.label, method, seed, exc)
                    result.failures.append({
                        "scenario": spec.label, "method": method,
                        "seed": seed, "error": repr(exc)})
                    continue
                cells[(spec, method)].append(mets)
                row = {"scenario": spec.label, "n": spec.n, "p": spec.p,
                       "method": method, "seed": seed}
                row.update(asdict(mets))
                result.replicates.append(row)
                if collect_reports:
                    result.reports.setdefault((spec.label, method),
                                              []).append((seed, report))
        log.info("finished %s (%d seeds x %d methods)",
                 spec.label, len(seeds), len(methods))
    for (spec, method), rows in cells.items():
        agg = {"scenario": spec.label, "n": spec.n, "p": spec.p,
               "method": method, "n_reps": len(rows),
               "n_failures": len(seeds) - len(rows)}
        for name in _AGG_FIELDS:
            mean, se, cnt = _mean_se([getattr(r, name) for r in rows])
            agg[f"{name}_mean"] = mean
            agg[f"{name}_se"] = se
            if name in ("power_weakest",):
                agg[f"{name}_n"] = cnt
        agg["cs_bound"] = _cs_bound(rows)
        result.aggregates.append(agg)
    return result
