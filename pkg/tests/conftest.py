"""Shared fixtures, chiefly the session-scoped Monte Carlo cells.

A cell is 100 seeded replicates of one (scenario, n, method) pipeline. Cells
are expensive (minutes each), so they are computed once on first request and
shared between the module tests and the acceptance suite. Seeds are fixed at
range(100) (range(200) for the sign-symmetry cell), making every cell, and
therefore every test built on one, fully deterministic.
"""

from __future__ import annotations

import time

import pytest

from mixselect import ScenarioSpec, run_experiment

STANDARD_SEEDS = 100

# cells with a nonstandard replicate count
_SEED_COUNTS = {("null", 500, "kfull"): 200}


class McCells:
    """Lazy cache of Monte Carlo cells keyed by (scenario, n, method, p)."""

    def __init__(self):
        self._cache: dict[tuple, dict] = {}

    def cell(self, scenario: str, n: int, method: str, p: int = 10) -> dict:
        key = (scenario, n, method, p)
        if key not in self._cache:
            n_seeds = _SEED_COUNTS.get((scenario, n, method), STANDARD_SEEDS)
            spec = ScenarioSpec(scenario=scenario, n=n, p=p)
            start = time.time()
            res = run_experiment([spec], [method], range(n_seeds),
                                 collect_reports=True)
            elapsed = time.time() - start
            print(f"\n[mc cell] {spec.label} {method}: {n_seeds} replicates "
                  f"in {elapsed:.0f}s", flush=True)
            self._cache[key] = {
                "agg": res.aggregates[0],
                "reps": res.replicates,
                "reports": res.reports.get((spec.label, method), []),
                "failures": res.failures,
                "seconds": elapsed,
                "n_seeds": n_seeds,
            }
        return self._cache[key]

    def agg(self, scenario: str, n: int, method: str) -> dict:
        return self.cell(scenario, n, method)["agg"]


@pytest.fixture(scope="session")
def mc() -> McCells:
    return McCells()


@pytest.fixture(scope="session")
def acceptance_log(request) -> list:
    """Criterion pass/fail lines, echoed after the run summary."""
    lines: list[str] = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
