"""Selection reports: what the engines hand to inference and to the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .basis import BasisTransform, Group

SCHEMA_VERSION = 1

Z95 = float(norm.ppf(0.975))


@dataclass
class SelectionReport:
    """Selected groups with post-selection estimates and their covariance.

    coef and coef_cov span the mixture blocks only (selected main blocks, then
    selected interaction blocks, each in ascending order); covariate estimates
    live in covariate_coef. Dropped (collinear) mixture columns keep position
    with coefficient 0 and zero covariance rows. Exposure indices are 1-based.
    """

    method: str
    k: int
    q: float
    seed: int
    transform: BasisTransform
    selected_mains: list[int]
    selected_pairs: list[tuple[int, int]]
    mixture_groups: list[Group]  # layout of coef / coef_cov
    coef: np.ndarray
    coef_cov: np.ndarray
    intercept: float
    covariate_names: tuple[str, ...]
    covariate_coef: np.ndarray
    covariate_se: np.ndarray
    sigma_hat: float
    n_fit: int  # rows used for the reported estimates
    intervals_caveat: bool = False  # True when intervals reuse selection rows
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def selected_exposures(self) -> list[int]:
        """Union of selected mains and members of selected pairs."""
        s = set(self.selected_mains)
        for a, b in self.selected_pairs:
            s.add(a)
            s.add(b)
        return sorted(s)

    @property
    def q_level(self) -> float:
        return self.q

    def coef_se(self) -> np.ndarray:
        if self.coef_cov.size == 0:
            return np.zeros(0)
        return np.sqrt(np.clip(np.diag(self.coef_cov), 0.0, None))

    def coef_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        """95% normal intervals for the mixture coefficients."""
        se = self.coef_se()
        return self.coef - Z95 * se, self.coef + Z95 * se

    def term_rows(self) -> list[dict]:
        """One dict per mixture coefficient, for serialization."""
        rows = []
        se = self.coef_se()
        lo, hi = self.coef_intervals()
        pos = 0
        for g in self.mixture_groups:
            for t in range(g.size):
                rows.append({
                    "group": g.label(),
                    "kind": g.kind,
                    "exposure_1": g.exposures[0],
                    "exposure_2": g.exposures[1] if g.kind == "interaction" else "",
                    "term_index": t + 1,
                    "estimate": self.coef[pos],
                    "se": se[pos],
                    "ci_lo": lo[pos],
                    "ci_hi": hi[pos],
                })
                pos += 1
        return rows

    def group_slice(self, gid: tuple) -> slice:
        """Position of a selected group inside coef / coef_cov."""
        pos = 0
        for g in self.mixture_groups:
            if g.gid == gid:
                return slice(pos, pos + g.size)
            pos += g.size
        raise KeyError(gid)
