"""Basis expansion of exposures into penalized group blocks.

Each exposure is standardized and expanded into k polynomial columns; each
unordered pair of exposures gets a k*k tensor-product block that is projected
orthogonal to the intercept and to both parent main-effect blocks, so an
interaction group can only pick up signal that main effects cannot explain.
All design columns are centered; the intercept is handled by centering the
response at fit time.

Exposure indices are 1-based throughout the public API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .exceptions import CollinearityError, DataError, DegenerateColumnError

# Relative threshold below which a standard deviation counts as zero.
_SD_TOL = 1e-12


@dataclass(frozen=True)
class Group:
    """One penalty group: a contiguous block of design columns.

    gid is a tuple key: ("covariate", name), ("main", j) or
    ("interaction", j1, j2) with 1-based exposure indices j1 < j2.
    Knockoff copies prepend "knockoff" to the original gid.
    """

    gid: tuple
    kind: str  # "covariate" | "main" | "interaction"
    start: int
    size: int
    weight: float  # penalty weight: sqrt(size), or 0.0 for covariates

    @property
    def cols(self) -> slice:
        return slice(self.start, self.start + self.size)

    @property
    def exposures(self) -> tuple[int, ...]:
        if self.kind == "main":
            return (self.gid[-1],)
        if self.kind == "interaction":
            return (self.gid[-2], self.gid[-1])
        return ()

    def label(self) -> str:
        return ":".join(str(part) for part in self.gid)


@dataclass
class RawData:
    """Analysis-ready inputs: exposures X (n x p), covariates C (n x q), outcome y."""

    X: np.ndarray
    C: np.ndarray
    y: np.ndarray
    exposure_names: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.X.shape[0]
        if self.C is None:
            self.C = np.empty((n, 0))
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim == 1:
            self.C = self.C[:, None]
        if self.y.shape[0] != n or self.C.shape[0] != n:
            raise DataError(
                f"row mismatch: X has {n} rows, C has {self.C.shape[0]}, y has {self.y.shape[0]}"
            )
        if self.X.shape[1] < 2:
            raise DataError(f"need at least 2 exposure columns, got {self.X.shape[1]}")
        if not self.exposure_names:
            self.exposure_names = tuple(f"x{j}" for j in range(1, self.X.shape[1] + 1))
        if not self.covariate_names:
            self.covariate_names = tuple(f"c{j}" for j in range(1, self.C.shape[1] + 1))
        if len(self.exposure_names) != self.X.shape[1]:
            raise DataError("exposure_names length does not match X columns")
        if len(self.covariate_names) != self.C.shape[1]:
            raise DataError("covariate_names length does not match C columns")
        for arr, what in ((self.X, "X"), (self.C, "C"), (self.y, "y")):
            if arr.size and not np.all(np.isfinite(arr)):
                raise DataError(f"{what} contains non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class PolyConstants:
    """Standardization and centering constants for one exposure's basis."""

    mean: float
    sd: float
    col_means: np.ndarray  # (k,) means of the raw power columns


def polynomial_basis(x: np.ndarray, k: int, name: str = "x") -> tuple[np.ndarray, PolyConstants]:
    """Expand one exposure into k centered polynomial columns.

    Column m (1-based) is the m-th power of the standardized exposure, with
    the sample mean of each power column then removed. Returns the n x k
    block and the constants needed to reproduce it on new rows.

    Raises DegenerateColumnError when the exposure has zero variance.
    """
    x = np.asarray(x, dtype=float).ravel()
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    mean = float(x.mean())
    sd = float(x.std())
    if sd <= _SD_TOL * (1.0 + abs(mean)):
        raise DegenerateColumnError(f"exposure {name!r} has zero variance")
    consts = PolyConstants(mean=mean, sd=sd, col_means=np.zeros(k))
    raw = _power_columns(x, consts)
    col_means = raw.mean(axis=0)
    consts = PolyConstants(mean=mean, sd=sd, col_means=col_means)
    return raw - col_means, consts


def _power_columns(x: np.ndarray, consts: PolyConstants) -> np.ndarray:
    """Raw (uncentered) power columns of the standardized exposure."""
    xs = (x - consts.mean) / consts.sd
    k = consts.col_means.shape[0]
    out = np.empty((x.shape[0], k))
    out[:, 0] = xs
    for m in range(1, k):
        out[:, m] = out[:, m - 1] * xs
    return out


def expand_exposure(x: np.ndarray, consts: PolyConstants) -> np.ndarray:
    """Re-expand an exposure with stored constants (exact on training rows)."""
    return _power_columns(np.asarray(x, dtype=float).ravel(), consts) - consts.col_means


def tensor_interaction_basis(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Columnwise tensor product of two main-effect blocks.

    Output column (a, b), lexicographic with a moving slowest, is the
    elementwise product b1[:, a] * b2[:, b]. Shape n x (k1*k2).
    """
    n, k1 = b1.shape
    k2 = b2.shape[1]
    out = np.empty((n, k1 * k2))
    for a in range(k1):
        for b in range(k2):
            out[:, a * k2 + b] = b1[:, a] * b2[:, b]
    return out


def project_out_main(T: np.ndarray, M: np.ndarray, pair: tuple[int, int] | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Project the columns of T orthogonal to the column span of M.

    M must have full column rank (it holds the intercept and both parent
    main-effect blocks). Returns the projected block and the coefficient
    matrix A = (M'M)^{-1} M'T, which re-expansion needs so that new rows get
    the same linear correction as training rows.
    """
    A, _, rank, _ = np.linalg.lstsq(M, T, rcond=None)
    if rank < M.shape[1]:
        where = f" for interaction {pair}" if pair else ""
        raise CollinearityError(
            f"projection basis{where} is rank deficient "
            f"(rank {rank} < {M.shape[1]}); parent main-effect columns are collinear"
        )
    return T - M @ A, A


@dataclass
class BasisTransform:
    """Frozen expansion constants; re-expands new rows exactly like training rows."""

    k: int
    p: int
    exposure_names: tuple[str, ...]
    covariate_names: tuple[str, ...]
    poly: list[PolyConstants]
    proj_coefs: dict[tuple[int, int], np.ndarray]  # pair -> (2k+1, k*k)
    cov_means: np.ndarray

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(a + 1, b + 1) for a, b in combinations(range(self.p), 2)]

    def main_block(self, X: np.ndarray, j: int) -> np.ndarray:
        """Centered polynomial block of exposure j (1-based) for rows X."""
        return expand_exposure(X[:, j - 1], self.poly[j - 1])

    def interaction_block(self, pair: tuple[int, int], b1: np.ndarray, b2: np.ndarray
                          ) -> np.ndarray:
        T = tensor_interaction_basis(b1, b2)
        M = np.column_stack([np.ones(b1.shape[0]), b1, b2])
        return T - M @ self.proj_coefs[pair]

    def expand(self, X: np.ndarray, C: np.ndarray | None = None,
               mains: list[int] | None = None,
               pairs: list[tuple[int, int]] | None = None) -> np.ndarray:
        """Expand rows into [covariates | main blocks | interaction blocks].

        mains / pairs restrict which blocks are produced (block order follows
        the given lists); None means all, in canonical order. C is omitted
        from the output when None.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise DataError(f"expected {self.p} exposure columns, got {X.shape[1]}")
        if mains is None:
            mains = list(range(1, self.p + 1))
        if pairs is None:
            pairs = self.pairs
        needed = sorted(set(mains) | {j for pr in pairs for j in pr})
        cache = {j: self.main_block(X, j) for j in needed}
        blocks = []
        if C is not None:
            C = np.asarray(C, dtype=float)
            if C.ndim == 1:
                C = C[:, None]
            blocks.append(C - self.cov_means)
        blocks.extend(cache[j] for j in mains)
        blocks.extend(self.interaction_block(pr, cache[pr[0]], cache[pr[1]]) for pr in pairs)
        if not blocks:
            return np.empty((X.shape[0], 0))
        return np.column_stack(blocks)


@dataclass
class ExpandedDesign:
    """The full centered design with its group structure and transform."""

    D: np.ndarray
    groups: list[Group]
    transform: BasisTransform
    _gram: np.ndarray | None = field(default=None, repr=False)
    _eig: tuple | None = field(default=None, repr=False)  # solver eig buffers

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def n_cols(self) -> int:
        return self.D.shape[1]

    @property
    def p(self) -> int:
        return self.transform.p

    @property
    def k(self) -> int:
        return self.transform.k

    def group(self, gid: tuple) -> Group:
        for g in self.groups:
            if g.gid == gid:
                return g
        raise KeyError(gid)

    def penalized_groups(self) -> list[Group]:
        return [g for g in self.groups if g.weight > 0]

    def gram(self) -> np.ndarray:
        """(1/n) D'D, cached."""
        if self._gram is None:
            self._gram = (self.D.T @ self.D) / self.n
        return self._gram


def build_design(data: RawData, k: int) -> ExpandedDesign:
    """Expand RawData into the grouped design matrix.

    Column order: covariates (unpenalized singleton groups), then main blocks
    for exposures 1..p, then interaction blocks over pairs (j1, j2) in
    lexicographic order. Requires n > 2k + 1 rows so the interaction
    projections are well posed.
    """
    n, p = data.n, data.p
    if n <= 2 * k + 1:
        raise DataError(f"need n > 2k + 1 = {2 * k + 1} rows, got {n}")
    if p < 1:
        raise DataError("need at least one exposure column")

    for q, name in enumerate(data.covariate_names):
        col = data.C[:, q]
        if col.std() <= _SD_TOL * (1.0 + abs(float(col.mean()))):
            raise DegenerateColumnError(f"covariate {name!r} has zero variance")

    poly: list[PolyConstants] = []
    mains: list[np.ndarray] = []
    for j in range(p):
        B, consts = polynomial_basis(data.X[:, j], k, name=data.exposure_names[j])
        poly.append(consts)
        mains.append(B)

    proj_coefs: dict[tuple[int, int], np.ndarray] = {}
    ones = np.ones(n)
    for a, b in combinations(range(p), 2):
        T = tensor_interaction_basis(mains[a], mains[b])
        M = np.column_stack([ones, mains[a], mains[b]])
        _, A = project_out_main(T, M, pair=(a + 1, b + 1))
        proj_coefs[(a + 1, b + 1)] = A

    transform = BasisTransform(
        k=k,
        p=p,
        exposure_names=data.exposure_names,
        covariate_names=data.covariate_names,
        poly=poly,
        proj_coefs=proj_coefs,
        cov_means=data.C.mean(axis=0) if data.C.size else np.zeros(data.C.shape[1]),
    )

    # Assemble through the transform so re-expansion of training rows is
    # bit-identical to the stored design.
    D = transform.expand(data.X, data.C if data.C.shape[1] else None)

    groups: list[Group] = []
    col = 0
    for name in data.covariate_names:
        groups.append(Group(gid=("covariate", name), kind="covariate",
                            start=col, size=1, weight=0.0))
        col += 1
    for j in range(1, p + 1):
        groups.append(Group(gid=("main", j), kind="main",
                            start=col, size=k, weight=float(np.sqrt(k))))
        col += k
    for pair in transform.pairs:
        groups.append(Group(gid=("interaction",) + pair, kind="interaction",
                            start=col, size=k * k, weight=float(k)))
        col += k * k
    assert col == D.shape[1]
    return ExpandedDesign(D=D, groups=groups, transform=transform)
