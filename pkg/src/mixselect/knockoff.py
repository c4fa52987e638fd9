"""Second-order Gaussian knockoffs for the expanded design, with group filters.

Knockoffs are sampled columnwise-exchangeably for the centered design D using
the equicorrelated construction, the group lasso is fit on [D, D-tilde], and
the signed statistics W_g = ||beta_g|| - ||beta_g~|| feed the knockoff filter.
Selected groups are refit by unpenalized least squares: on the same rows
(K-Full, intervals flagged as not theoretically valid) or on a held-out half
(K-Split, intervals valid conditional on the selection half).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisTransform, ExpandedDesign, Group, RawData, build_design
from .exceptions import ConditioningError
from .grouplasso import fit_cv, ols_refit
from .reports import SelectionReport, Z95
from .rng import substream


@dataclass
class SplitPlan:
    """Disjoint, exhaustive row split for selection vs inference."""

    indices_select: np.ndarray
    indices_infer: np.ndarray
    fraction: float

    def __post_init__(self) -> None:
        a = set(self.indices_select.tolist())
        b = set(self.indices_infer.tolist())
        if a & b:
            raise ValueError("split halves overlap")
        n = len(a) + len(b)
        if a | b != set(range(n)):
            raise ValueError("split halves do not cover all rows")


def make_split_plan(n: int, fraction: float, rng: np.random.Generator) -> SplitPlan:
    """Random split with selection-half size round(fraction * n)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n_sel = int(round(fraction * n))
    n_sel = min(max(n_sel, 1), n - 1)
    perm = rng.permutation(n)
    return SplitPlan(indices_select=np.sort(perm[:n_sel]),
                     indices_infer=np.sort(perm[n_sel:]),
                     fraction=fraction)


@dataclass
class KnockoffResult:
    D_tilde: np.ndarray
    s: np.ndarray  # covariance-scale equicorrelated vector
    s_corr: float  # correlation-scale value min(2 lambda_min, 1)
    epsilon: float  # diagonal loading added to Sigma before inversion
    lambda_min: float  # smallest eigenvalue of the (loaded) correlation matrix


def gaussian_knockoffs(design: ExpandedDesign, rng: np.random.Generator,
                       max_epsilon_frac: float = 0.1) -> KnockoffResult:
    """Sample second-order Gaussian knockoffs for the centered design.

    Sigma_hat = D'D/n gets the minimal diagonal loading epsilon that makes it
    comfortably positive definite; epsilon beyond max_epsilon_frac times the
    mean diagonal raises ConditioningError. The equicorrelated s is computed
    on the correlation scale and mapped back. Rows of D-tilde are draws from
    the conditional Gaussian with Cov(D, D~) = Sigma - diag(s) and
    Cov(D~) = Sigma; sampled columns are re-centered.
    """
    D = design.D
    n, pt = D.shape
    Sigma = design.gram()
    mean_diag = float(np.mean(np.diag(Sigma)))
    if mean_diag <= 0:
        raise ConditioningError("design covariance has nonpositive diagonal")
    evals = np.linalg.eigvalsh(Sigma)
    floor = 1e-8 * mean_diag
    epsilon = float(max(0.0, floor - evals[0]))
    if epsilon > max_epsilon_frac * mean_diag:
        raise ConditioningError(
            f"covariance needs diagonal loading {epsilon:.3e} to become positive "
            f"definite, above the allowed {max_epsilon_frac:.2f} * mean diagonal")
    Sig = Sigma + epsilon * np.eye(pt) if epsilon > 0 else Sigma
    d = np.sqrt(np.diag(Sig))
    R = Sig / np.outer(d, d)
    lam_min = float(np.linalg.eigvalsh(R)[0])
    s_corr = float(min(max(2.0 * lam_min, 0.0), 1.0))
    s = s_corr * np.diag(Sig)
    # conditional mean D (I - Sig^{-1} S) and covariance 2S - S Sig^{-1} S
    Sinv_S = np.linalg.solve(Sig, np.diag(s))
    mean = D - D @ Sinv_S
    V = 2.0 * np.diag(s) - np.diag(s) @ Sinv_S
    V = 0.5 * (V + V.T)
    w, Q = np.linalg.eigh(V)
    factor = Q * np.sqrt(np.clip(w, 0.0, None))
    D_tilde = mean + rng.standard_normal((n, pt)) @ factor.T
    D_tilde -= D_tilde.mean(axis=0)
    return KnockoffResult(D_tilde=D_tilde, s=s, s_corr=s_corr,
                          epsilon=epsilon, lambda_min=lam_min)


def augment_design(design: ExpandedDesign, D_tilde: np.ndarray) -> ExpandedDesign:
    """[D, D-tilde] with mirrored groups; knockoff covariates are penalized."""
    pt = design.n_cols
    groups = list(design.groups)
    for g in design.groups:
        weight = g.weight if g.weight > 0 else 1.0
        groups.append(Group(gid=("knockoff",) + g.gid, kind=g.kind,
                            start=g.start + pt, size=g.size, weight=weight))
    return ExpandedDesign(D=np.hstack([design.D, D_tilde]), groups=groups,
                          transform=design.transform)


def w_statistics(beta: np.ndarray, aug: ExpandedDesign) -> dict:
    """Group norm differences W_g = ||beta_g|| - ||beta_g~|| for candidates.

    Candidates are the original main and interaction groups; covariates stay
    in the model unconditionally. Raises if a knockoff twin is missing.
    """
    by_gid = {g.gid: g for g in aug.groups}
    W: dict = {}
    for g in aug.groups:
        if g.gid[0] == "knockoff" or g.kind == "covariate":
            continue
        twin = by_gid.get(("knockoff",) + g.gid)
        if twin is None:
            raise ValueError(f"no knockoff twin for group {g.label()}")
        W[g.gid] = float(np.linalg.norm(beta[g.cols]) - np.linalg.norm(beta[twin.cols]))
    return W


def knockoff_threshold(w: np.ndarray, q: float, offset: int = 0) -> float:
    """Data-dependent threshold of the (offset-)knockoff filter.

    tau = min over t in {|W_g| > 0} of
    (offset + #{W <= -t}) / max(1, #{W >= t}) <= q, or +inf when the ratio
    never reaches q. offset 0 gives the filter controlling a modified FDR,
    offset 1 the usual knockoff-plus filter.
    """
    if offset not in (0, 1):
        raise ValueError(f"offset must be 0 or 1, got {offset}")
    if not 0 < q < 1:
        raise ValueError(f"q must be in (0, 1), got {q}")
    w = np.asarray(w, dtype=float).ravel()
    cands = np.unique(np.abs(w[w != 0.0]))
    for t in cands:
        ratio = (offset + np.sum(w <= -t)) / max(1, int(np.sum(w >= t)))
        if ratio <= q:
            return float(t)
    return np.inf


def filter_groups(W: dict, q: float, offset: int) -> tuple[float, list]:
    """Apply the knockoff threshold to a gid -> W map; select W >= tau."""
    gids = list(W.keys())
    vals = np.array([W[g] for g in gids])
    tau = knockoff_threshold(vals, q, offset)
    return tau, [g for g, wv in zip(gids, vals) if wv >= tau]


def _second_stage(transform: BasisTransform, X: np.ndarray, C: np.ndarray,
                  y: np.ndarray, selected_mains: list[int],
                  selected_pairs: list[tuple[int, int]]):
    """Unpenalized OLS of y on [1 | covariates | selected mixture blocks].

    Returns everything the report needs. Collinear columns are dropped (kept
    in place with zero coefficient and zero covariance) and reported.
    """
    n = X.shape[0]
    qc = C.shape[1] if C.size else 0
    body = transform.expand(X, C if qc else None,
                            mains=selected_mains, pairs=selected_pairs)
    X2 = np.column_stack([np.ones(n), body]) if body.size else np.ones((n, 1))
    coef, cov, sigma, dropped = ols_refit(X2, y)

    labels = ["intercept"] + [f"covariate:{c}" for c in transform.covariate_names[:qc]]
    groups: list[Group] = []
    pos = 0
    k = transform.k
    for j in selected_mains:
        groups.append(Group(gid=("main", j), kind="main", start=pos, size=k,
                            weight=float(np.sqrt(k))))
        labels += [f"main:{j}:term{t + 1}" for t in range(k)]
        pos += k
    for pr in selected_pairs:
        groups.append(Group(gid=("interaction",) + pr, kind="interaction",
                            start=pos, size=k * k, weight=float(k)))
        labels += [f"interaction:{pr[0]}:{pr[1]}:term{t + 1}" for t in range(k * k)]
        pos += k * k

    mix0 = 1 + qc
    mix = slice(mix0, mix0 + pos)
    warnings_list = [f"dropped collinear column {labels[i]} in refit" for i in dropped]
    return {
        "intercept": float(coef[0]),
        "covariate_coef": coef[1:mix0].copy(),
        "covariate_se": np.sqrt(np.clip(np.diag(cov)[1:mix0], 0.0, None)),
        "coef": coef[mix].copy(),
        "coef_cov": cov[mix, mix].copy(),
        "sigma_hat": sigma,
        "groups": groups,
        "dropped": [labels[i] for i in dropped],
        "warnings": warnings_list,
        "n_fit": n,
    }


def pair_sweep_order(n_groups: int, rng: np.random.Generator) -> np.ndarray:
    """Sweep order interleaving each original with its twin, coin-flipped.

    The solver's block order matters on augmented designs: twin blocks are
    nearly collinear, so within any finite sweep budget the block visited
    first keeps a slight advantage. A fair per-pair coin keeps the null W
    statistics sign-symmetric, which the filter's FDR control rests on.
    """
    coins = rng.integers(0, 2, size=n_groups)
    order = np.empty(2 * n_groups, dtype=np.int64)
    for i in range(n_groups):
        a, b = i, n_groups + i
        if coins[i]:
            a, b = b, a
        order[2 * i] = a
        order[2 * i + 1] = b
    return order


def _knockoff_selection(data: RawData, k: int, q: float, seed: int, offset: int,
                        n_folds: int, n_lambda: int, rule: str):
    """Shared selection stage: design, knockoffs, augmented fit, filters."""
    design = build_design(data, k)
    rng_ko = substream(seed, "knockoff")
    ko = gaussian_knockoffs(design, rng_ko)
    aug = augment_design(design, ko.D_tilde)
    order = pair_sweep_order(len(design.groups), rng_ko)
    fit, cv = fit_cv(aug, data.y, n_folds=n_folds, n_lambda=n_lambda,
                     rule=rule, rng=substream(seed, "cv"), order=order)
    W = w_statistics(fit.beta, aug)
    W_int = {g: v for g, v in W.items() if g[0] == "interaction"}
    W_main = {g: v for g, v in W.items() if g[0] == "main"}
    tau_int, sel_int = filter_groups(W_int, q, offset)
    tau_main, sel_main = filter_groups(W_main, q, offset)
    selected_pairs = sorted((g[1], g[2]) for g in sel_int)
    selected_mains = sorted(g[1] for g in sel_main)
    diagnostics = {
        "lambda": fit.lam,
        "cv_grid": cv.grid,
        "W": W,
        "tau_interaction": tau_int,
        "tau_main": tau_main,
        "offset": offset,
        "knockoff_s": ko.s,
        "knockoff_s_corr": ko.s_corr,
        "knockoff_epsilon": ko.epsilon,
        "knockoff_lambda_min": ko.lambda_min,
        "selection_sigma_hat": fit.sigma_hat,
    }
    return design, selected_mains, selected_pairs, diagnostics


def run_kfull(data: RawData, k: int = 2, q: float = 0.2, seed: int = 0,
              offset: int = 0, n_folds: int = 5, n_lambda: int = 30,
              rule: str = "min") -> SelectionReport:
    """Knockoff selection and least-squares refit on the same rows.

    The refit reuses the rows that drove selection, so the reported intervals
    are descriptive, not theoretically valid; the report carries
    intervals_caveat = True.
    """
    design, mains, pairs, diag = _knockoff_selection(
        data, k, q, seed, offset, n_folds, n_lambda, rule)
    stage = _second_stage(design.transform, data.X, data.C, data.y, mains, pairs)
    return _assemble("kfull", data, design.transform, k, q, seed, mains, pairs,
                     stage, diag, caveat=True)


def run_ksplit(data: RawData, k: int = 2, q: float = 0.2, seed: int = 0,
               fraction: float = 0.5, offset: int = 0, n_folds: int = 5,
               n_lambda: int = 30, rule: str = "min") -> SelectionReport:
    """Knockoff selection on one half, least-squares inference on the other.

    Basis constants come from the selection half; the inference half is
    re-expanded with them, so its OLS intervals are valid conditional on the
    selected model.
    """
    plan = make_split_plan(data.n, fraction, substream(seed, "split"))
    sel = plan.indices_select
    inf_ = plan.indices_infer
    data_sel = RawData(X=data.X[sel], C=data.C[sel], y=data.y[sel],
                       exposure_names=data.exposure_names,
                       covariate_names=data.covariate_names)
    design_sel, mains, pairs, diag = _knockoff_selection(
        data_sel, k, q, seed, offset, n_folds, n_lambda, rule)
    diag["split_plan"] = plan
    stage = _second_stage(design_sel.transform, data.X[inf_], data.C[inf_],
                          data.y[inf_], mains, pairs)
    return _assemble("ksplit", data, design_sel.transform, k, q, seed, mains,
                     pairs, stage, diag, caveat=False)


def _assemble(method: str, data: RawData, transform: BasisTransform, k: int,
              q: float, seed: int, mains: list[int],
              pairs: list[tuple[int, int]], stage: dict, diagnostics: dict,
              caveat: bool) -> SelectionReport:
    return SelectionReport(
        method=method, k=k, q=q, seed=seed,
        transform=transform,
        selected_mains=mains,
        selected_pairs=pairs,
        mixture_groups=stage["groups"],
        coef=stage["coef"],
        coef_cov=stage["coef_cov"],
        intercept=stage["intercept"],
        covariate_names=transform.covariate_names,
        covariate_coef=stage["covariate_coef"],
        covariate_se=stage["covariate_se"],
        sigma_hat=stage["sigma_hat"],
        n_fit=stage["n_fit"],
        intervals_caveat=caveat,
        diagnostics={**diagnostics, "dropped": stage["dropped"]},
        warnings=list(stage["warnings"]),
    )
