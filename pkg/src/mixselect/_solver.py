"""Compiled kernels for the group-lasso solvers.

Everything works on Gram matrices (S = D'D/n, c = D'y/n), so per-sweep cost
does not depend on n and cross-validation paths never touch row space. Block
updates are exact: each penalized block solves its subproblem via the
eigendecomposition of its Gram diagonal block and a 1-d Newton iteration for
the block norm, so the objective is non-increasing group by group.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def group_eig_buffers(Sigma: np.ndarray, starts: np.ndarray, sizes: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stacked eigendecompositions of every group's Gram diagonal block."""
    d_off = np.zeros(starts.size + 1, dtype=np.int64)
    u_off = np.zeros(starts.size + 1, dtype=np.int64)
    np.cumsum(sizes, out=d_off[1:])
    np.cumsum(sizes * sizes, out=u_off[1:])
    d_flat = np.empty(d_off[-1])
    u_flat = np.empty(u_off[-1])
    for g in range(starts.size):
        st, sz = starts[g], sizes[g]
        d, U = np.linalg.eigh(Sigma[st:st + sz, st:st + sz])
        d_flat[d_off[g]:d_off[g + 1]] = d
        u_flat[u_off[g]:u_off[g + 1]] = U.ravel()
    return d_flat, u_flat, d_off, u_off


@njit(cache=True)
def _solve_block(sz, do, uo, d_flat, u_flat, c, nu, ct, bnew):
    """Exact minimizer of 0.5 b'Sb - c'b + nu*||b|| for one block.

    Writes the solution into bnew. ct is scratch. nu = lam * weight; nu == 0
    falls back to the (minimum-norm) least-squares update.
    """
    cnorm = 0.0
    for a in range(sz):
        cnorm += c[a] * c[a]
    cnorm = np.sqrt(cnorm)
    if nu > 0.0 and cnorm <= nu:
        for a in range(sz):
            bnew[a] = 0.0
        return
    # rotate into the eigenbasis of the block Gram
    for i in range(sz):
        acc = 0.0
        for r in range(sz):
            acc += u_flat[uo + r * sz + i] * c[r]
        ct[i] = acc
    dmax = 0.0
    for i in range(sz):
        if d_flat[do + i] > dmax:
            dmax = d_flat[do + i]
    if nu == 0.0:
        thr = 1e-12 * dmax
        for i in range(sz):
            di = d_flat[do + i]
            ct[i] = ct[i] / di if di > thr else 0.0
    else:
        if dmax <= 0.0:
            for a in range(sz):
                bnew[a] = 0.0
            return
        # Newton from the left bracket for F(m) = sum ct^2/(d m + nu)^2 - 1,
        # strictly decreasing and convex, so iterates stay left of the root.
        m = (cnorm - nu) / dmax
        if m <= 0.0:
            m = 1e-16
        for _ in range(200):
            F = -1.0
            dF = 0.0
            for i in range(sz):
                den = d_flat[do + i] * m + nu
                r = ct[i] / den
                F += r * r
                dF -= 2.0 * r * r * d_flat[do + i] / den
            if F < 1e-14:
                break
            if dF >= 0.0:
                break
            m_new = m - F / dF
            if m_new <= m:
                break
            m = m_new
        for i in range(sz):
            ct[i] = ct[i] / (d_flat[do + i] + nu / m)
    for r in range(sz):
        acc = 0.0
        for i in range(sz):
            acc += u_flat[uo + r * sz + i] * ct[i]
        bnew[r] = acc


@njit(cache=True)
def _sweep(Sigma, cty, starts, sizes, weights, d_flat, u_flat, d_off, u_off,
           lam, beta, u, active, only_active, order, c, ct, bnew):
    """One pass of exact block updates; returns the max coefficient change.

    Blocks are visited in the given order. On designs with knockoff twins the
    caller randomizes each pair's precedence: when twin blocks are nearly
    collinear the earlier block keeps an advantage in any finite sweep budget,
    and a fixed originals-first order would turn that into a systematic
    positive bias of the W statistics under the null.
    """
    G = starts.size
    pt = beta.size
    mx = 0.0
    for gi in range(G):
        g = order[gi]
        w = weights[g]
        if only_active and (not active[g]):
            continue
        st = starts[g]
        sz = sizes[g]
        for a in range(sz):
            acc = cty[st + a] - u[st + a]
            for b in range(sz):
                acc += Sigma[st + a, st + b] * beta[st + b]
            c[a] = acc
        _solve_block(sz, d_off[g], u_off[g], d_flat, u_flat, c, lam * w, ct, bnew)
        changed = False
        for a in range(sz):
            delta = bnew[a] - beta[st + a]
            if delta != 0.0:
                changed = True
                ad = abs(delta)
                if ad > mx:
                    mx = ad
            c[a] = delta  # reuse scratch as the delta buffer
        if changed:
            for i in range(pt):
                acc = 0.0
                for a in range(sz):
                    acc += Sigma[i, st + a] * c[a]
                u[i] += acc
            isact = w == 0.0
            for a in range(sz):
                beta[st + a] = bnew[a]
                if bnew[a] != 0.0:
                    isact = True
            active[g] = isact
    return mx


@njit(cache=True)
def _objective(cty, beta, u, yty, lam, starts, sizes, weights):
    """0.5/n ||y - D b||^2 + lam sum w ||b_g||, in Gram form."""
    pt = beta.size
    val = 0.5 * yty
    for i in range(pt):
        val += beta[i] * (0.5 * u[i] - cty[i])
    for g in range(starts.size):
        if weights[g] == 0.0:
            continue
        st = starts[g]
        acc = 0.0
        for a in range(sizes[g]):
            acc += beta[st + a] * beta[st + a]
        val += lam * weights[g] * np.sqrt(acc)
    return val


@njit(cache=True)
def _bcd_core(Sigma, cty, starts, sizes, weights, d_flat, u_flat, d_off, u_off,
              lam, beta, u, active, tol, max_sweeps, yty, obj_buf, order):
    """Active-set block coordinate descent. beta/u/active persist for warm starts."""
    maxsz = 0
    for g in range(starts.size):
        if sizes[g] > maxsz:
            maxsz = sizes[g]
    c = np.empty(maxsz)
    ct = np.empty(maxsz)
    bnew = np.empty(maxsz)
    record = obj_buf.size > 0
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        mx = _sweep(Sigma, cty, starts, sizes, weights, d_flat, u_flat, d_off,
                    u_off, lam, beta, u, active, False, order, c, ct, bnew)
        sweeps += 1
        if record and sweeps <= obj_buf.size:
            obj_buf[sweeps - 1] = _objective(cty, beta, u, yty, lam, starts, sizes, weights)
        if mx <= tol:
            converged = True
            break
        while sweeps < max_sweeps:
            mxa = _sweep(Sigma, cty, starts, sizes, weights, d_flat, u_flat, d_off,
                         u_off, lam, beta, u, active, True, order, c, ct, bnew)
            sweeps += 1
            if record and sweeps <= obj_buf.size:
                obj_buf[sweeps - 1] = _objective(cty, beta, u, yty, lam, starts, sizes, weights)
            if mxa <= tol:
                break
    return sweeps, converged


@njit(cache=True)
def bcd_fit(Sigma, cty, starts, sizes, weights, d_flat, u_flat, d_off, u_off,
            lam, beta0, tol, max_sweeps, yty, n_obj, order):
    """Fit at one lambda from a warm start; returns (beta, sweeps, converged, obj_path)."""
    pt = cty.size
    beta = beta0.copy()
    u = np.zeros(pt)
    for i in range(pt):
        if beta[i] != 0.0:
            for r in range(pt):
                u[r] += Sigma[r, i] * beta[i]
    G = starts.size
    active = np.zeros(G, np.bool_)
    for g in range(G):
        if weights[g] == 0.0:
            active[g] = True
        else:
            st = starts[g]
            for a in range(sizes[g]):
                if beta[st + a] != 0.0:
                    active[g] = True
                    break
    obj_buf = np.empty(n_obj)
    sweeps, converged = _bcd_core(Sigma, cty, starts, sizes, weights, d_flat, u_flat,
                                  d_off, u_off, lam, beta, u, active, tol, max_sweeps,
                                  yty, obj_buf, order)
    n_rec = min(sweeps, n_obj)
    return beta, sweeps, converged, obj_buf[:n_rec].copy()


@njit(cache=True)
def _val_error(S_val_f, c_val_f, yty_val_f, beta, nz):
    """Held-out mean squared error in Gram form, restricted to nonzero coords."""
    m = 0
    for i in range(beta.size):
        if beta[i] != 0.0:
            nz[m] = i
            m += 1
    e = yty_val_f
    for a in range(m):
        e -= 2.0 * beta[nz[a]] * c_val_f[nz[a]]
    for a in range(m):
        ba = beta[nz[a]]
        row = nz[a]
        for b in range(m):
            e += ba * S_val_f[row, nz[b]] * beta[nz[b]]
    return e


@njit(cache=True)
def cv_group_path(S_tr, c_tr, S_val, c_val, yty_val, starts, sizes, weights,
                  d_flat, u_flat, d_off, u_off, lams, tol, max_sweeps, order):
    """Per-fold warm-started lambda paths; returns held-out error (folds x lams).

    Each fold's path stops once its error has deteriorated clearly past its
    running minimum (25% above it for 3 consecutive grid points); remaining
    entries carry the last computed error forward. The fits there would only
    get worse, and on near-singular training Grams they are also by far the
    most expensive part of the path.
    """
    F = S_tr.shape[0]
    L = lams.size
    pt = c_tr.shape[1]
    err = np.empty((F, L))
    nz = np.empty(pt, np.int64)
    G = starts.size
    empty_obj = np.empty(0)
    for f in range(F):
        beta = np.zeros(pt)
        u = np.zeros(pt)
        active = np.zeros(G, np.bool_)
        for g in range(G):
            if weights[g] == 0.0:
                active[g] = True
        best = np.inf
        worse = 0
        for l in range(L):
            _bcd_core(S_tr[f], c_tr[f], starts, sizes, weights,
                      d_flat[f], u_flat[f], d_off, u_off, lams[l],
                      beta, u, active, tol, max_sweeps, 0.0, empty_obj, order)
            err[f, l] = _val_error(S_val[f], c_val[f], yty_val[f], beta, nz)
            if err[f, l] < best:
                best = err[f, l]
            if err[f, l] > 1.25 * best:
                worse += 1
                if worse >= 3:
                    for r in range(l + 1, L):
                        err[f, r] = err[f, l]
                    break
            else:
                worse = 0
    return err


@njit(cache=True)
def _lasso_core(S, cty, skip, lam, gamma, u, active, tol, max_sweeps):
    """Plain lasso coordinate descent on a Gram matrix, excluding index ``skip``."""
    m = cty.size
    sweeps = 0
    while sweeps < max_sweeps:
        mx = 0.0
        for i in range(m):
            if i == skip:
                continue
            sii = S[i, i]
            if sii <= 0.0:
                continue
            ci = cty[i] - u[i] + sii * gamma[i]
            if ci > lam:
                g = (ci - lam) / sii
            elif ci < -lam:
                g = (ci + lam) / sii
            else:
                g = 0.0
            delta = g - gamma[i]
            if delta != 0.0:
                for r in range(m):
                    u[r] += S[i, r] * delta
                gamma[i] = g
                active[i] = g != 0.0
                ad = abs(delta)
                if ad > mx:
                    mx = ad
        sweeps += 1
        if mx <= tol:
            return sweeps
        while sweeps < max_sweeps:
            mxa = 0.0
            for i in range(m):
                if i == skip or not active[i]:
                    continue
                sii = S[i, i]
                ci = cty[i] - u[i] + sii * gamma[i]
                if ci > lam:
                    g = (ci - lam) / sii
                elif ci < -lam:
                    g = (ci + lam) / sii
                else:
                    g = 0.0
                delta = g - gamma[i]
                if delta != 0.0:
                    for r in range(m):
                        u[r] += S[i, r] * delta
                    gamma[i] = g
                    active[i] = g != 0.0
                    ad = abs(delta)
                    if ad > mxa:
                        mxa = ad
            sweeps += 1
            if mxa <= tol:
                break
    return sweeps


@njit(cache=True)
def nodewise_cv(S_full, S_tr, S_val, nlam, lam_min_ratio, tol_cv,
                max_sweeps_cv, tol, max_sweeps, shared_lam):
    """Nodewise lasso for every column with per-regression CV lambda.

    Returns (Gamma, tau2, lam_sel): Gamma[j] holds the lasso coefficients of
    column j on the others (zero at j), tau2[j] = S_jj - S[:,j]'Gamma[j].
    shared_lam > 0 skips CV and uses that penalty for every regression.
    Fold fits and intermediate warm-path fits run at (tol_cv, max_sweeps_cv);
    the fit actually kept, at the selected lambda, is polished at
    (tol, max_sweeps).
    """
    pt = S_full.shape[0]
    F = S_tr.shape[0]
    Gamma = np.zeros((pt, pt))
    tau2 = np.empty(pt)
    lam_sel = np.empty(pt)
    lams = np.empty(nlam)
    gamma = np.empty(pt)
    u = np.empty(pt)
    active = np.empty(pt, np.bool_)
    errs = np.empty(nlam)
    for j in range(pt):
        lmax = 0.0
        for i in range(pt):
            if i != j:
                a = abs(S_full[i, j])
                if a > lmax:
                    lmax = a
        if lmax <= 0.0:
            lam_sel[j] = 0.0
            tau2[j] = S_full[j, j]
            continue
        if shared_lam > 0.0:
            best = nlam - 1
            top = lmax if lmax > shared_lam else shared_lam
            for l in range(nlam):
                frac = l / (nlam - 1.0)
                lams[l] = top * (shared_lam / top) ** frac
            lam_sel[j] = shared_lam
        else:
            for l in range(nlam):
                frac = l / (nlam - 1.0)
                lams[l] = lmax * lam_min_ratio ** frac
            for l in range(nlam):
                errs[l] = 0.0
            for f in range(F):
                for i in range(pt):
                    gamma[i] = 0.0
                    u[i] = 0.0
                    active[i] = False
                best_f = np.inf
                worse = 0
                for l in range(nlam):
                    _lasso_core(S_tr[f], S_tr[f, :, j], j, lams[l], gamma, u,
                                active, tol_cv, max_sweeps_cv)
                    e = S_val[f, j, j]
                    for i in range(pt):
                        if gamma[i] != 0.0:
                            e -= 2.0 * gamma[i] * S_val[f, i, j]
                    for a in range(pt):
                        ga = gamma[a]
                        if ga != 0.0:
                            acc = 0.0
                            for b in range(pt):
                                if gamma[b] != 0.0:
                                    acc += S_val[f, a, b] * gamma[b]
                            e += ga * acc
                    errs[l] += e
                    # same early deterioration rule as the group CV path
                    if e < best_f:
                        best_f = e
                    if e > 1.25 * best_f:
                        worse += 1
                        if worse >= 3:
                            for r in range(l + 1, nlam):
                                errs[r] += e
                            break
                    else:
                        worse = 0
            best = 0
            for l in range(1, nlam):
                if errs[l] < errs[best]:
                    best = l
            lam_sel[j] = lams[best]
        # final fit on the full Gram, warm path down to the chosen lambda
        for i in range(pt):
            gamma[i] = 0.0
            u[i] = 0.0
            active[i] = False
        for l in range(best):
            _lasso_core(S_full, S_full[:, j], j, lams[l], gamma, u, active,
                        tol_cv, max_sweeps_cv)
        _lasso_core(S_full, S_full[:, j], j, lams[best], gamma, u, active,
                    tol, max_sweeps)
        t2 = S_full[j, j]
        for i in range(pt):
            Gamma[j, i] = gamma[i]
            if gamma[i] != 0.0:
                t2 -= gamma[i] * S_full[i, j]
        tau2[j] = t2
    return Gamma, tau2, lam_sel
