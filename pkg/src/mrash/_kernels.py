"""Compiled inner loops for the coordinate ascent/descent solvers."""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)

RIDGE, LASSO, ELASTIC_NET, MCP, SCAD = 0, 1, 2, 3, 4


@njit(cache=True, nogil=True)
def veb_update_coordinate(X, resid, b_bar, b_tilde, phi, mu, s2, log_pi, grid, sigma2, d, j):
    """Replace q_j by the normal-means posterior given the other coordinates.

    ``resid`` is updated in place to ``y - X b_bar``. ``grid`` holds scaled
    prior variances; the prior for ``b_j`` has component variances
    ``sigma2 * grid[k]`` and the pseudo-observation ``b_tilde_j`` has noise
    variance ``sigma2 / d_j``.
    """
    n = X.shape[0]
    K = grid.shape[0]
    b_old = b_bar[j]
    if d[j] == 0.0:
        b_tilde[j] = 0.0
        for k in range(K):
            phi[j, k] = math.exp(log_pi[k])
            mu[j, k] = 0.0
            s2[j, k] = sigma2 * grid[k]
        b_bar[j] = 0.0
        return
    xr = 0.0
    for i in range(n):
        xr += X[i, j] * resid[i]
    bt = xr / d[j] + b_old
    b_tilde[j] = bt
    noise = sigma2 / d[j]
    lmax = -np.inf
    for k in range(K):
        u = sigma2 * grid[k]
        v = noise + u
        lw = log_pi[k] - 0.5 * (LOG_2PI + math.log(v) + bt * bt / v)
        phi[j, k] = lw
        if lw > lmax:
            lmax = lw
    tot = 0.0
    for k in range(K):
        w = math.exp(phi[j, k] - lmax)
        phi[j, k] = w
        tot += w
    b_new = 0.0
    for k in range(K):
        phi[j, k] /= tot
        u = sigma2 * grid[k]
        if u == 0.0:
            mu[j, k] = 0.0
            s2[j, k] = 0.0
        else:
            f = u / (noise + u)
            mu[j, k] = f * bt
            s2[j, k] = noise * f
        b_new += phi[j, k] * mu[j, k]
    b_bar[j] = b_new
    delta = b_new - b_old
    if delta != 0.0:
        for i in range(n):
            resid[i] -= X[i, j] * delta


@njit(cache=True, nogil=True)
def veb_pass(X, resid, b_bar, b_tilde, phi, mu, s2, log_pi, grid, sigma2, d, order):
    for t in range(order.shape[0]):
        veb_update_coordinate(X, resid, b_bar, b_tilde, phi, mu, s2, log_pi, grid, sigma2, d, order[t])


@njit(cache=True, nogil=True)
def soft(t, lam):
    if t > lam:
        return t - lam
    if t < -lam:
        return t + lam
    return 0.0


@njit(cache=True, nogil=True)
def plr_operator(t, code, lam, eta):
    """Scalar shrinkage operator for a unit-curvature coordinate problem."""
    if code == RIDGE:
        return t / (1.0 + lam)
    if code == LASSO:
        return soft(t, lam)
    if code == ELASTIC_NET:
        return soft(t, eta * lam) / (1.0 + (1.0 - eta) * lam)
    a = abs(t)
    if code == MCP:
        if a <= eta * lam:
            return soft(t, lam) / (1.0 - 1.0 / eta)
        return t
    # SCAD
    if a <= 2.0 * lam:
        return soft(t, lam)
    if a <= eta * lam:
        return soft(t, eta * lam / (eta - 1.0)) / (1.0 - 1.0 / (eta - 1.0))
    return t


@njit(cache=True, nogil=True)
def _sweep(X, resid, beta, idx, m, code, lam, eta, scale):
    n = X.shape[0]
    max_delta = 0.0
    for t in range(m):
        j = idx[t]
        z = 0.0
        for i in range(n):
            z += X[i, j] * resid[i]
        z = z / scale + beta[j]
        b_new = plr_operator(z, code, lam, eta)
        delta = b_new - beta[j]
        if delta != 0.0:
            for i in range(n):
                resid[i] -= X[i, j] * delta
            beta[j] = b_new
            if abs(delta) > max_delta:
                max_delta = abs(delta)
    return max_delta


@njit(cache=True, nogil=True)
def cd_solve(X, resid, beta, code, lam, eta, scale, tol, max_iter):
    """Cyclic coordinate descent with active-set cycling.

    Columns of ``X`` must satisfy ``x_j^T x_j = scale``; the objective is
    ``||y - X beta||^2 / (2 scale) + sum_j rho(beta_j)``. ``resid`` and
    ``beta`` are updated in place. Returns (number of full sweeps, converged).
    """
    p = X.shape[1]
    all_idx = np.arange(p)
    active = np.empty(p, dtype=np.int64)
    n_full = 0
    while n_full < max_iter:
        delta = _sweep(X, resid, beta, all_idx, p, code, lam, eta, scale)
        n_full += 1
        if delta < tol:
            return n_full, True
        m = 0
        for j in range(p):
            if beta[j] != 0.0:
                active[m] = j
                m += 1
        inner = 0
        while inner < max_iter:
            delta = _sweep(X, resid, beta, active, m, code, lam, eta, scale)
            inner += 1
            if delta < tol:
                break
    return n_full, False


@njit(cache=True, nogil=True)
def cd_path(X, y, lambdas, code, eta, scale, tol, max_iter, early_stop):
    """Warm-started solutions along a decreasing penalty sequence.

    With ``early_stop`` the path ends once the fraction of deviance explained
    exceeds 0.999 or improves by less than 1e-5 between consecutive
    penalties. Returns (coefficients, number of penalties solved, converged).
    """
    p = X.shape[1]
    L = lambdas.shape[0]
    coefs = np.zeros((L, p))
    beta = np.zeros(p)
    resid = y.copy()
    null_dev = 0.0
    for i in range(y.shape[0]):
        null_dev += y[i] * y[i]
    prev_ratio = 0.0
    ok = True
    for l in range(L):
        _, conv = cd_solve(X, resid, beta, code, lambdas[l], eta, scale, tol, max_iter)
        ok = ok and conv
        coefs[l] = beta
        if early_stop and null_dev > 0.0 and l > 0:
            dev = 0.0
            for i in range(resid.shape[0]):
                dev += resid[i] * resid[i]
            ratio = 1.0 - dev / null_dev
            if ratio > 0.999 or ratio - prev_ratio < 1e-5:
                return coefs[: l + 1], l + 1, ok
            prev_ratio = ratio
    return coefs, L, ok
