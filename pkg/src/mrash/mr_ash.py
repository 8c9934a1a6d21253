"""Variational empirical Bayes multiple linear regression.

The model is ``y ~ N(X b, sigma^2 I)`` with ``b_j / sigma`` i.i.d. from a
scale mixture of normals on a fixed grid. A fully factorized posterior
approximation, the mixture weights and the residual variance are fitted
jointly by coordinate ascent on the evidence lower bound (ELBO). Columns of
``X`` need not be normalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import _kernels
from .data import RegressionData
from .errors import ConfigurationError, InvalidInputError
from .normal_means import LOG_2PI, ScaleMixturePrior
from .plr import lasso_path_cv, plr_path

__all__ = [
    "RegressionData", "VebState", "VebFit", "FitOptions", "default_grid", "grid_for", "init_state",
    "update_coordinate", "coordinate_pass", "update_prior_weights", "update_sigma2",
    "elbo", "fit", "predict",
]

SIGMA2_FLOOR = 1e-12


def default_grid(n: int, K: int = 20) -> np.ndarray:
    """Scaled prior variances ``n * (2^((k-1)/K) - 1)^2`` for ``k = 1..K``."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if K < 2:
        raise InvalidInputError("grid needs K >= 2")
    k = np.arange(K)
    return n * (2.0 ** (k / K) - 1.0) ** 2


def grid_for(data: RegressionData, K: int = 20) -> np.ndarray:
    """``default_grid`` rescaled for columns that are not of unit norm.

    The formula presumes ``x_j'x_j = 1``; dividing by the median column
    norm keeps the largest prior variance of ``x_j b_j`` near ``sigma^2``.
    """
    d = data.column_norms_sq
    d = d[d > 0]
    scale = float(np.median(d)) if d.size else 1.0
    return default_grid(data.n, K) / scale


@dataclass
class VebState:
    """Mutable solver state.

    ``phi``, ``mu`` and ``s2`` parametrize ``q_j(b_j, gamma_j = k)
    = phi_jk N(mu_jk, s2_jk)``; ``mu`` and ``s2`` are in absolute units.
    """

    b_bar: np.ndarray
    resid_bar: np.ndarray
    prior: ScaleMixturePrior
    sigma2: float
    phi: np.ndarray
    mu: np.ndarray
    s2: np.ndarray
    b_tilde: np.ndarray
    sigma2_floor: float = 0.0

    @property
    def grid(self) -> np.ndarray:
        return self.prior.variances


def init_state(data: RegressionData, b_init=None, prior: ScaleMixturePrior | None = None,
               sigma2: float | None = None, sigma2_floor: float = 0.0) -> VebState:
    """Build a state from initial coefficients.

    Defaults: ``b = 0``, uniform weights on ``grid_for(data)``,
    ``sigma2 = ||y - X b||^2 / n``. Until the first coordinate pass the
    factors ``q_j`` equal the prior.
    """
    b = np.zeros(data.p) if b_init is None else np.array(b_init, dtype=float)
    if b.shape != (data.p,):
        raise InvalidInputError(f"initial coefficients must have length {data.p}")
    if prior is None:
        prior = ScaleMixturePrior.uniform(grid_for(data))
    resid = data.y - data.X @ b
    if sigma2 is None:
        sigma2 = float(resid @ resid) / data.n
    sigma2 = max(float(sigma2), sigma2_floor)
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise InvalidInputError("initial residual variance must be positive")
    K = prior.K
    return VebState(
        b_bar=b,
        resid_bar=np.ascontiguousarray(resid),
        prior=prior,
        sigma2=sigma2,
        phi=np.tile(prior.weights, (data.p, 1)),
        mu=np.zeros((data.p, K)),
        s2=np.tile(sigma2 * prior.variances, (data.p, 1)),
        b_tilde=b.copy(),
        sigma2_floor=sigma2_floor,
    )


def _log_pi(prior: ScaleMixturePrior) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(prior.weights)


def update_coordinate(state: VebState, data: RegressionData, j: int) -> VebState:
    """Set ``q_j`` to the normal-means posterior for the OLS estimate ``b_tilde_j``.

    Zero columns keep ``b_bar_j = 0`` and set ``q_j`` to the prior.
    """
    _kernels.veb_update_coordinate(
        data.X, state.resid_bar, state.b_bar, state.b_tilde, state.phi, state.mu, state.s2,
        _log_pi(state.prior), state.grid, state.sigma2, data.column_norms_sq, int(j),
    )
    return state


def coordinate_pass(state: VebState, data: RegressionData, order=None) -> VebState:
    order = np.arange(data.p) if order is None else np.asarray(order, dtype=np.int64)
    _kernels.veb_pass(
        data.X, state.resid_bar, state.b_bar, state.b_tilde, state.phi, state.mu, state.s2,
        _log_pi(state.prior), state.grid, state.sigma2, data.column_norms_sq, order,
    )
    return state


def update_prior_weights(state: VebState) -> VebState:
    pi = state.phi.mean(axis=0)
    state.prior = state.prior.with_weights(pi / pi.sum())
    return state


def update_sigma2(state: VebState, data: RegressionData) -> VebState:
    """Closed-form residual variance update.

    Only valid straight after a full coordinate pass and a weight update,
    and only when the first grid point is the point mass at zero.
    """
    if state.grid[0] != 0.0:
        raise ConfigurationError("residual variance update requires a point-mass first component")
    r = state.resid_bar
    d = data.column_norms_sq
    slab = data.p * (1.0 - state.prior.weights[0])
    num = r @ r + state.b_bar @ (d * (state.b_tilde - state.b_bar)) + state.sigma2 * slab
    state.sigma2 = max(float(num / (data.n + slab)), state.sigma2_floor)
    return state


def _xlogy(x, y):
    out = np.zeros_like(x)
    m = x > 0
    out[m] = x[m] * np.log(y[m])
    return out


def elbo(state: VebState, data: RegressionData) -> float:
    """Evidence lower bound for the current ``q``, weights and residual variance."""
    sigma2 = state.sigma2
    d = data.column_norms_sq
    r = state.resid_bar
    second = np.sum(state.phi * (state.mu ** 2 + state.s2), axis=1)
    e_loglik = (
        -0.5 * data.n * (LOG_2PI + np.log(sigma2))
        - (r @ r + d @ (second - state.b_bar ** 2)) / (2.0 * sigma2)
    )
    # a weight can underflow to 0 in the same update that leaves phi subnormal
    pi = np.broadcast_to(np.maximum(state.prior.weights, np.finfo(float).tiny), state.phi.shape)
    kl = np.sum(_xlogy(state.phi, state.phi)) - np.sum(_xlogy(state.phi, pi))
    slab = state.grid > 0
    if np.any(slab):
        phi = state.phi[:, slab]
        prior_var = sigma2 * state.grid[slab]
        s2 = state.s2[:, slab]
        mu = state.mu[:, slab]
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = 1.0 + np.log(s2 / prior_var) - (s2 + mu ** 2) / prior_var
        kl -= 0.5 * np.sum(np.where(phi > 0, phi * inner, 0.0))
    return float(e_loglik - kl)


@dataclass
class FitOptions:
    """Settings for ``fit``.

    grid
        Scaled prior variances; defaults to ``grid_for(data, grid_k)``, the
        standard grid divided by the median squared column norm.
    init
        ``"lasso"`` (cross-validated Lasso), ``"null"`` or an array of
        initial coefficients.
    order
        ``"natural"``, ``"random"`` (fresh permutation every outer
        iteration), ``"lasso-path"`` (order of entry into the Lasso path) or
        an explicit permutation.
    tol
        Stop once ``max|pi_t - pi_{t-1}| < tol``; default ``K * 1e-8``. With a
        fixed prior the same threshold is applied to
        ``max|b_t - b_{t-1}| / max(1, max|b_t|)``, as it is for a
        single-component grid.
    fix_prior, fix_sigma2
        Hold the weights / residual variance at their initial values.
    """

    grid: Sequence[float] | None = None
    grid_k: int = 20
    weights: Sequence[float] | None = None
    init: Any = "lasso"
    order: Any = "natural"
    max_outer: int = 1000
    tol: float | None = None
    fix_prior: bool = False
    fix_sigma2: bool = False
    sigma2: float | None = None
    intercept: bool = True
    n_folds: int = 10
    seed: int | None = None
    refresh_every: int = 10
    warn_wide_grid: bool = True

    def echo(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            out[k] = v
        return out


@dataclass(frozen=True)
class VebFit:
    b_bar: np.ndarray
    prior: ScaleMixturePrior
    sigma2: float
    intercept: float
    elbo_trace: np.ndarray
    sigma2_trace: np.ndarray
    pi1_trace: np.ndarray
    n_outer_iters: int
    converged: bool
    settings: dict
    phi: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    s2: np.ndarray = field(repr=False)
    b_tilde: np.ndarray = field(repr=False)
    resid_bar: np.ndarray = field(repr=False)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def _resolve_order(order, p, rng, lasso):
    if isinstance(order, str):
        if order == "natural":
            return np.arange(p), False
        if order == "random":
            return None, True
        if order == "lasso-path":
            return lasso().entry_order.astype(np.int64), False
        raise InvalidInputError(f"unknown update order {order!r}")
    perm = np.asarray(order, dtype=np.int64)
    if perm.shape != (p,) or not np.array_equal(np.sort(perm), np.arange(p)):
        raise InvalidInputError("custom order must be a permutation of 0..p-1")
    return perm, False


def fit(data: RegressionData, options: FitOptions | None = None, **overrides) -> VebFit:
    """Fit the model by coordinate ascent.

    ``y`` and the columns of ``X`` are centered first (unless
    ``intercept=False``); the intercept is recovered afterwards. The ELBO is
    recorded after every outer iteration.
    """
    opts = FitOptions(**overrides) if options is None else options
    if options is not None and overrides:
        opts = FitOptions(**{**options.__dict__, **overrides})
    if opts.max_outer < 1:
        raise InvalidInputError("max_outer must be >= 1")

    raw = data
    work = data.center() if opts.intercept else data
    n, p = work.n, work.p

    grid = grid_for(work, opts.grid_k) if opts.grid is None else np.asarray(opts.grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise InvalidInputError("grid must be non-negative and strictly increasing")
    K = grid.size
    prior = ScaleMixturePrior.uniform(grid) if opts.weights is None else ScaleMixturePrior(grid, opts.weights)
    if not opts.fix_sigma2 and grid[0] != 0.0:
        raise ConfigurationError("estimating sigma2 requires grid[0] == 0 (point mass); use fix_sigma2")
    tol = K * 1e-8 if opts.tol is None else float(opts.tol)
    if tol <= 0:
        raise InvalidInputError("tol must be positive")

    rng = np.random.default_rng(opts.seed)
    lasso_cache = []

    def lasso():
        if not lasso_cache:
            if isinstance(opts.init, str) and opts.init == "lasso":
                lasso_cache.append(lasso_path_cv(work, n_folds=opts.n_folds, seed=rng.integers(2**32)))
            else:
                lasso_cache.append(plr_path(work))
        return lasso_cache[0]

    if isinstance(opts.init, str):
        if opts.init == "null":
            b0 = np.zeros(p)
        elif opts.init == "lasso":
            b0 = lasso().coef_min.copy()
        else:
            raise InvalidInputError(f"unknown init {opts.init!r}")
    else:
        b0 = np.asarray(opts.init, dtype=float)

    y_var = float(work.y @ work.y) / n
    floor = SIGMA2_FLOOR * (y_var if y_var > 0 else 1.0)
    state = init_state(work, b0, prior, opts.sigma2, floor)

    order, shuffle = _resolve_order(opts.order, p, rng, lasso)
    # with one component the weights cannot move, so track the coefficients
    prior_fixed = opts.fix_prior or K == 1
    elbos, s2s, pi1s = [], [], []
    converged = False
    it = 0
    for it in range(1, opts.max_outer + 1):
        pi_old = state.prior.weights.copy()
        b_old = state.b_bar.copy()
        coordinate_pass(state, work, rng.permutation(p) if shuffle else order)
        if not prior_fixed:
            update_prior_weights(state)
        if it % opts.refresh_every == 0:
            state.resid_bar = np.ascontiguousarray(work.y - work.X @ state.b_bar)
        if not opts.fix_sigma2:
            update_sigma2(state, work)
        elbos.append(elbo(state, work))
        s2s.append(state.sigma2)
        pi1s.append(float(state.prior.weights[0]))
        if prior_fixed:
            scale = max(1.0, float(np.max(np.abs(state.b_bar))))
            delta = float(np.max(np.abs(state.b_bar - b_old))) / scale
        else:
            delta = float(np.max(np.abs(state.prior.weights - pi_old)))
        if delta < tol:
            converged = True
            break

    if opts.intercept:
        intercept = raw.y.mean() - float(raw.X.mean(axis=0) @ state.b_bar)
    else:
        intercept = 0.0
    if opts.warn_wide_grid and not prior_fixed and state.prior.weights[-1] > 1e-2:
        warnings.warn(
            f"largest grid component has weight {state.prior.weights[-1]:.3g}; consider a wider grid",
            RuntimeWarning, stacklevel=2,
        )
    return VebFit(
        b_bar=state.b_bar.copy(),
        prior=state.prior,
        sigma2=state.sigma2,
        intercept=float(intercept),
        elbo_trace=np.asarray(elbos),
        sigma2_trace=np.asarray(s2s),
        pi1_trace=np.asarray(pi1s),
        n_outer_iters=it,
        converged=converged,
        settings=opts.echo(),
        phi=state.phi.copy(),
        mu=state.mu.copy(),
        s2=state.s2.copy(),
        b_tilde=state.b_tilde.copy(),
        resid_bar=state.resid_bar.copy(),
    )


def predict(fit: VebFit, Xnew) -> np.ndarray:
    """``intercept + Xnew @ b_bar`` on the raw (uncentered) scale."""
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim == 1:
        Xnew = Xnew[None, :]
    if Xnew.ndim != 2 or Xnew.shape[1] != fit.b_bar.size:
        raise InvalidInputError(f"expected {fit.b_bar.size} columns, got shape {Xnew.shape}")
    return fit.intercept + Xnew @ fit.b_bar
