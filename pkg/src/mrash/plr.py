"""Penalized linear regression baselines.

Shrinkage operators for the ridge, Lasso, Elastic Net, MCP and SCAD
penalties, a cyclic coordinate-descent solver built on them, and
cross-validated regularization paths.

Two penalty scales are used. ``fit_plr`` minimizes
``||y - X b||^2 / 2 + sum_j rho(b_j)`` after rescaling columns to unit norm.
The path functions follow the usual glmnet/ncvreg convention instead:
columns are standardized to ``x^T x = n`` and the loss is divided by ``n``, so
the same penalty sequence is comparable across CV folds of different size.
Either way the penalty acts on the coefficients of the rescaled columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import RegressionData
from .errors import InvalidInputError

PENALTIES = {
    "ridge": _kernels.RIDGE,
    "lasso": _kernels.LASSO,
    "elastic_net": _kernels.ELASTIC_NET,
    "mcp": _kernels.MCP,
    "scad": _kernels.SCAD,
}

# ncvreg defaults for the concavity parameter
DEFAULT_ETA = {"mcp": 3.0, "scad": 3.7, "elastic_net": 0.5}


@dataclass(frozen=True)
class PlrSpec:
    """Penalty family plus tuning parameters.

    ``eta`` is the Elastic Net mixing weight on the L1 term (in [0, 1]) or the
    MCP/SCAD concavity parameter (MCP needs eta > 1, SCAD eta > 2). It is
    ignored for ridge and Lasso.
    """

    penalty: str
    lam: float
    eta: float | None = None

    def __post_init__(self):
        if self.penalty not in PENALTIES:
            raise InvalidInputError(f"unknown penalty {self.penalty!r}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidInputError("lambda must be finite and non-negative")
        eta = self.eta
        if eta is None:
            eta = DEFAULT_ETA.get(self.penalty, 0.0)
            object.__setattr__(self, "eta", float(eta))
        if self.penalty == "elastic_net" and not 0.0 <= eta <= 1.0:
            raise InvalidInputError("elastic net mixing must lie in [0, 1]")
        if self.penalty == "mcp" and not eta > 1.0:
            raise InvalidInputError("MCP requires eta > 1")
        if self.penalty == "scad" and not eta > 2.0:
            raise InvalidInputError("SCAD requires eta > 2")

    @property
    def code(self) -> int:
        return PENALTIES[self.penalty]


def _soft(t, lam):
    return np.sign(t) * np.maximum(np.abs(t) - lam, 0.0)


def shrink_plr(t, spec: PlrSpec):
    """Closed-form minimizer of ``(t - theta)^2 / 2 + rho(theta)``."""
    t = np.asarray(t, dtype=float)
    lam, eta = spec.lam, spec.eta
    a = np.abs(t)
    if spec.penalty == "ridge":
        out = t / (1.0 + lam)
    elif spec.penalty == "lasso":
        out = _soft(t, lam)
    elif spec.penalty == "elastic_net":
        scale = 1.0 + (1.0 - eta) * lam
        out = _soft(t / scale, eta * lam / scale)
    elif spec.penalty == "mcp":
        out = np.where(a <= eta * lam, _soft(t, lam) / (1.0 - 1.0 / eta), t)
    else:
        mid = _soft(t, eta * lam / (eta - 1.0)) / (1.0 - 1.0 / (eta - 1.0))
        out = np.where(a <= 2.0 * lam, _soft(t, lam), np.where(a <= eta * lam, mid, t))
    return float(out) if out.ndim == 0 else out


def penalty_value(t, spec: PlrSpec):
    """Penalty ``rho(t)`` matching ``shrink_plr``."""
    t = np.asarray(t, dtype=float)
    lam, eta = spec.lam, spec.eta
    a = np.abs(t)
    if spec.penalty == "ridge":
        out = 0.5 * lam * t * t
    elif spec.penalty == "lasso":
        out = lam * a
    elif spec.penalty == "elastic_net":
        out = 0.5 * (1.0 - eta) * lam * t * t + eta * lam * a
    elif spec.penalty == "mcp":
        out = np.where(a <= eta * lam, lam * a - t * t / (2.0 * eta), 0.5 * eta * lam * lam)
    else:
        mid = (2.0 * eta * lam * a - t * t - lam * lam) / (2.0 * (eta - 1.0))
        out = np.where(a <= lam, lam * a, np.where(a <= eta * lam, mid, 0.5 * lam * lam * (eta + 1.0)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PlrFit:
    coef: np.ndarray
    intercept: float
    converged: bool
    n_iter: int

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef


def _standardize(data: RegressionData, target_sq: float, intercept: bool):
    """Center (optionally) and rescale columns so that ``x^T x = target_sq``.

    Returns (Xs, y, factor, x_means, y_mean) with ``b = factor * beta``.
    """
    if intercept:
        xm = data.X.mean(axis=0)
        ym = float(data.y.mean())
        X = data.X - xm
        y = data.y - ym
    else:
        xm = np.zeros(data.p)
        ym = 0.0
        X = data.X
        y = data.y
    norms = np.sqrt(np.einsum("ij,ij->j", X, X))
    live = norms > 1e-12 * max(1.0, float(norms.max()))
    factor = np.zeros(data.p)
    factor[live] = np.sqrt(target_sq) / norms[live]
    Xs = np.asfortranarray(X * factor)
    return Xs, np.ascontiguousarray(y, dtype=float), factor, xm, ym


def fit_plr(
    data: RegressionData,
    spec: PlrSpec,
    max_iter: int = 10000,
    tol: float = 1e-10,
    intercept: bool = True,
) -> PlrFit:
    """Cyclic coordinate descent for ``||y - X b||^2 / 2 + sum_j rho(b_j)``.

    Columns are rescaled to unit norm for the updates; ``tol`` bounds the
    largest coefficient change (in rescaled units) of the final full sweep.
    If ``max_iter`` sweeps are exhausted the last iterate is returned with
    ``converged=False``.
    """
    Xs, y, factor, xm, ym = _standardize(data, 1.0, intercept)
    beta = np.zeros(data.p)
    resid = y.copy()
    n_iter, ok = _kernels.cd_solve(Xs, resid, beta, spec.code, spec.lam, spec.eta, 1.0, tol, max_iter)
    coef = beta * factor
    return PlrFit(coef, ym - float(xm @ coef), bool(ok), int(n_iter))


def plr_objective(data: RegressionData, coef, spec: PlrSpec, intercept: bool = True) -> float:
    """Objective minimized by ``fit_plr`` evaluated at raw-scale ``coef``."""
    Xs, y, factor, _, _ = _standardize(data, 1.0, intercept)
    beta = np.divide(coef, factor, out=np.zeros_like(coef, dtype=float), where=factor > 0)
    r = y - Xs @ beta
    return float(0.5 * r @ r + np.sum(penalty_value(beta, spec)))


@dataclass(frozen=True)
class LassoPath:
    """Regularization path, optionally with cross-validation results.

    ``coefficients[l]`` and ``intercepts[l]`` are on the raw scale of the
    input data. ``entry_order`` lists coordinates by the first penalty at
    which they become non-zero (ties and never-entering coordinates by index).
    """

    lambdas: np.ndarray
    coefficients: np.ndarray
    intercepts: np.ndarray
    entry_order: np.ndarray
    cv_errors: np.ndarray | None = None
    lambda_min: float | None = None
    index_min: int | None = None
    penalty: str = "lasso"
    eta: float = 0.0
    converged: bool = True

    @property
    def coef_min(self) -> np.ndarray:
        return self.coefficients[self.index_min]

    @property
    def intercept_min(self) -> float:
        return float(self.intercepts[self.index_min])


def entry_order(coefficients: np.ndarray) -> np.ndarray:
    L, p = coefficients.shape
    nz = coefficients != 0
    first = np.where(nz.any(axis=0), nz.argmax(axis=0), L)
    return np.lexsort((np.arange(p), first))


def lambda_sequence(data: RegressionData, n_lambda: int = 100, ratio: float = 1e-3, l1_weight: float = 1.0):
    """Log-spaced penalties from the smallest all-zero penalty down ``ratio``."""
    Xs, y, _, _, _ = _standardize(data, data.n, True)
    lam_max = float(np.max(np.abs(Xs.T @ y))) / data.n / max(l1_weight, 1e-3)
    if lam_max <= 0:
        lam_max = 1.0
    return np.geomspace(lam_max, lam_max * ratio, n_lambda)


def _path_on(data: RegressionData, lambdas, code, eta, tol, max_iter, early_stop=False):
    Xs, y, factor, xm, ym = _standardize(data, data.n, True)
    # glmnet-style threshold: max_j (x_j^T x_j / n) * dbeta_j^2 < tol * var(y)
    step_tol = np.sqrt(tol * max(float(y @ y) / data.n, 1e-300))
    betas, _, ok = _kernels.cd_path(Xs, y, lambdas, code, eta, float(data.n), step_tol, max_iter, early_stop)
    coefs = betas * factor
    return coefs, ym - coefs @ xm, bool(ok)


def plr_path(
    data: RegressionData,
    penalty: str = "lasso",
    eta: float | None = None,
    lambdas=None,
    n_lambda: int = 100,
    lambda_ratio: float = 1e-3,
    tol: float = 1e-7,
    max_iter: int = 1000,
    early_stop: bool = True,
) -> LassoPath:
    """Regularization path with warm starts.

    When the penalty sequence is generated here, it is truncated once the
    fit saturates (see ``_kernels.cd_path``); ``early_stop=False`` keeps the
    full sequence.
    """
    spec = PlrSpec(penalty, 0.0, eta)
    if lambdas is None:
        l1 = spec.eta if penalty == "elastic_net" else 1.0
        lambdas = lambda_sequence(data, n_lambda, lambda_ratio, l1)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) >= 0):
        raise InvalidInputError("lambdas must be strictly decreasing")
    coefs, icpt, ok = _path_on(data, lambdas, spec.code, spec.eta, tol, max_iter, early_stop)
    lambdas = lambdas[: coefs.shape[0]]
    return LassoPath(lambdas, coefs, icpt, entry_order(coefs), penalty=penalty, eta=spec.eta, converged=ok)


def fold_ids(n: int, n_folds: int, seed) -> np.ndarray:
    """Balanced fold labels assigned after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    return rng.permutation(np.arange(n) % n_folds)


def plr_path_cv(
    data: RegressionData,
    penalty: str = "lasso",
    eta: float | None = None,
    n_lambda: int = 100,
    n_folds: int = 10,
    seed=None,
    lambda_ratio: float = 1e-3,
    tol: float = 1e-7,
    max_iter: int = 1000,
) -> LassoPath:
    """K-fold cross-validated path; selects the penalty with least mean CV error.

    Folds reuse the full-data penalty sequence. The CV error is the mean
    squared prediction error over all held-out observations.
    """
    if not 2 <= n_folds <= data.n:
        raise InvalidInputError("need 2 <= n_folds <= n")
    full = plr_path(data, penalty, eta, None, n_lambda, lambda_ratio, tol, max_iter)
    folds = fold_ids(data.n, n_folds, seed)
    sq_err = np.zeros(full.lambdas.size)
    for f in range(n_folds):
        test = folds == f
        train = data.subset(~test)
        if train.n < 2:
            raise InvalidInputError("degenerate fold")
        coefs, icpt, _ = _path_on(train, full.lambdas, PENALTIES[penalty], full.eta, tol, max_iter)
        pred = icpt[:, None] + coefs @ data.X[test].T
        sq_err += np.sum((data.y[test][None, :] - pred) ** 2, axis=1)
    cv = sq_err / data.n
    best = int(np.argmin(cv))
    return LassoPath(
        full.lambdas, full.coefficients, full.intercepts, full.entry_order,
        cv, float(full.lambdas[best]), best, penalty, full.eta, full.converged,
    )


def lasso_path_cv(data: RegressionData, n_lambda: int = 100, n_folds: int = 10, seed=None, **kw) -> LassoPath:
    return plr_path_cv(data, "lasso", None, n_lambda, n_folds, seed, **kw)


def elastic_net_cv(data: RegressionData, mixing=None, n_lambda: int = 100, n_folds: int = 10, seed=None, **kw):
    """Cross-validate both the mixing weight and the penalty strength.

    Every mixing weight shares the same folds. The default grid is the eleven
    values 0, 0.1, ..., 1; a weight of 0 is handled as ridge.
    """
    if mixing is None:
        mixing = np.linspace(0.0, 1.0, 11)
    best = None
    for a in mixing:
        if a == 0.0:
            path = ridge_cv(data, n_lambda, n_folds, seed)
        else:
            path = plr_path_cv(data, "elastic_net", float(a), n_lambda, n_folds, seed, **kw)
        if best is None or path.cv_errors[path.index_min] < best.cv_errors[best.index_min]:
            best = path
    return best


def ridge_cv(data: RegressionData, n_lambda: int = 100, n_folds: int = 10, seed=None, lambda_ratio: float = 1e-5):
    """Cross-validated ridge regression solved exactly through the SVD.

    Uses the path-function convention (standardized columns, loss divided by
    n). Penalties are log-spaced from ``100 * d_max^2 / n`` down by
    ``lambda_ratio``, with ``d_max`` the largest singular value of the
    standardized design, which spans under- to over-regularized fits.
    """
    if not 2 <= n_folds <= data.n:
        raise InvalidInputError("need 2 <= n_folds <= n")

    def solve(d: RegressionData, lambdas):
        Xs, y, factor, xm, ym = _standardize(d, d.n, True)
        U, s, Vt = np.linalg.svd(Xs, full_matrices=False)
        uty = U.T @ y
        shrink = s[None, :] / (s[None, :] ** 2 + d.n * lambdas[:, None])
        betas = (shrink * uty[None, :]) @ Vt
        coefs = betas * factor
        return coefs, ym - coefs @ xm, s

    Xs, _, _, _, _ = _standardize(data, data.n, True)
    dmax = float(np.linalg.norm(Xs, 2))
    lam_max = 100.0 * dmax * dmax / data.n
    lambdas = np.geomspace(lam_max, lam_max * lambda_ratio, n_lambda)
    coefs, icpt, _ = solve(data, lambdas)
    folds = fold_ids(data.n, n_folds, seed)
    sq_err = np.zeros(n_lambda)
    for f in range(n_folds):
        test = folds == f
        c, b0, _ = solve(data.subset(~test), lambdas)
        pred = b0[:, None] + c @ data.X[test].T
        sq_err += np.sum((data.y[test][None, :] - pred) ** 2, axis=1)
    cv = sq_err / data.n
    best = int(np.argmin(cv))
    return LassoPath(lambdas, coefs, icpt, entry_order(coefs), cv, float(lambdas[best]), best, "ridge", 0.0)
