"""Empirical Bayes normal means with scale-mixture-of-normals priors.

Two parametrizations of the prior appear throughout:

* absolute: component ``k`` is ``N(0, u_k^2)`` with ``u_k^2 = variances[k]``;
* scaled: component ``k`` is ``N(0, s2 * variances[k])``, i.e. the prior is
  placed on ``b / sigma`` and the component variances are multiples of the
  noise variance.

The shrinkage/penalty functions (``shrink``, ``nm_marginal_loglik``,
``penalty_at_shrunk``, ``invert_shrink``) always use the scaled prior
``g_sigma`` with noise variance ``sigma**2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, RangeError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ScaleMixturePrior:
    """Finite mixture of zero-mean normals on a fixed variance grid.

    A variance of exactly 0 denotes the point mass at zero.
    """

    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.variances, dtype=float)).copy()
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).copy()
        if v.ndim != 1 or v.size < 1:
            raise InvalidInputError("variances must be a non-empty 1-d sequence")
        if w.shape != v.shape:
            raise InvalidInputError("weights and variances must have equal length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise InvalidInputError("prior contains non-finite values")
        if v[0] < 0 or np.any(np.diff(v) <= 0):
            raise InvalidInputError("variances must be non-negative and strictly increasing")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("weights must be non-negative and sum to 1")
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, variances) -> "ScaleMixturePrior":
        v = np.atleast_1d(np.asarray(variances, dtype=float))
        return cls(v, np.full(v.size, 1.0 / v.size))

    @property
    def K(self) -> int:
        return self.variances.size

    def with_weights(self, weights) -> "ScaleMixturePrior":
        return ScaleMixturePrior(self.variances, weights)


@dataclass(frozen=True)
class NormalMeansProblem:
    """Observations ``y_j`` with known, observation-specific variances ``s_j^2``."""

    observations: np.ndarray
    obs_variances: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.observations, dtype=float))
        s2 = np.asarray(self.obs_variances, dtype=float)
        if s2.ndim == 0:
            s2 = np.full(y.shape, float(s2))
        if y.ndim != 1 or s2.shape != y.shape:
            raise InvalidInputError("observations and obs_variances must be 1-d of equal length")
        _check_obs(y, s2)
        object.__setattr__(self, "observations", y)
        object.__setattr__(self, "obs_variances", s2)

    def __len__(self) -> int:
        return self.observations.size


@dataclass(frozen=True)
class NMPosterior:
    """Posterior summaries; row ``j`` describes observation ``j``."""

    responsibilities: np.ndarray
    component_means: np.ndarray
    component_vars: np.ndarray
    means: np.ndarray


def _check_obs(y, s2):
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("observations must be finite")
    if not np.all(np.isfinite(s2)) or np.any(s2 <= 0):
        raise InvalidInputError("observation variances must be finite and positive")


def _prepare(y, s2, prior: ScaleMixturePrior, scaled: bool):
    """Broadcast inputs and return ``(y[..., None], s2[..., None], u2)``."""
    y = np.asarray(y, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    _check_obs(y, s2)
    y, s2 = np.broadcast_arrays(y, s2)
    y = y[..., None]
    s2 = s2[..., None]
    u2 = prior.variances * s2 if scaled else np.broadcast_to(prior.variances, s2.shape[:-1] + (prior.K,))
    return y, s2, u2


def _log_normal0(y, var):
    return -0.5 * (LOG_2PI + np.log(var) + y * y / var)


def component_loglik(y, s2, prior: ScaleMixturePrior, scaled: bool = False) -> np.ndarray:
    """Log marginal likelihood of ``y`` under each mixture component.

    Returns ``log N(y; 0, s2 + u_k^2)`` with trailing axis of length K, where
    ``u_k^2`` is ``variances[k]`` (absolute) or ``s2 * variances[k]`` (scaled).
    """
    y, s2, u2 = _prepare(y, s2, prior, scaled)
    return _log_normal0(y, s2 + u2)


def _log_weights(prior: ScaleMixturePrior) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(prior.weights)


def _normalize_log(logw: np.ndarray):
    """Return (responsibilities, log normalizer) along the last axis."""
    m = np.max(logw, axis=-1, keepdims=True)
    w = np.exp(logw - m)
    tot = np.sum(w, axis=-1, keepdims=True)
    lognorm = m + np.log(tot)
    if not np.all(np.isfinite(lognorm)):
        raise FloatingPointError("non-finite normalizer in responsibilities")
    return w / tot, lognorm[..., 0]


def responsibilities(y, s2, prior: ScaleMixturePrior, scaled: bool = False) -> np.ndarray:
    """Posterior component membership probabilities ``phi_k``.

    Components with zero prior weight get exactly zero responsibility.
    """
    logw = _log_weights(prior) + component_loglik(y, s2, prior, scaled)
    return _normalize_log(logw)[0]


def posterior_components(y, s2, prior: ScaleMixturePrior, scaled: bool = False):
    """Per-component posterior ``(phi_k, mu_k, s_k^2)``.

    ``mu_k = u_k^2 / (s2 + u_k^2) * y`` and ``s_k^2 = s2 u_k^2 / (s2 + u_k^2)``;
    a point-mass component (``u_k^2 = 0``) gets ``mu_k = s_k^2 = 0`` exactly.
    """
    phi = responsibilities(y, s2, prior, scaled)
    yb, s2b, u2 = _prepare(y, s2, prior, scaled)
    shrink_factor = u2 / (s2b + u2)
    mu = shrink_factor * yb
    var = s2b * shrink_factor
    spike = u2 == 0
    if np.any(spike):
        mu = np.where(spike, 0.0, mu)
        var = np.where(spike, 0.0, var)
    return phi, mu, var


def posterior(problem: NormalMeansProblem, prior: ScaleMixturePrior, scaled: bool = False) -> NMPosterior:
    phi, mu, var = posterior_components(problem.observations, problem.obs_variances, prior, scaled)
    return NMPosterior(phi, mu, var, np.sum(phi * mu, axis=-1))


def marginal_loglik(problem: NormalMeansProblem, prior: ScaleMixturePrior, scaled: bool = False) -> float:
    """Sum over observations of ``log sum_k pi_k L_jk``."""
    logw = _log_weights(prior) + component_loglik(problem.observations, problem.obs_variances, prior, scaled)
    return float(np.sum(_normalize_log(logw)[1]))


def fit_mixture_weights(
    problem: NormalMeansProblem,
    prior: ScaleMixturePrior,
    max_iter: int = 1000,
    tol: float | None = None,
    scaled: bool = False,
):
    """Estimate mixture weights by EM, holding the variance grid fixed.

    Iterates until ``max|pi_t - pi_{t-1}| < tol`` (default ``K * 1e-8``) or
    ``max_iter`` iterations.

    Returns
    -------
    prior : ScaleMixturePrior
        Prior with the fitted weights.
    trace : ndarray
        Marginal log-likelihood evaluated at the weights entering each
        iteration, followed by the value at the returned weights.
    """
    if len(problem) == 0:
        raise InvalidInputError("empty normal means problem")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    if tol is None:
        tol = prior.K * 1e-8
    if tol <= 0:
        raise InvalidInputError("tol must be positive")

    loglik = component_loglik(problem.observations, problem.obs_variances, prior, scaled)
    pi = prior.weights.copy()
    trace = []
    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            logw = np.log(pi) + loglik
        phi, lognorm = _normalize_log(logw)
        trace.append(float(lognorm.sum()))
        new_pi = phi.mean(axis=0)
        new_pi /= new_pi.sum()
        delta = np.max(np.abs(new_pi - pi))
        pi = new_pi
        if delta < tol:
            break
    with np.errstate(divide="ignore"):
        trace.append(float(_normalize_log(np.log(pi) + loglik)[1].sum()))
    return prior.with_weights(pi), np.asarray(trace)


def _check_sigma(sigma):
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidInputError("sigma must be finite and positive")
    return sigma


def shrink(y, prior: ScaleMixturePrior, sigma: float):
    """Posterior mean operator ``S(y) = sum_k phi_k mu_k`` under ``g_sigma``."""
    sigma = _check_sigma(sigma)
    phi, mu, _ = posterior_components(y, sigma * sigma, prior, scaled=True)
    out = np.sum(phi * mu, axis=-1)
    return float(out) if out.ndim == 0 else out


def nm_marginal_loglik(y, prior: ScaleMixturePrior, sigma: float):
    """``log p(y | g_sigma, sigma^2)`` for each entry of ``y``."""
    sigma = _check_sigma(sigma)
    logw = _log_weights(prior) + component_loglik(y, sigma * sigma, prior, scaled=True)
    out = _normalize_log(logw)[1]
    return float(out) if out.ndim == 0 else out


def penalty_at_shrunk(y, prior: ScaleMixturePrior, sigma: float):
    """Induced penalty evaluated at ``S(y)``.

    ``rho(S(y)) = -sigma^2 * l_NM(y) - (y - S(y))^2 / 2``.
    """
    sigma = _check_sigma(sigma)
    s = shrink(y, prior, sigma)
    return -sigma * sigma * nm_marginal_loglik(y, prior, sigma) - 0.5 * (np.asarray(y) - s) ** 2


def _has_slab(prior: ScaleMixturePrior) -> bool:
    return bool(np.any((prior.variances > 0) & (prior.weights > 0)))


def invert_shrink(b_bar: float, prior: ScaleMixturePrior, sigma: float, tol: float = 1e-12) -> float:
    """Solve ``shrink(y) = b_bar`` for ``y``.

    The operator is odd and strictly increasing with ``|S(y)| <= |y|``, so the
    root is bracketed in ``[0, hi]`` where ``hi`` starts at ``max(|b_bar|, 1)``
    and doubles until ``S(hi) >= |b_bar|``; bisection then refines it.
    """
    sigma = _check_sigma(sigma)
    b_bar = float(b_bar)
    if not np.isfinite(b_bar):
        raise InvalidInputError("b_bar must be finite")
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    if b_bar == 0.0:
        return 0.0
    if not _has_slab(prior):
        raise RangeError("prior has no slab component; shrinkage range is {0}")
    target = abs(b_bar)
    lo, hi = 0.0, max(target, 1.0)
    for _ in range(64):
        if shrink(hi, prior, sigma) >= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise RangeError(f"could not bracket inverse of {b_bar}")
    mid = 0.5 * (lo + hi)
    while hi - lo > 4.0 * np.finfo(float).eps * hi:
        mid = 0.5 * (lo + hi)
        s = shrink(mid, prior, sigma)
        if abs(s - target) <= tol:
            break
        if s < target:
            lo = mid
        else:
            hi = mid
    return float(np.copysign(mid, b_bar))


def penalty(b_bar: float, prior: ScaleMixturePrior, sigma: float, tol: float = 1e-12) -> float:
    """Induced penalty ``rho(b_bar)`` via numerical inversion of the operator."""
    return float(penalty_at_shrunk(invert_shrink(b_bar, prior, sigma, tol), prior, sigma))
