"""Simulation scenarios, prediction metrics and a benchmark runner.

Random streams are numpy PCG64 generators seeded from
``SeedSequence([seed, replicate, purpose])``, so every (scenario, replicate,
purpose) triple has its own reproducible stream regardless of execution order.
"""

from __future__ import annotations

import configparser
import csv
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from . import mr_ash
from .data import RegressionData
from .errors import InvalidInputError
from .plr import elastic_net_cv, lasso_path_cv, plr_path_cv, ridge_cv

DESIGNS = ("iid_normal", "equicorrelated", "external")
SIGNALS = ("normal", "uniform", "laplace", "t", "point_mass")
NOISES = ("normal", "uniform", "laplace", "t")
SIGNAL_T_DF = (1.0, 2.0, 4.0, 8.0)

# purpose codes for the random sub-streams
_DESIGN, _SUPPORT, _SIGNAL, _NOISE, _TEST_DESIGN, _TEST_NOISE, _ROWS = range(7)
_METHOD_BASE = 1000


class ScenarioError(InvalidInputError):
    """Scenario definition is invalid or its external design cannot be used."""


@dataclass(frozen=True)
class SimScenario:
    """One generative setting.

    For ``design="external"`` the matrix in ``design_file`` (CSV with a
    header row, or ``.npy``) is centered and scaled, and ``2n`` of its rows
    are drawn at random: the first ``n`` form the training design and the
    rest the test design. Its first ``p`` columns are used.
    """

    n: int
    p: int
    s: int
    design: str = "iid_normal"
    rho: float = 0.0
    design_file: str | None = None
    signal: str = "normal"
    signal_df: float | None = None
    noise: str = "normal"
    noise_df: float | None = None
    pve: float = 0.5
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ScenarioError("need n >= 2 and p >= 1")
        if not 0 <= self.s <= self.p:
            raise ScenarioError("need 0 <= s <= p")
        if not 0.0 < self.pve < 1.0:
            raise ScenarioError("pve must lie strictly between 0 and 1")
        if self.design not in DESIGNS:
            raise ScenarioError(f"unknown design {self.design!r}")
        if self.design == "equicorrelated" and not 0.0 <= self.rho <= 1.0:
            raise ScenarioError("rho must lie in [0, 1]")
        if self.design == "external" and not self.design_file:
            raise ScenarioError("external design needs design_file")
        if self.signal not in SIGNALS:
            raise ScenarioError(f"unknown signal distribution {self.signal!r}")
        if self.signal == "t" and self.signal_df not in SIGNAL_T_DF:
            raise ScenarioError("signal t distribution needs df in {1, 2, 4, 8}")
        if self.noise not in NOISES:
            raise ScenarioError(f"unknown noise distribution {self.noise!r}")
        if self.noise == "t" and not (self.noise_df is not None and self.noise_df > 0):
            raise ScenarioError("noise t distribution needs df > 0")
        if self.seed < 0:
            raise ScenarioError("seed must be non-negative")
        if not self.name:
            object.__setattr__(self, "name", f"n{self.n}_p{self.p}_s{self.s}_{self.design}")


class Simulation(NamedTuple):
    train: RegressionData
    test: RegressionData
    b: np.ndarray
    sigma2: float


def stream(seed: int, replicate: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replicate, purpose])))


def _laplace(rng, size, scale=1.0):
    u = rng.random(size) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def _student_t(rng, size, df):
    z = rng.standard_normal(size)
    chi2 = rng.chisquare(df, size)
    return z / np.sqrt(chi2 / df)


def draw_signal(rng, size, dist: str, df: float | None = None) -> np.ndarray:
    if dist == "normal":
        return rng.standard_normal(size)
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, size)
    if dist == "laplace":
        return _laplace(rng, size)
    if dist == "t":
        return _student_t(rng, size, df)
    if dist == "point_mass":
        return np.ones(size)
    raise ScenarioError(f"unknown signal distribution {dist!r}")


def draw_noise(rng, size, dist: str, df: float | None = None) -> np.ndarray:
    """Unit-variance errors (t with df <= 2 has no variance and is left unscaled)."""
    if dist == "normal":
        return rng.standard_normal(size)
    if dist == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
    if dist == "laplace":
        return _laplace(rng, size, 1.0 / math.sqrt(2.0))
    if dist == "t":
        e = _student_t(rng, size, df)
        return e * math.sqrt((df - 2.0) / df) if df > 2 else e
    raise ScenarioError(f"unknown noise distribution {dist!r}")


def _simulated_design(scn: SimScenario, rng) -> np.ndarray:
    X = rng.standard_normal((scn.n, scn.p))
    if scn.design == "equicorrelated" and scn.rho > 0:
        shared = rng.standard_normal((scn.n, 1))
        X = math.sqrt(1.0 - scn.rho) * X + math.sqrt(scn.rho) * shared
    return X


def load_matrix(path) -> np.ndarray:
    """Numeric matrix from ``.npy`` or a headed CSV file."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"design file not found: {path}")
    try:
        if path.suffix == ".npy":
            M = np.load(path, allow_pickle=False)
        else:
            M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (ValueError, OSError) as exc:
        raise ScenarioError(f"cannot read design file {path}: {exc}") from exc
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0 or not np.all(np.isfinite(M)):
        raise ScenarioError(f"design file {path} is not a finite 2-d matrix")
    return M


def standardize_columns(M: np.ndarray) -> np.ndarray:
    """Center columns and scale to unit standard deviation (constant columns stay 0)."""
    M = M - M.mean(axis=0)
    sd = M.std(axis=0)
    sd[sd == 0] = 1.0
    return M / sd


def _external_designs(scn: SimScenario, replicate: int):
    M = load_matrix(scn.design_file)
    if M.shape[0] < 2 * scn.n or M.shape[1] < scn.p:
        raise ScenarioError(
            f"design file has shape {M.shape}; need at least {2 * scn.n} rows and {scn.p} columns"
        )
    M = standardize_columns(M[:, : scn.p])
    rows = stream(scn.seed, replicate, _ROWS).permutation(M.shape[0])[: 2 * scn.n]
    return M[rows[: scn.n]], M[rows[scn.n:]]


def generate(scn: SimScenario, replicate: int = 0) -> Simulation:
    """Draw training and test sets sharing one coefficient vector.

    The noise variance is ``Var(X b) (1 - pve) / pve`` with the variance
    taken empirically over the training design, so the training PVE of the
    true signal is exact. With ``s = 0`` the signal variance is 0 and the
    noise variance falls back to 1.
    """
    if scn.design == "external":
        X, X_test = _external_designs(scn, replicate)
    else:
        X = _simulated_design(scn, stream(scn.seed, replicate, _DESIGN))
        X_test = _simulated_design(scn, stream(scn.seed, replicate, _TEST_DESIGN))
    b = np.zeros(scn.p)
    if scn.s > 0:
        support = stream(scn.seed, replicate, _SUPPORT).choice(scn.p, scn.s, replace=False)
        b[np.sort(support)] = draw_signal(stream(scn.seed, replicate, _SIGNAL), scn.s, scn.signal, scn.signal_df)
    signal = X @ b
    var_signal = float(np.var(signal))
    sigma2 = var_signal * (1.0 - scn.pve) / scn.pve if var_signal > 0 else 1.0
    sigma = math.sqrt(sigma2)
    e = draw_noise(stream(scn.seed, replicate, _NOISE), scn.n, scn.noise, scn.noise_df)
    e_test = draw_noise(stream(scn.seed, replicate, _TEST_NOISE), X_test.shape[0], scn.noise, scn.noise_df)
    train = RegressionData(X, signal + sigma * e)
    test = RegressionData(X_test, X_test @ b + sigma * e_test)
    return Simulation(train, test, b, sigma2)


def rmse(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if y.shape != pred.shape:
        raise InvalidInputError(f"shape mismatch: {y.shape} vs {pred.shape}")
    return float(np.sqrt(np.mean((y - pred) ** 2)))


def rmse_scaled(y_test, X_test, b_hat, intercept: float, sigma2_true: float, pve: float) -> float:
    """Test RMSE divided by ``sigma / sqrt(1 - pve)``, the expected RMSE of the zero predictor."""
    if not 0.0 < pve < 1.0:
        raise InvalidInputError("pve must lie strictly between 0 and 1")
    if sigma2_true <= 0:
        raise InvalidInputError("sigma2_true must be positive")
    X_test = np.asarray(X_test, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    if X_test.ndim != 2 or X_test.shape[1] != b_hat.size:
        raise InvalidInputError("X_test columns must match b_hat")
    r = rmse(y_test, intercept + X_test @ b_hat)
    return r / (math.sqrt(sigma2_true) / math.sqrt(1.0 - pve))


@dataclass(frozen=True)
class EvalReport:
    scenario: str
    replicate: int
    method: str
    rmse: float
    rmse_scaled: float
    rrmse: float = math.nan
    seconds: float = 0.0
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def rrmse(reports: Sequence[EvalReport]) -> list[EvalReport]:
    """Fill ``rrmse`` as RMSE over the best RMSE in the same (scenario, replicate).

    Failed rows keep ``rrmse = nan`` and do not take part in the minimum.
    """
    if not reports:
        raise InvalidInputError("no reports to rank")
    best: dict[tuple, float] = {}
    for r in reports:
        if r.failed:
            continue
        key = (r.scenario, r.replicate)
        best[key] = min(best.get(key, math.inf), r.rmse)
    out = []
    for r in reports:
        b = best.get((r.scenario, r.replicate))
        if r.failed or b is None:
            out.append(r)
        elif b > 0:
            out.append(replace(r, rrmse=r.rmse / b))
        else:
            out.append(replace(r, rrmse=1.0 if r.rmse == 0 else math.inf))
    return out


# A method maps (training data, simulation truth, seed) to (intercept, coefficients).
Method = Callable[[RegressionData, Simulation, int], tuple]


def _mr_ash(**opts) -> Method:
    def run(train, sim, seed):
        f = mr_ash.fit(train, seed=seed, warn_wide_grid=False, **opts)
        return f.intercept, f.b_bar
    return run


def _from_path(path_fn) -> Method:
    def run(train, sim, seed):
        path = path_fn(train, seed)
        return path.intercept_min, path.coef_min
    return run


def _ols_fit(X, y):
    xm = X.mean(axis=0)
    ym = float(y.mean())
    coef = np.linalg.lstsq(X - xm, y - ym, rcond=None)[0]
    return ym - float(xm @ coef), coef


def _ols(train, sim, seed):
    return _ols_fit(train.X, train.y)


def _oracle_ols(train, sim, seed):
    support = np.flatnonzero(sim.b)
    coef = np.zeros(train.p)
    if support.size == 0:
        return float(train.y.mean()), coef
    b0, coef[support] = _ols_fit(train.X[:, support], train.y)
    return b0, coef


METHODS: dict[str, Method] = {
    "mr_ash": _mr_ash(init="lasso", order="natural"),
    "mr_ash_null": _mr_ash(init="null", order="natural"),
    "mr_ash_null_random": _mr_ash(init="null", order="random"),
    "mr_ash_null_lasso_order": _mr_ash(init="null", order="lasso-path"),
    "ridge": _from_path(lambda d, s: ridge_cv(d, seed=s)),
    "lasso": _from_path(lambda d, s: lasso_path_cv(d, seed=s)),
    "elastic_net": _from_path(lambda d, s: elastic_net_cv(d, seed=s)),
    "mcp": _from_path(lambda d, s: plr_path_cv(d, "mcp", seed=s)),
    "scad": _from_path(lambda d, s: plr_path_cv(d, "scad", seed=s)),
    "ols": _ols,
    "oracle_ols": _oracle_ols,
    "oracle": lambda train, sim, seed: (0.0, sim.b),
    "null": lambda train, sim, seed: (float(train.y.mean()), np.zeros(train.p)),
}


def method_seed(scn: SimScenario, replicate: int, method: str) -> int:
    ss = np.random.SeedSequence([scn.seed, replicate, _METHOD_BASE + zlib.crc32(method.encode())])
    return int(ss.generate_state(1)[0])


def evaluate(scn: SimScenario, replicate: int, method: str, sim: Simulation | None = None) -> EvalReport:
    """Run one (scenario, replicate, method) cell; failures become flagged rows."""
    try:
        fn = METHODS[method]
    except KeyError:
        raise InvalidInputError(f"unknown method {method!r}") from None
    t0 = time.perf_counter()
    try:
        if sim is None:
            sim = generate(scn, replicate)
        intercept, coef = fn(sim.train, sim, method_seed(scn, replicate, method))
        pred = intercept + sim.test.X @ coef
        r = rmse(sim.test.y, pred)
        rs = rmse_scaled(sim.test.y, sim.test.X, coef, intercept, sim.sigma2, scn.pve)
        err = ""
    except ScenarioError:
        raise
    except Exception as exc:  # flagged, the run goes on
        r = rs = math.nan
        err = f"{type(exc).__name__}: {exc}"
    return EvalReport(scn.name, replicate, method, r, rs, seconds=time.perf_counter() - t0, error=err)


def run_benchmark(
    scenarios: Iterable[SimScenario],
    methods: Sequence[str],
    replicates: int = 20,
    workers: int = 1,
) -> list[EvalReport]:
    """Evaluate every method on every replicate of every scenario.

    Rows come back ordered by (scenario, replicate, method) whatever the
    number of worker threads, with ``rrmse`` filled in.
    """
    scenarios = list(scenarios)
    for m in methods:
        if m not in METHODS:
            raise InvalidInputError(f"unknown method {m!r}")
    if replicates < 1:
        raise InvalidInputError("replicates must be >= 1")
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ScenarioError("scenario names must be unique")

    def cell(task):
        scn, rep = task
        sim = generate(scn, rep)
        return [evaluate(scn, rep, m, sim) for m in methods]

    tasks = [(scn, rep) for scn in scenarios for rep in range(replicates)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(cell, tasks))
    else:
        rows = [cell(t) for t in tasks]
    return rrmse([r for group in rows for r in group])


REPORT_FIELDS = ("scenario", "replicate", "method", "rmse", "rmse_scaled", "rrmse", "seconds")


def write_reports(reports: Sequence[EvalReport], path) -> None:
    """Results CSV; an ``error`` column is appended when any cell failed."""
    extra = any(r.failed for r in reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS + (("error",) if extra else ()))
        for r in reports:
            row = [r.scenario, r.replicate, r.method, repr(r.rmse), repr(r.rmse_scaled), repr(r.rrmse), f"{r.seconds:.6f}"]
            w.writerow(row + ([r.error] if extra else []))


def summarize(reports: Sequence[EvalReport]) -> list[dict]:
    """Mean and median of scaled RMSE and RRMSE per (scenario, method)."""
    cells: dict[tuple, list[EvalReport]] = {}
    for r in reports:
        cells.setdefault((r.scenario, r.method), []).append(r)
    out = []
    for (scn, method), rs in cells.items():
        ok = [r for r in rs if not r.failed]
        scaled = np.array([r.rmse_scaled for r in ok])
        rel = np.array([r.rrmse for r in ok])
        out.append({
            "scenario": scn,
            "method": method,
            "replicates": len(ok),
            "failures": len(rs) - len(ok),
            "mean_rmse_scaled": float(scaled.mean()) if ok else math.nan,
            "median_rmse_scaled": float(np.median(scaled)) if ok else math.nan,
            "mean_rrmse": float(rel.mean()) if ok else math.nan,
            "median_rrmse": float(np.median(rel)) if ok else math.nan,
            "mean_seconds": float(np.mean([r.seconds for r in ok])) if ok else math.nan,
        })
    return out


def write_summary(rows: Sequence[dict], path) -> None:
    keys = ("scenario", "method", "replicates", "failures", "mean_rmse_scaled",
            "median_rmse_scaled", "mean_rrmse", "median_rrmse", "mean_seconds")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


_INT_KEYS = {"n", "p", "s", "seed"}
_FLOAT_KEYS = {"rho", "pve", "signal_df", "noise_df"}


def scenario_from_mapping(name: str, items: dict) -> SimScenario:
    known = {f.name for f in fields(SimScenario)}
    kw: dict = {"name": name}
    for key, raw in items.items():
        if key not in known or key == "name":
            raise ScenarioError(f"[{name}] unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                kw[key] = int(raw)
            elif key in _FLOAT_KEYS:
                kw[key] = float(raw)
            else:
                kw[key] = str(raw).strip()
        except ValueError:
            raise ScenarioError(f"[{name}] bad value for {key}: {raw!r}") from None
    for key in ("n", "p", "s"):
        if key not in kw:
            raise ScenarioError(f"[{name}] missing required key {key!r}")
    return SimScenario(**kw)


def load_scenarios(path) -> list[SimScenario]:
    """Read scenarios from an INI-style file, one ``[section]`` per scenario.

    Keys mirror the ``SimScenario`` fields; ``[DEFAULT]`` values apply to
    every section. Relative ``design_file`` paths resolve against the
    scenario file's directory.
    """
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ScenarioError(f"cannot parse scenario file {path}: {exc}") from exc
    out = []
    for section in cp.sections():
        items = dict(cp.items(section))
        if items.get("design_file"):
            f = Path(items["design_file"])
            items["design_file"] = str(f if f.is_absolute() else path.parent / f)
        out.append(scenario_from_mapping(section, items))
    if not out:
        raise ScenarioError(f"no scenarios in {path}")
    return out
