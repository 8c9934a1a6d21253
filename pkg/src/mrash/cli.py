"""Command-line interface: fit, predict, simulate, benchmark, shrinkage-curve.

Exit codes: 0 success, 1 fit did not converge (outputs still written),
2 unreadable input or bad option, 3 dimension mismatch, 4 invalid scenario.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import mr_ash, normal_means, simlab
from .data import RegressionData
from .errors import ConfigurationError, InvalidInputError, RangeError

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_PARSE, EXIT_SHAPE, EXIT_SCENARIO = 0, 1, 2, 3, 4
ARTIFACT_KIND = "mrash-fit"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- file I/O

def read_table(path) -> tuple[list[str], np.ndarray]:
    """Headed, comma-separated numeric table. Ragged rows are rejected."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc.strerror}", EXIT_PARSE) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise CliError(f"{path}: missing header row", EXIT_PARSE)
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CliError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}", EXIT_PARSE)
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise CliError(f"{path}:{lineno}: non-numeric value", EXIT_PARSE) from None
    if not rows:
        raise CliError(f"{path}: no data rows", EXIT_PARSE)
    M = np.array(rows)
    if not np.all(np.isfinite(M)):
        raise CliError(f"{path}: non-finite values", EXIT_PARSE)
    return header, M


def write_table(path, header, columns) -> None:
    """Write columns with ``repr`` floats so values round-trip exactly."""
    fh = sys.stdout if path is None or str(path) == "-" else open(path, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _response_index(header, response: str) -> int:
    if response in header:
        return header.index(response)
    try:
        idx = int(response)
    except ValueError:
        raise CliError(f"response column {response!r} not found in header", EXIT_PARSE) from None
    if not 0 <= idx < len(header):
        raise CliError(f"response column index {idx} out of range", EXIT_PARSE)
    return idx


def load_regression(path, response: str):
    header, M = read_table(path)
    j = _response_index(header, response)
    if len(header) < 2:
        raise CliError(f"{path}: need at least one feature column", EXIT_SHAPE)
    features = [h for i, h in enumerate(header) if i != j]
    X = np.delete(M, j, axis=1)
    return features, header[j], RegressionData(X, M[:, j])


def _parse_floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise CliError(f"cannot parse {what}: {text!r}", EXIT_PARSE) from None


def save_artifact(path, fit: mr_ash.VebFit, features, response) -> None:
    doc = {
        "kind": ARTIFACT_KIND,
        "version": 1,
        "features": list(features),
        "response": response,
        "b_bar": fit.b_bar.tolist(),
        "intercept": fit.intercept,
        "sigma2": fit.sigma2,
        "grid": fit.prior.variances.tolist(),
        "weights": fit.prior.weights.tolist(),
        "n_outer_iters": fit.n_outer_iters,
        "converged": fit.converged,
        "elbo": float(fit.elbo_trace[-1]) if fit.elbo_trace.size else None,
        "settings": fit.settings,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_artifact(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read fit artifact {path}: {exc}", EXIT_PARSE) from None
    if doc.get("kind") != ARTIFACT_KIND:
        raise CliError(f"{path} is not a fit artifact", EXIT_PARSE)
    return doc


# ---------------------------------------------------------------- commands

def _fit_options(args) -> mr_ash.FitOptions:
    init = args.init
    if init == "file":
        if not args.init_file:
            raise CliError("--init file needs --init-file", EXIT_PARSE)
        _, M = read_table(args.init_file)
        init = M[:, 0]
    grid = _parse_floats(args.grid, "--grid") if args.grid else None
    weights = _parse_floats(args.weights, "--weights") if args.weights else None
    if grid is None and args.grid_k < 2:
        raise CliError("--grid-k must be >= 2 unless --grid is given", EXIT_PARSE)
    if grid is not None and args.grid_k_given and grid.size != args.grid_k:
        raise CliError(f"--grid has {grid.size} values but --grid-k is {args.grid_k}", EXIT_PARSE)
    return mr_ash.FitOptions(
        grid=grid, grid_k=args.grid_k, weights=weights, init=init, order=args.order,
        max_outer=args.max_outer, tol=args.tol, fix_prior=args.fix_prior,
        fix_sigma2=args.fix_sigma2, sigma2=args.sigma2, n_folds=args.folds, seed=args.seed,
    )


def cmd_fit(args) -> int:
    features, response, data = load_regression(args.input, args.response)
    opts = _fit_options(args)
    if isinstance(opts.init, np.ndarray) and opts.init.size != data.p:
        raise CliError(f"initial coefficients have length {opts.init.size}, expected {data.p}", EXIT_SHAPE)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = mr_ash.fit(data, opts)
    out = Path(args.out)
    save_artifact(out, fit, features, response)
    trace_path = out.with_suffix(".elbo.csv")
    write_table(trace_path, ["iteration", "elbo", "sigma2", "pi1"],
                [range(1, fit.elbo_trace.size + 1), fit.elbo_trace, fit.sigma2_trace, fit.pi1_trace])

    summary = {
        "nonzero": int(np.sum(np.abs(fit.b_bar) > 1e-6)),
        "sigma2": fit.sigma2,
        "pi1": float(fit.prior.weights[0]),
        "piK": float(fit.prior.weights[-1]),
        "iterations": fit.n_outer_iters,
        "converged": fit.converged,
        "artifact": str(out),
        "elbo_trace": str(trace_path),
    }
    if args.test:
        t_features, _, test = load_regression(args.test, response)
        if test.p != data.p:
            raise CliError(f"test file has {test.p} features, expected {data.p}", EXIT_SHAPE)
        summary["test_rmse"] = simlab.rmse(test.y, fit.predict(test.X))
    if args.format == "json":
        print(json.dumps(summary))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not fit.converged:
        print(f"warning: no convergence after {fit.n_outer_iters} outer iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_predict(args) -> int:
    doc = load_artifact(args.model)
    header, M = read_table(args.input)
    features = doc["features"]
    if all(f in header for f in features) and len(set(header)) == len(header):
        X = M[:, [header.index(f) for f in features]]
    elif M.shape[1] == len(features):
        X = M
    else:
        raise CliError(f"input has {M.shape[1]} columns; model expects {len(features)}", EXIT_SHAPE)
    # row-major, so the product matches an in-process predict on a plain array
    X = np.ascontiguousarray(X)
    b = np.array(doc["b_bar"], dtype=float)
    pred = doc["intercept"] + X @ b
    if args.format == "json":
        text = json.dumps({"prediction": pred.tolist()})
        if args.out in (None, "-"):
            print(text)
        else:
            Path(args.out).write_text(text + "\n")
    else:
        write_table(args.out, ["prediction"], [pred])
    return EXIT_OK


def _prior_from_args(args):
    if args.model:
        doc = load_artifact(args.model)
        grid = np.array(doc["grid"])
        weights = np.array(doc["weights"])
        sigma = math.sqrt(doc["sigma2"]) if args.sigma is None else args.sigma
    else:
        if not args.grid:
            raise CliError("give --grid (and optionally --weights) or --model", EXIT_PARSE)
        grid = _parse_floats(args.grid, "--grid")
        weights = _parse_floats(args.weights, "--weights") if args.weights else None
        sigma = 1.0 if args.sigma is None else args.sigma
    if not sigma > 0:
        raise CliError("--sigma must be positive", EXIT_PARSE)
    try:
        prior = (normal_means.ScaleMixturePrior.uniform(grid) if weights is None
                 else normal_means.ScaleMixturePrior(grid, weights))
    except InvalidInputError as exc:
        raise CliError(f"invalid prior: {exc}", EXIT_PARSE) from None
    return prior, sigma


def shrinkage_curve(prior, sigma: float, y: np.ndarray):
    """Columns (y, S(y), rho(S(y)), rho'(S(y))).

    The derivative is the chain-rule quotient of central differences of
    ``rho(S(y))`` and ``S(y)`` in ``y``; it is nan where ``S`` is flat.
    """
    S = normal_means.shrink(y, prior, sigma)
    rho = normal_means.penalty_at_shrunk(y, prior, sigma)
    h = 1e-5 * np.maximum(1.0, np.abs(y))
    dS = normal_means.shrink(y + h, prior, sigma) - normal_means.shrink(y - h, prior, sigma)
    drho = (normal_means.penalty_at_shrunk(y + h, prior, sigma)
            - normal_means.penalty_at_shrunk(y - h, prior, sigma))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_prime = np.where(np.abs(dS) > 1e-10 * h, drho / dS, np.nan)
    return S, rho, rho_prime


def cmd_shrinkage_curve(args) -> int:
    prior, sigma = _prior_from_args(args)
    if args.points < 2 or not args.y_max > args.y_min:
        raise CliError("need --points >= 2 and --y-max > --y-min", EXIT_PARSE)
    y = np.linspace(args.y_min, args.y_max, args.points)
    S, rho, rho_prime = shrinkage_curve(prior, sigma, y)
    if args.format == "json":
        doc = {"y": y.tolist(), "S": S.tolist(), "rho": rho.tolist(),
               "rho_prime": [None if math.isnan(v) else v for v in rho_prime]}
        text = json.dumps(doc)
        if args.out in (None, "-"):
            print(text)
        else:
            Path(args.out).write_text(text + "\n")
    else:
        write_table(args.out, ["y", "S", "rho", "rho_prime"], [y, S, rho, rho_prime])
    return EXIT_OK


def _scenarios(args):
    scns = simlab.load_scenarios(args.scenario)
    if args.name:
        scns = [s for s in scns if s.name in args.name]
        if not scns:
            raise simlab.ScenarioError(f"no scenario named {args.name}")
    if args.seed is not None:
        scns = [simlab.SimScenario(**{**asdict(s), "seed": args.seed}) for s in scns]
    return scns


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scn in _scenarios(args):
        sim = simlab.generate(scn, args.replicate)
        cols = [f"x{j + 1}" for j in range(scn.p)]
        meta = {"scenario": asdict(scn), "replicate": args.replicate, "sigma2": sim.sigma2}
        if args.format == "json":
            doc = {**meta, "b": sim.b.tolist(),
                   "train": {"X": sim.train.X.tolist(), "y": sim.train.y.tolist()},
                   "test": {"X": sim.test.X.tolist(), "y": sim.test.y.tolist()}}
            (out / f"{scn.name}.json").write_text(json.dumps(doc) + "\n")
            continue
        for part, d in (("train", sim.train), ("test", sim.test)):
            write_table(out / f"{scn.name}_{part}.csv", cols + ["y"], [*d.X.T, d.y])
        write_table(out / f"{scn.name}_truth.csv", ["b"], [sim.b])
        (out / f"{scn.name}_meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    scns = _scenarios(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in simlab.METHODS]
    if unknown:
        raise CliError(f"unknown methods: {', '.join(unknown)}", EXIT_PARSE)
    reports = simlab.run_benchmark(scns, methods, args.replicates, args.workers)
    out = Path(args.out)
    simlab.write_reports(reports, out)
    summary = simlab.summarize(reports)
    simlab.write_summary(summary, out.with_name(out.stem + "_summary.csv"))
    for row in summary:
        print(f"{row['scenario']}\t{row['method']}\tmean scaled RMSE {row['mean_rmse_scaled']:.4f}"
              f"\tfailures {row['failures']}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _GridK(argparse.Action):
    def __call__(self, parser, ns, values, option_string=None):
        setattr(ns, self.dest, values)
        ns.grid_k_given = True


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrash", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the regression model to a CSV file")
    f.add_argument("--input", required=True)
    f.add_argument("--response", required=True, help="response column name or 0-based index")
    f.add_argument("--test", help="optional held-out CSV with the same columns")
    f.add_argument("--grid-k", type=int, default=20, action=_GridK)
    f.add_argument("--grid", help="comma-separated scaled prior variances")
    f.add_argument("--weights", help="comma-separated initial mixture weights")
    f.add_argument("--init", choices=("null", "lasso", "file"), default="lasso")
    f.add_argument("--init-file", help="one-column CSV of initial coefficients for --init file")
    f.add_argument("--order", choices=("natural", "random", "lasso-path"), default="natural")
    f.add_argument("--max-outer", type=int, default=1000)
    f.add_argument("--tol", type=float)
    f.add_argument("--fix-prior", action="store_true")
    f.add_argument("--fix-sigma2", action="store_true")
    f.add_argument("--sigma2", type=float, help="initial (or fixed) residual variance")
    f.add_argument("--folds", type=int, default=10)
    f.add_argument("--seed", type=int)
    f.add_argument("--out", default="fit.json", help="fit artifact path; the ELBO trace goes next to it")
    f.add_argument("--format", choices=("csv", "json"), default="csv", help="summary style")
    f.set_defaults(func=cmd_fit, grid_k_given=False)

    p = sub.add_parser("predict", help="predict from a saved fit")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_predict)

    c = sub.add_parser("shrinkage-curve", help="tabulate S(y) and the induced penalty")
    c.add_argument("--grid")
    c.add_argument("--weights")
    c.add_argument("--sigma", type=float)
    c.add_argument("--model", help="take prior and sigma from a fit artifact")
    c.add_argument("--y-min", type=float, default=-5.0)
    c.add_argument("--y-max", type=float, default=5.0)
    c.add_argument("--points", type=int, default=201)
    c.add_argument("--out")
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.set_defaults(func=cmd_shrinkage_curve)

    for name, fn, helptext in (("simulate", cmd_simulate, "draw data sets from scenario files"),
                               ("benchmark", cmd_benchmark, "compare methods on simulated data")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--scenario", required=True, help="INI file, one section per scenario")
        s.add_argument("--name", action="append", help="restrict to these scenario sections")
        s.add_argument("--seed", type=int, help="override every scenario's seed")
        s.add_argument("--out", required=True)
        s.set_defaults(func=fn)
    sim, bench = sub.choices["simulate"], sub.choices["benchmark"]
    sim.add_argument("--replicate", type=int, default=0)
    sim.add_argument("--format", choices=("csv", "json"), default="csv")
    bench.add_argument("--methods", default="mr_ash,lasso,ridge,null")
    bench.add_argument("--replicates", type=int, default=20)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--format", choices=("csv",), default="csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except simlab.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (InvalidInputError, ConfigurationError, RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
