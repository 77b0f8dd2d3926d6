"""Command-line front end: ``bench``, ``select`` and ``posterior``.

Every flag may also be given in a JSON config file (``--config``) under the
flag's long name with dashes replaced by underscores; flags win on conflict.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O failure.
Errors are printed to stderr as a single JSON record.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, transforms
from .benchmarks import (
    PROBLEMS,
    candidate_specs,
    get_problem,
    median_table,
    observed_data,
    run_experiment,
    simulate_training,
    write_results,
)
from .exceptions import ContractViolation, GPABCError
from .io import DataFormatError, read_training_csv, write_csv
from .model_selection import (
    CRITERIA,
    MODEL_KINDS,
    CandidateSpec,
    default_candidates,
    evaluate_candidates,
    fit_candidate,
    select_candidate,
)
from .posterior import (
    GridSpec,
    PriorBox,
    kde_posterior,
    surrogate_posterior,
    threshold_from_quantile,
)

log = logging.getLogger("gpabc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MODELS = tuple(MODEL_KINDS) + ("rejection",)


class ConfigError(ContractViolation):
    """Invalid flags or config file."""


DEFAULTS = {
    "bench": {
        "problem": None,
        "models": "gp,gp-indep,classifier,rejection",
        "transforms": "se,log,sqrt",
        "n": "50,100,200,400,600",
        "reps": 20,
        "q": 0.05,
        "seed": 0,
        "grid": None,
        "baseline": "abc",
        "select": "",
        "k": 10,
        "link": "logit",
        "out": "results",
    },
    "select": {
        "data": None,
        "candidates": None,
        "q": 0.05,
        "criterion": "classifier",
        "seed": 0,
        "k": 10,
        "link": "logit",
        "box": None,
        "out": "utilities.csv",
    },
    "posterior": {
        "problem": None,
        "data": None,
        "candidate": "gp/sqrt",
        "n": 200,
        "q": 0.05,
        "grid": None,
        "seed": 0,
        "link": "logit",
        "box": None,
        "out": "posterior",
    },
}


# -- parsing ---------------------------------------------------------------


def _csv_list(text):
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _int_list(text, name):
    if isinstance(text, (list, tuple)):
        items = text
    elif isinstance(text, int):
        items = [text]
    else:
        items = _csv_list(text)
    try:
        values = [int(v) for v in items]
    except (TypeError, ValueError):
        raise ConfigError(f"--{name} needs comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise ConfigError(f"--{name} values must be positive integers")
    return values


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else _csv_list(value)


def parse_candidate(text, link="logit"):
    """``gp/sqrt``, ``gp-indep/log`` or ``classifier`` -> CandidateSpec."""
    model, _, transform = str(text).partition("/")
    if model not in MODEL_KINDS:
        raise ConfigError(f"unknown model {model!r}; choose from {sorted(MODEL_KINDS)}")
    try:
        return CandidateSpec(model, transform or "se", link)
    except (ContractViolation, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _grid(value):
    if value is None:
        return None
    nodes = tuple(_int_list(value, "grid"))
    return GridSpec(nodes)


def _q(value):
    try:
        q = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"--q must be a number, got {value!r}") from None
    if not 0 < q < 1:
        raise ConfigError("--q must lie in (0, 1)")
    return q


def _int(value, name, minimum=0):
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"--{name} must be an integer, got {value!r}") from None
    if v < minimum:
        raise ConfigError(f"--{name} must be >= {minimum}")
    return v


def _box(value, params):
    """``lo:hi,lo:hi`` per dimension, or the bounding box of the training params."""
    if value is None:
        lo, hi = params.min(axis=0), params.max(axis=0)
        pad = np.where(hi > lo, 0.0, 0.5)
        return PriorBox(lo - pad, hi + pad)
    parts = _as_list(value)
    try:
        bounds = [tuple(float(x) for x in str(p).split(":")) for p in parts]
        lo, hi = zip(*bounds)
        box = PriorBox(np.array(lo), np.array(hi))
    except (ValueError, ContractViolation) as exc:
        raise ConfigError(f"--box must look like lo:hi,lo:hi ({exc})") from None
    if box.dim != params.shape[1]:
        raise ConfigError(f"--box has {box.dim} dimensions but the data has {params.shape[1]}")
    return box


def _link(value):
    if value not in ("logit", "probit"):
        raise ConfigError("--link must be logit or probit")
    return value


def _problem(name):
    try:
        return get_problem(name)
    except (KeyError, ContractViolation):
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def resolve(command, args):
    """Merge defaults, config file and flags (flags win)."""
    cfg = _load_config(args.config)
    unknown = sorted(set(cfg) - set(DEFAULTS[command]))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    merged = dict(DEFAULTS[command])
    merged.update(cfg)
    for key in DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def build_parser():
    parser = argparse.ArgumentParser(prog="gpabc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gpabc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with default values for any flag")
        p.add_argument("--q", type=float, help="quantile level of the threshold (default 0.05)")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--link", help="classifier link: logit or probit")
        p.add_argument("--out", help="output path")

    b = sub.add_parser("bench", help="repeated experiments on a toy problem")
    common(b)
    b.add_argument("--problem", help=f"one of {', '.join(PROBLEMS)}")
    b.add_argument("--models", help="comma list of gp, gp-indep, classifier, rejection")
    b.add_argument("--transforms", help="comma list of se, log, sqrt")
    b.add_argument("--n", help="comma list of training sizes")
    b.add_argument("--reps", type=int, help="repetitions per n")
    b.add_argument("--grid", help="grid nodes per dimension, e.g. 512 or 128,128")
    b.add_argument("--baseline", help="reference: abc, abc-mc or true")
    b.add_argument("--select", help="comma list of selection criteria to also score")
    b.add_argument("--k", type=int, help="cross-validation folds")

    s = sub.add_parser("select", help="cross-validated candidate selection on a training CSV")
    common(s)
    s.add_argument("--data", help="CSV with header theta_1..theta_p,delta")
    s.add_argument("--candidates", help="comma list such as gp/se,gp-indep/sqrt,classifier")
    s.add_argument("--criterion", help="classifier or mlpd")
    s.add_argument("--k", type=int, help="cross-validation folds")
    s.add_argument("--box", help="prior box lo:hi,... (default: data extent)")

    p = sub.add_parser("posterior", help="grid posterior from one surrogate")
    common(p)
    p.add_argument("--problem", help="toy problem to simulate training data from")
    p.add_argument("--data", help="training CSV instead of a toy problem")
    p.add_argument("--candidate", help="e.g. gp/sqrt, gp-indep/log, classifier or rejection")
    p.add_argument("--n", type=int, help="training size when simulating")
    p.add_argument("--grid", help="grid nodes per dimension")
    p.add_argument("--box", help="prior box lo:hi,... for --data (default: data extent)")
    return parser


# -- commands --------------------------------------------------------------


def _prepare_out_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")


def _prepare_out_file(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    if not os.access(parent, os.W_OK) or (os.path.exists(path) and not os.access(path, os.W_OK)):
        raise PermissionError(f"cannot write {path}")


def _metadata(command, cfg):
    # the output location says where the file is, not what is in it
    config = {k: v for k, v in cfg.items() if k != "out"}
    return {"command": command, "config": config, "version": __version__}


def cmd_bench(cfg):
    if cfg["problem"] is None:
        raise ConfigError("bench needs --problem")
    problem = _problem(cfg["problem"])
    models = _as_list(cfg["models"])
    bad = [m for m in models if m not in MODELS]
    if bad or not models:
        raise ConfigError(f"unknown models {bad}; choose from {list(MODELS)}")
    trans = _as_list(cfg["transforms"])
    for t in trans:
        if t not in transforms.TRANSFORMS:
            raise ConfigError(f"unknown transform {t!r}")
    n_values = _int_list(cfg["n"], "n")
    reps = _int(cfg["reps"], "reps", 1)
    q = _q(cfg["q"])
    seed = _int(cfg["seed"], "seed")
    k = _int(cfg["k"], "k", 2)
    link = _link(cfg["link"])
    grid = _grid(cfg["grid"])
    if cfg["baseline"] not in ("abc", "abc-mc", "true"):
        raise ConfigError("--baseline must be abc, abc-mc or true")
    selection = _as_list(cfg["select"])
    specs, rejection = candidate_specs(models, trans)
    specs = [CandidateSpec(c.kind, c.transform, link) for c in specs]
    for criterion in selection:
        if criterion not in CRITERIA:
            raise ConfigError(f"unknown selection criterion {criterion!r}")
        if criterion == "mlpd" and not any(c.is_regression for c in specs):
            raise ConfigError("the mlpd criterion needs a regression model; the classifier has no predictive density")
        if min(n_values) < k:
            raise ConfigError(f"selection with {k} folds needs every n >= {k}")
    _prepare_out_dir(cfg["out"])

    def progress(rep, n):
        log.info("rep %d n %d", rep, n)

    results = run_experiment(
        problem, specs, n_values, reps, q, seed, grid_spec=grid, baseline=cfg["baseline"],
        include_rejection=rejection, selection=selection, k=k, progress=progress,
    )
    meta = _metadata("bench", cfg)
    write_results(os.path.join(cfg["out"], "results.csv"), results, meta)
    header, rows = median_table(results)
    write_csv(os.path.join(cfg["out"], "table.csv"), header, rows, meta)
    for row in rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_select(cfg):
    if cfg["data"] is None:
        raise ConfigError("select needs --data")
    criterion = cfg["criterion"]
    if criterion not in CRITERIA:
        raise ConfigError(f"--criterion must be one of {list(CRITERIA)}")
    link = _link(cfg["link"])
    if cfg["candidates"] is None:
        cands = [CandidateSpec(c.kind, c.transform, link) for c in default_candidates()]
        if criterion == "mlpd":
            cands = [c for c in cands if c.is_regression]
    else:
        cands = [parse_candidate(c, link) for c in _as_list(cfg["candidates"])]
        if not cands:
            raise ConfigError("--candidates is empty")
        if criterion == "mlpd" and any(not c.is_regression for c in cands):
            raise ConfigError("the classifier cannot be scored with the mlpd criterion")
    q = _q(cfg["q"])
    seed = _int(cfg["seed"], "seed")
    k = _int(cfg["k"], "k", 2)
    params, deltas = read_training_csv(cfg["data"])
    box = _box(cfg["box"], params)
    if deltas.size < k:
        raise ConfigError(f"{deltas.size} rows cannot be split into {k} folds")
    _prepare_out_file(cfg["out"])

    eps = threshold_from_quantile(deltas, q)
    full_fits = {}
    for cand in cands:
        try:
            full_fits[cand.name] = fit_candidate(cand, params, deltas, eps, box=box, seed=seed, q_level=q)
        except GPABCError as exc:
            log.info("full-data fit of %s failed: %s", cand.name, exc)
    report = evaluate_candidates(
        params, deltas, cands, criterion, eps, k=k, seed=seed, box=box, q_level=q, full_fits=full_fits
    )
    meta = _metadata("select", cfg)
    meta["eps"] = float(eps)
    for e in report.entries:
        mark = " (disqualified)" if e.disqualified else ""
        print(f"{e.candidate.name},{e.score!r},{e.result.failed_folds}{mark}")
    try:
        winner = select_candidate(report, criterion)
    except GPABCError:
        meta["winner"] = "none"
        report.to_csv(cfg["out"], meta)
        raise
    meta["winner"] = winner.name
    report.to_csv(cfg["out"], meta)
    print(f"winner: {winner.name}")
    return EXIT_OK


def cmd_posterior(cfg):
    if (cfg["problem"] is None) == (cfg["data"] is None):
        raise ConfigError("posterior needs exactly one of --problem or --data")
    link = _link(cfg["link"])
    name = str(cfg["candidate"])
    cand = None if name == "rejection" else parse_candidate(name, link)
    q = _q(cfg["q"])
    seed = _int(cfg["seed"], "seed")
    grid = _grid(cfg["grid"])
    if cfg["problem"] is not None:
        problem = _problem(cfg["problem"])
        n = _int(cfg["n"], "n", 2)
        box = problem.prior
        if grid is not None:
            grid.counts(box.dim)
        _prepare_out_dir(cfg["out"])
        observed = observed_data(problem, seed, 0)
        params, deltas = simulate_training(problem, observed, seed, 0, n)
    else:
        params, deltas = read_training_csv(cfg["data"])
        box = _box(cfg["box"], params)
        if grid is not None:
            grid.counts(box.dim)
        _prepare_out_dir(cfg["out"])
    eps = threshold_from_quantile(deltas, q)
    if cand is None:
        post = kde_posterior(params[deltas <= eps], box, grid)
    else:
        fit = fit_candidate(cand, params, deltas, eps, box=box, seed=seed, q_level=q)
        post = surrogate_posterior(fit, box, transforms.transform_threshold(cand.transform, eps), grid)
    meta = _metadata("posterior", cfg)
    meta["eps"] = float(eps)
    post.to_csv(os.path.join(cfg["out"], "posterior.csv"), meta)
    written = ["posterior.csv"]
    if post.dim > 1:
        for i in range(post.dim):
            fname = f"marginal_theta_{i + 1}.csv"
            post.marginal_to_csv(i, os.path.join(cfg["out"], fname), meta)
            written.append(fname)
    for fname in written:
        print(os.path.join(cfg["out"], fname))
    return EXIT_OK


COMMANDS = {"bench": cmd_bench, "select": cmd_select, "posterior": cmd_posterior}


def _fail(code, exc):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; keep its 0 for --help/--version
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (DataFormatError, OSError) as exc:
        return _fail(EXIT_IO, exc)
    except ContractViolation as exc:
        return _fail(EXIT_CONFIG, exc)
    except (GPABCError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc)


if __name__ == "__main__":
    sys.exit(main())
