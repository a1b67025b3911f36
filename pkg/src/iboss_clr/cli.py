"""Command-line interface: ``iboss-clr {select,fit,info,simulate,bootstrap}``.

Exit codes: 0 success, 1 I/O error, 2 validation error, 3 numerical failure.
Every JSON output carries a ``metadata`` block with the tool version, the
resolved arguments, the seed and the SHA-256 of the input file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .core import ClrParams, CsvFormatError, RngSpec, SelectionResult, read_csv, validate_params
from .em import EmControls, FitError, em_fit, select_g
from .experiments import (
    SimConfig,
    default_paper_config,
    desk_config,
    gen_standin_data,
    run_bootstrap,
    run_simulation,
    write_rows_csv,
)
from .information import (
    LAYOUT,
    QuadratureError,
    complete_info_point,
    d_criterion,
    missing_info_diag,
    surrogate_q,
)
from .selection import select

THREADS_ENV = "IBOSS_CLR_THREADS"

log = logging.getLogger("iboss_clr")


def _sha256(path) -> str | None:
    if path is None:
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _emit(args, payload: dict) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if args.output:
        _atomic_write(args.output, text)
    else:
        sys.stdout.write(text)


def _metadata(args, input_path=None, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    meta = {"tool": "iboss-clr", "version": __version__, "config": cfg,
            "seed": 0 if args.seed is None else args.seed,
            "input_sha256": _sha256(input_path)}
    meta.update(extra)
    return meta


def _ints(text: str) -> list[int]:
    return [int(float(v)) for v in text.split(",") if v.strip()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _spec(args) -> RngSpec:
    return RngSpec(0 if args.seed is None else args.seed, args.stream)


def _threads(args) -> int:
    if args.serial:
        return 1
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


def _controls(args) -> EmControls:
    return EmControls(tol=args.tol, max_iter=args.max_iter, min_variance_ratio=args.min_variance_ratio)


def _need_input(args) -> Path:
    if not args.input:
        raise ValueError("--input is required")
    return Path(args.input)


def _load_indices(path):
    if path is None:
        return None
    with open(path) as fh:
        return SelectionResult.from_dict(json.load(fh))


# --- subcommands ---------------------------------------------------------------

def cmd_select(args) -> int:
    path = _need_input(args)
    data = read_csv(path, args.response_col)
    if args.method != "full" and args.k is None:
        raise ValueError("--k is required for iboss and random selection")
    res = select(data, args.method, args.k, rng=_spec(args))
    out = res.to_dict()
    out["metadata"] = _metadata(args, path, n=data.n, p=data.p)
    _emit(args, out)
    return 0


def cmd_fit(args) -> int:
    path = _need_input(args)
    data = read_csv(path, args.response_col)
    subset = _load_indices(args.indices)
    spec = _spec(args)
    if args.g_list:
        fits, chosen = select_g(data, subset, _ints(args.g_list), args.restarts, spec, _controls(args),
                                criterion=args.criterion)
        out = fits[chosen].to_dict()
        out["chosen_g"] = chosen
        out["candidates"] = {str(g): {"aic": f.aic, "bic": f.bic, "loglik": f.loglik, "converged": f.converged}
                             for g, f in fits.items()}
    else:
        out = em_fit(data, subset, args.g, args.restarts, spec, _controls(args)).to_dict()
    out["metadata"] = _metadata(args, path, indices_sha256=_sha256(args.indices),
                                k=data.n if subset is None else subset.k)
    _emit(args, out)
    return 0


def cmd_info(args) -> int:
    with open(args.params) as fh:
        params = validate_params(ClrParams.from_dict(json.load(fh)))
    if args.z is not None:
        xs = np.array([[1.0, *_floats(args.z)]])
        source = None
    else:
        source = _need_input(args)
        data = read_csv(source, args.response_col)
        sel = _load_indices(args.indices)
        xs = data.design(None if sel is None else sel.indices)
    if xs.shape[1] != params.p + 1:
        raise ValueError(f"dimension mismatch: covariates have p={xs.shape[1] - 1}, params have p={params.p}")
    complete = np.zeros((params.dim, params.dim))
    missing = np.zeros(params.dim)
    surrogate = np.zeros(params.dim)
    for x in xs:
        complete += complete_info_point(x, params)
        surrogate += surrogate_q(x, params)
        if not args.skip_missing:
            missing += missing_info_diag(x, params, tol=args.quad_tol)
    out = {
        "d": params.dim,
        "layout": LAYOUT,
        "rows": int(xs.shape[0]),
        "complete": complete.tolist(),
        "missing_diag": None if args.skip_missing else missing.tolist(),
        "surrogate_diag": surrogate.tolist(),
        "logdet_complete": d_criterion(complete),
        "metadata": _metadata(args, source, params_sha256=_sha256(args.params)),
    }
    _emit(args, out)
    return 0


def _sim_config(args) -> SimConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = SimConfig.from_dict(json.load(fh))
    elif args.paper_scale:
        cfg = default_paper_config(args.family)
    else:
        cfg = desk_config(args.family)
    over = {}
    if args.k is not None:
        over["k"] = args.k
    if args.replicates is not None:
        over["replicates"] = args.replicates
    if args.methods:
        over["methods"] = tuple(args.methods.split(","))
    if args.restarts is not None:
        over["restarts"] = args.restarts
    if args.seed is not None:
        over["seed"] = args.seed
    over.update(stream=args.stream, tol=args.tol, max_iter=args.max_iter)
    return cfg.with_(**over)


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    n_values = _ints(args.n_values) if args.n_values else [cfg.n_full]
    configs = [cfg.with_(n_full=n) for n in n_values]
    meta = _metadata(args, args.config, resolved=[c.to_dict() for c in configs])
    meta["seed"] = cfg.seed
    if args.dry_run:
        _emit(args, {"dry_run": True, "metadata": meta})
        return 0
    if "full" in cfg.methods and max(n_values) * cfg.truth.g >= 10**6:
        log.warning("full-data EM at N=%d, G=%d is slow", max(n_values), cfg.truth.g)
    reports, rows = [], []
    for c in configs:
        rep = run_simulation(c, threads=_threads(args))
        reports.append({"N": c.n_full, "methods": rep.methods, "config_hash": rep.metadata["config_hash"],
                        "failed": rep.metadata["failed"]})
        rows.extend(rep.rows)
    if args.csv:
        write_rows_csv(args.csv, rows)
    _emit(args, {"reports": reports, "metadata": meta})
    return 0


def cmd_bootstrap(args) -> int:
    if args.standin:
        data = gen_standin_data(args.standin, _spec(args).generator(0))
        source = None
    else:
        source = _need_input(args)
        data = read_csv(source, args.response_col)
    n_values = _ints(args.n_values) if args.n_values else [data.n]
    reps = run_bootstrap(data, n_values, k=args.k, b_samples=args.b_samples, restarts=args.restarts,
                         rng=_spec(args), g=args.g, methods=tuple(args.methods.split(",")),
                         controls=_controls(args))
    if args.csv:
        write_rows_csv(args.csv, [r for rep in reps for r in rep.rows])
    out = {"reports": [{"n": rep.metadata["n"], "methods": rep.methods, "failed": rep.metadata["failed"]}
                       for rep in reps],
           "reference": reps[0].metadata["reference"] if reps else None,
           "metadata": _metadata(args, source, n_full=data.n)}
    _emit(args, out)
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="CSV with a header row")
    common.add_argument("--output", help="output JSON path (default: stdout)")
    common.add_argument("--response-col", default="y", help="name of the response column (default: y)")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    common.add_argument("--stream", type=int, default=0, help="RNG stream id")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default: ${THREADS_ENV} or 1)")
    common.add_argument("--serial", action="store_true", help="force single-process execution")
    common.add_argument("--tol", type=float, default=1e-8, help="EM relative loglik tolerance")
    common.add_argument("--max-iter", type=int, default=500, help="EM iteration cap")
    common.add_argument("--min-variance-ratio", type=float, default=1e-2,
                        help="reject EM solutions with min/max sigma2 below this (0 disables)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="iboss-clr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", parents=[common], help="choose subdata rows")
    p.add_argument("--method", choices=("iboss", "random", "full"), default="iboss")
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fit", parents=[common], help="fit a CLR model by EM")
    p.add_argument("--indices", help="selection JSON written by `select`")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--g", type=int, help="number of clusters")
    g.add_argument("--g-list", help="comma-separated candidates; --criterion picks one")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--criterion", choices=("aic", "bic"), default="aic", help="ranking for --g-list")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("info", parents=[common], help="information matrices for a fitted model")
    p.add_argument("--params", required=True, help="fit JSON (beta, sigma2, pi)")
    p.add_argument("--z", help="comma-separated covariates of a single point")
    p.add_argument("--indices", help="selection JSON; sums over those rows of --input")
    p.add_argument("--quad-tol", type=float, default=1e-10)
    p.add_argument("--skip-missing", action="store_true", help="skip the quadrature for missing information")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("simulate", parents=[common], help="simulation study over N")
    p.add_argument("--config", help="SimConfig JSON")
    p.add_argument("--paper-scale", action="store_true", help="p=10, G=5, k=10000, 100 replicates")
    p.add_argument("--family", choices=("normal", "lognormal"), default="normal")
    p.add_argument("--n-values", help="comma-separated full-data sizes")
    p.add_argument("--k", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", help="comma-separated subset of iboss,random,full")
    p.add_argument("--restarts", type=int)
    p.add_argument("--csv", help="long-format per-replicate CSV")
    p.add_argument("--dry-run", action="store_true", help="print the resolved configuration and exit")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bootstrap", parents=[common], help="bootstrap comparison on a dataset")
    p.add_argument("--standin", type=int, metavar="N", help="use N rows of synthetic two-cluster data")
    p.add_argument("--n-values", help="comma-separated bootstrap sample sizes")
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--b-samples", type=int, default=500)
    p.add_argument("--g", type=int, default=2)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--methods", default="iboss,random")
    p.add_argument("--csv", help="long-format per-sample CSV")
    p.set_defaults(func=cmd_bootstrap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyError as err:
        print(f"error: {err.args[0] if err.args else err}", file=sys.stderr)
        return 1
    except (OSError, CsvFormatError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (FitError, QuadratureError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (ValueError, IndexError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
