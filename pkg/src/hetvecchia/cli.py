"""Command-line interface: ``hetvecchia {simulate,fit,predict,benchmark}``.

Settings resolve as built-in defaults, then ``--config`` (JSON or TOML), then
explicit flags.  Each command writes the resolved settings next to its output
as ``<output>.runconfig.json``; passing that file back with ``--config``
repeats the run.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .benchmark import PROTOCOLS, forrester_sweep, split_mc, timing_sweep, write_rows
from .data import build_replicated_design, read_campaign_csv, write_campaign_csv
from .estimator import HetGPRegressor
from .exceptions import ConfigError, HetGPError, InputIOError
from .mcmc import McmcConfig
from .predict import LAMBDA_MODES, PredictConfig, metrics
from .testbeds import TESTBEDS, load_motorcycle, simulate, write_truth

log = logging.getLogger("hetvecchia")

THREADS_ENV = "HETVECCHIA_THREADS"

DEFAULTS = {
    "simulate": {
        "testbed": "forrester-het", "n": 200, "a_spec": "10", "seed": 0,
        "exponent": 2.0, "noise_var": 1.0, "output": None,
    },
    "fit": {
        "input": None, "output": None, "report": None, "seed": 0,
        "iters": 1000, "burn_in": 500, "thin": 10, "m": 25, "constrain_theta": True,
        "init": "smoothed-residual", "homoskedastic": False, "g_lambda": 1e-6,
        "dedup_tol": 0.0, "scale": True,
    },
    "predict": {
        "checkpoint": None, "input": None, "output": None, "metrics": None, "seed": None,
        "m_predict": 200, "lambda_mode": "upper-quantile", "quantile_z": 1.6448536269514722,
        "interval_level": 0.90, "joint": False,
    },
    "benchmark": {
        "protocol": "forrester-sweep", "output": None, "input": None, "seed": 0, "reps": 1,
        "n": None, "a_spec": "10", "iters": 1000, "burn_in": 500, "thin": 10, "m": 25,
        "m_predict": 200, "constrain_theta": True, "n_test": 100, "timing_iters": 5, "timing_a": 50,
        "baseline": False,
    },
}


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {s!r}")


def _g_lambda(s: str):
    return "estimate" if s == "estimate" else float(s)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetvecchia", description="Bayesian heteroskedastic GP surrogates with Vecchia approximations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON or TOML file with settings (flags override it)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output")

    s = sub.add_parser("simulate", help="write a synthetic campaign CSV plus a truth sidecar")
    common(s)
    s.add_argument("--testbed", choices=TESTBEDS)
    s.add_argument("--n", type=int, help="number of unique sites")
    s.add_argument("--a-spec", help="replicates per site: an integer or unif:lo:hi")
    s.add_argument("--exponent", type=float, help="exponent of (6x - 2) in the Forrester mean")
    s.add_argument("--noise-var", type=float, help="variance for the constant-noise testbed")

    f = sub.add_parser("fit", help="run the sampler and write a checkpoint")
    common(f)
    f.add_argument("--input", help="campaign CSV (inputs then a y column)")
    f.add_argument("--report", help="fit report JSON (default <output>.report.json)")
    f.add_argument("--iters", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--m", type=int)
    f.add_argument("--constrain-theta", type=_bool)
    f.add_argument("--init", choices=("smoothed-residual", "constant-fraction"))
    f.add_argument("--homoskedastic", type=_bool)
    f.add_argument("--g-lambda", type=_g_lambda, help="latent nugget, or 'estimate'")
    f.add_argument("--dedup-tol", type=float)
    f.add_argument("--scale", type=_bool, help="min-max inputs and standardize outputs")

    r = sub.add_parser("predict", help="predict from a checkpoint")
    common(r)
    r.add_argument("--checkpoint")
    r.add_argument("--input", help="test CSV; with a y column, metrics are computed")
    r.add_argument("--metrics", help="metrics JSON (default <output>.metrics.json)")
    r.add_argument("--m-predict", type=int)
    r.add_argument("--lambda-mode", choices=LAMBDA_MODES)
    r.add_argument("--quantile-z", type=float)
    r.add_argument("--interval-level", type=float)
    r.add_argument("--joint", type=_bool, help="let test points condition on earlier test points")

    b = sub.add_parser("benchmark", help="run a benchmark protocol, writing long-format CSV")
    common(b)
    b.add_argument("--protocol", choices=PROTOCOLS)
    b.add_argument("--input", help="campaign CSV for split-mc (default: the bundled motorcycle data)")
    b.add_argument("--reps", type=int)
    b.add_argument("--n", type=int, nargs="+", help="grid of unique-site counts")
    b.add_argument("--a-spec")
    b.add_argument("--iters", type=int)
    b.add_argument("--burn-in", type=int)
    b.add_argument("--thin", type=int)
    b.add_argument("--m", type=int)
    b.add_argument("--m-predict", type=int)
    b.add_argument("--constrain-theta", type=_bool)
    b.add_argument("--n-test", type=int)
    b.add_argument("--timing-iters", type=int, help="ESS iterations timed per path")
    b.add_argument("--timing-a", type=int, help="replicates per site in timing-sweep (N = a n)")
    b.add_argument("--baseline", type=_bool, help="also fit a homoskedastic baseline")
    return p


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputIOError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            doc = tomllib.loads(raw.decode("utf-8"))
        else:
            doc = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a table of settings")
    return {k.replace("-", "_"): v for k, v in doc.items() if k != "command"}


def resolve(args: argparse.Namespace) -> dict:
    cmd = args.command
    settings = dict(DEFAULTS[cmd])
    if args.config:
        cfg = load_config(args.config)
        unknown = sorted(set(cfg) - set(settings))
        if unknown:
            raise ConfigError(f"unknown {cmd} settings in {args.config}: {', '.join(unknown)}")
        settings.update(cfg)
    for k in settings:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def _require(settings: dict, *keys):
    missing = [k for k in keys if settings.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_json(path, doc) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise InputIOError(f"cannot write {path}: {exc}") from exc


def _write_runconfig(cmd: str, settings: dict) -> None:
    _write_json(f"{settings['output']}.runconfig.json", {"command": cmd, **settings})


def cmd_simulate(s: dict) -> int:
    _require(s, "output")
    camp = simulate(s["testbed"], int(s["n"]), s["a_spec"], int(s["seed"]), float(s["noise_var"]), float(s["exponent"]))
    write_campaign_csv(camp.raw, s["output"])
    write_truth(camp, f"{s['output']}.truth.json")
    _write_runconfig("simulate", s)
    log.info("wrote %d runs at %d sites to %s", camp.raw.N, len(camp.sites), s["output"])
    return 0


def cmd_fit(s: dict) -> int:
    _require(s, "input", "output")
    raw = read_campaign_csv(s["input"])
    if raw.outputs is None:
        raise ConfigError(f"{s['input']} has no output column (name the last column y)")
    design = build_replicated_design(raw, float(s["dedup_tol"]))
    est = HetGPRegressor(
        total_iters=int(s["iters"]), burn_in=int(s["burn_in"]), thin=int(s["thin"]), m=int(s["m"]),
        constrain_theta=bool(s["constrain_theta"]), init=s["init"], homoskedastic=bool(s["homoskedastic"]),
        g_lambda=s["g_lambda"], scale_inputs=bool(s["scale"]), scale_outputs=bool(s["scale"]),
        dedup_tol=float(s["dedup_tol"]), random_state=int(s["seed"]),
    )
    t0 = time.perf_counter()
    est.fit_design(design)
    elapsed = time.perf_counter() - t0
    est.save(s["output"])
    chain = est.chain_
    shrinks = chain.ess_iteration_counts
    report = {
        "n_sites": design.n,
        "n_runs": design.total_n,
        "d": design.d,
        "retained_samples": chain.T,
        "runtime_seconds": elapsed,
        "acceptance_rates": chain.acceptance_stats,
        "ess_shrinks": {
            "median": float(np.median(shrinks)) if shrinks.size else None,
            "mean": float(np.mean(shrinks)) if shrinks.size else None,
            "max": int(shrinks.max()) if shrinks.size else None,
        },
        "final_tau2_N": chain.final.tau2_N,
        "final_tau2_lambda": chain.final.tau2_lambda,
        "theta_rate_y": chain.prior.theta_rate_y,
        "theta_rate_lambda": chain.prior.theta_rate_lambda,
    }
    _write_json(s["report"] or f"{s['output']}.report.json", report)
    _write_runconfig("fit", s)
    log.info("fit %d sites in %.1fs, kept %d draws", design.n, elapsed, chain.T)
    return 0


def _prediction_rows(X, res, level):
    pi_lo, pi_hi, ci_lo, ci_hi = res.intervals(level)
    cols = [X[:, k] for k in range(X.shape[1])]
    cols += [res.mean, res.sd_predictive, res.sd_confidence, pi_lo, pi_hi, ci_lo, ci_hi]
    return np.column_stack(cols)


def cmd_predict(s: dict) -> int:
    _require(s, "checkpoint", "input", "output")
    est = HetGPRegressor.load(s["checkpoint"])
    raw = read_campaign_csv(s["input"])
    if raw.d != est.n_features_in_:
        raise ConfigError(f"test file has {raw.d} input columns but the checkpoint was fitted with {est.n_features_in_}")
    overrides = dict(
        m_predict=int(s["m_predict"]), lambda_mode=s["lambda_mode"], quantile_z=float(s["quantile_z"]),
        interval_level=float(s["interval_level"]), pointwise=not bool(s["joint"]),
    )
    if s["seed"] is not None:
        overrides["seed"] = int(s["seed"])
    level = float(s["interval_level"])
    t0 = time.perf_counter()
    test = build_replicated_design(raw) if raw.outputs is not None else None
    X = test.unique_inputs if test is not None else raw.inputs
    res = est.predict_dist(X, **overrides)
    elapsed = time.perf_counter() - t0
    header = [f"x_{k + 1}" for k in range(X.shape[1])]
    header += ["mean", "sd_predictive", "sd_confidence", "pi_lo", "pi_hi", "ci_lo", "ci_hi"]
    rows = _prediction_rows(X, res, level)
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows]
    try:
        Path(s["output"]).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise InputIOError(f"cannot write {s['output']}: {exc}") from exc
    if test is not None:
        rep = metrics(res, test, level, elapsed)
        doc = {k: rep.to_dict()[k] for k in ("rmse", "score", "coverage", "pi_width", "ci_width", "runtime_seconds")}
        doc.update(rmse_site_mean=rep.rmse_site_mean, n_sites=rep.n_sites, n_replicates=rep.n_replicates)
        _write_json(s["metrics"] or f"{s['output']}.metrics.json", doc)
    _write_runconfig("predict", s)
    return 0


def cmd_benchmark(s: dict) -> int:
    _require(s, "output")
    proto = s["protocol"]
    mcmc = McmcConfig(
        total_iters=int(s["iters"]), burn_in=int(s["burn_in"]), thin=int(s["thin"]), m=int(s["m"]),
        constrain_theta=bool(s["constrain_theta"]),
    )
    ns = s["n"]
    if ns is not None and not isinstance(ns, (list, tuple)):
        ns = [ns]
    if proto == "forrester-sweep":
        rows = forrester_sweep(
            tuple(ns or (250, 500, 1000, 2000)), int(s["reps"]), int(s["seed"]), s["a_spec"], mcmc,
            n_test=int(s["n_test"]), predict=PredictConfig(m_predict=int(s["m_predict"]), seed=int(s["seed"])),
            baseline=bool(s["baseline"]),
        )
    elif proto == "timing-sweep":
        rows = timing_sweep(tuple(ns or (20, 40, 80)), int(s["timing_a"]), int(s["timing_iters"]), int(s["seed"]), int(s["m"]))
    else:
        if s["input"]:
            raw = read_campaign_csv(s["input"])
        else:
            raw = load_motorcycle()
        rows = split_mc(
            raw, int(s["reps"]), int(s["seed"]), mcmc=mcmc,
            predict=PredictConfig(m_predict=int(s["m_predict"])), homoskedastic_baseline=bool(s["baseline"]),
        )
    write_rows(rows, s["output"])
    _write_runconfig("benchmark", s)
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "benchmark": cmd_benchmark}


def _thread_limit():
    """BLAS thread cap from the environment (no cap when unset)."""
    val = os.environ.get(THREADS_ENV)
    if not val:
        return contextlib.nullcontext()
    try:
        n = int(val)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {val!r}") from None
    return threadpool_limits(limits=max(1, n))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](resolve(args))
    except HetGPError as exc:
        print(f"hetvecchia {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
