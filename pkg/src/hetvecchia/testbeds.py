"""Synthetic campaigns with known mean and noise functions."""
from __future__ import annotations

import json
from importlib import resources
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .data import RawCampaign, read_campaign_csv
from .exceptions import ConfigError, InputIOError

__all__ = [
    "TESTBEDS",
    "Campaign",
    "forrester",
    "forrester_noise",
    "parse_a_spec",
    "draw_multiplicities",
    "simulate",
    "write_truth",
    "load_motorcycle",
]

TESTBEDS = ("forrester-het", "constant-noise")


def forrester(x, exponent: float = 2.0):
    x = np.asarray(x, dtype=float)
    return (6 * x - 2) ** exponent * np.sin(12 * x - 4)


def forrester_noise(x):
    """Noise variance ``1.1 + sin(2 pi x)``."""
    return 1.1 + np.sin(2 * np.pi * np.asarray(x, dtype=float))


def parse_a_spec(spec) -> tuple[int, int]:
    """``10`` or ``"10"`` (constant) or ``"unif:1:10"`` (uniform integers, inclusive)."""
    if isinstance(spec, (int, np.integer)):
        lo = hi = int(spec)
    else:
        s = str(spec).strip().lower()
        try:
            if s.startswith("unif"):
                body = s[s.index(":") + 1:] if ":" in s else s[s.index("(") + 1:].rstrip(")")
                lo, hi = (int(v) for v in body.replace(",", ":").split(":"))
            else:
                lo = hi = int(s)
        except ValueError:
            raise ConfigError(f"cannot parse replicate spec {spec!r}; use an integer or 'unif:lo:hi'") from None
    if lo < 1 or hi < lo:
        raise ConfigError(f"replicate spec {spec!r} needs 1 <= lo <= hi")
    return lo, hi


def draw_multiplicities(n: int, spec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = parse_a_spec(spec)
    if lo == hi:
        return np.full(n, lo, dtype=np.int64)
    return rng.integers(lo, hi + 1, size=n)


@dataclass(frozen=True)
class Campaign:
    """A simulated campaign with its ground truth at the unique sites."""

    raw: RawCampaign
    sites: np.ndarray
    multiplicities: np.ndarray
    true_mean: np.ndarray
    true_var: np.ndarray
    meta: dict


def simulate(
    testbed: str,
    n: int,
    a_spec=10,
    seed: int = 0,
    noise_var: float = 1.0,
    exponent: float = 2.0,
) -> Campaign:
    """Draw ``n`` stratified sites and replicate outputs at each.

    ``forrester-het`` uses the Forrester mean with variance ``1.1 + sin(2 pi x)``,
    and ``constant-noise`` the same mean with variance ``noise_var``.
    """
    if testbed not in TESTBEDS:
        raise ConfigError(f"unknown testbed {testbed!r}; choose from {', '.join(TESTBEDS)}")
    if n < 2:
        raise ConfigError("n must be at least 2")
    if not noise_var > 0:
        raise ConfigError("noise_var must be positive")
    rng = np.random.default_rng(seed)
    u = qmc.LatinHypercube(d=1, seed=rng).random(n)[:, 0]
    x = u
    mean = forrester(x, exponent)
    var = forrester_noise(x) if testbed == "forrester-het" else np.full(n, float(noise_var))
    a = draw_multiplicities(n, a_spec, rng)
    rows = np.repeat(np.arange(n), a)
    y = mean[rows] + np.sqrt(var[rows]) * rng.standard_normal(rows.size)
    raw = RawCampaign(x[rows][:, None], y)
    meta = {
        "testbed": testbed,
        "n": int(n),
        "a_spec": str(a_spec),
        "seed": int(seed),
        "exponent": float(exponent),
        "noise_var": float(noise_var) if testbed == "constant-noise" else None,
    }
    return Campaign(raw, x[:, None], a, mean, var, meta)


def write_truth(campaign: Campaign, path) -> None:
    """Sidecar JSON with generator parameters and per-site truth."""
    doc = dict(campaign.meta)
    doc["sites"] = campaign.sites.tolist()
    doc["multiplicities"] = campaign.multiplicities.tolist()
    doc["true_mean"] = campaign.true_mean.tolist()
    doc["true_variance"] = campaign.true_var.tolist()
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise InputIOError(f"cannot write {path}: {exc}") from exc


def load_motorcycle() -> RawCampaign:
    """Head acceleration (g) against time after impact (ms) from a simulated
    motorcycle crash; 133 runs with replicated time stamps (MASS ``mcycle``)."""
    with resources.as_file(resources.files("hetvecchia") / "datasets" / "motorcycle.csv") as path:
        return read_campaign_csv(path)
