"""Replicated simulation study comparing the VB and MCMC engines.

Each replication ``r`` uses seed ``master_seed + r`` for the data, both
engines and the evaluation, so any single replication can be rerun alone.
Timing covers fitting only.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluate import EvalConfig, evaluate, validation_scenarios
from .exceptions import MxlError
from .mcmc import McmcConfig, run_mcmc
from .model import DgpConfig, Hyperparameters, simulate_dataset
from .vb import VbConfig, run_vb

log = logging.getLogger(__name__)

METHODS = ("MCMC", "VB")
SUMMARY_COLUMNS = ("condition", "method", "n_ok",
                   "time_mean", "time_se", "tvd_b_mean", "tvd_b_se", "tvd_w_mean", "tvd_w_se")


@dataclass
class BenchmarkConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    vb: VbConfig = field(default_factory=VbConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    hyper: Hyperparameters | None = None
    replications: int = 10
    master_seed: int = 0
    # each entry overrides DgpConfig fields, e.g. [{"T": 20}, {"T": 40}]
    conditions: list = field(default_factory=list)
    n_jobs: int = 1


def condition_label(overrides: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in sorted(overrides.items())) or "base"


def run_replication(cfg: BenchmarkConfig, overrides: dict, r: int) -> list[dict]:
    """Simulate, fit both engines and evaluate them for replication ``r``."""
    seed = cfg.master_seed + r
    base = cfg.dgp.to_dict()
    if "K" in overrides:
        # truths are re-derived for the new dimension
        base.update(zeta_true=None, Sigma_B_true=None, Sigma_W_true=None)
    dgp = DgpConfig(**{**base, **overrides, "seed": seed})
    data, truth = simulate_dataset(dgp)
    hyper = cfg.hyper if cfg.hyper is not None and cfg.hyper.K == data.K else Hyperparameters.default(data.K)
    ecfg = replace(cfg.eval, seed=seed)
    scenarios = validation_scenarios(truth, data.J_max, ecfg)
    within_persons = [int(p) for p in scenarios[1].persons]

    fits = {
        "VB": run_vb(data, hyper, cfg.vb),
        "MCMC": run_mcmc(data, hyper, replace(cfg.mcmc, seed=seed, keep_mu_for=within_persons)),
    }
    rows = []
    for method in METHODS:
        fit = fits[method]
        rep = evaluate(data, truth, fit, ecfg, scenarios)
        row = {
            "condition": condition_label(overrides), "replication": r, "seed": seed, "method": method,
            "time": fit.seconds, "tvd_b": rep.mean_tvd_between, "tvd_w": rep.mean_tvd_within,
        }
        if method == "VB":
            row.update(vb_iterations=fit.n_iter, vb_converged=bool(fit.converged))
        else:
            row.update(max_rhat=float(np.max(fit.rhat())))
        rows.append(row)
    return rows


def _safe_replication(args):
    cfg, overrides, r = args
    try:
        return run_replication(cfg, overrides, r), None
    except (MxlError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return [], f"{condition_label(overrides)} replication {r}: {type(exc).__name__}: {exc}"


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and standard error of time, TVD_B and TVD_W per condition and method."""
    out = []
    for cond in dict.fromkeys(r["condition"] for r in rows):
        for method in METHODS:
            sel = [r for r in rows if r["condition"] == cond and r["method"] == method]
            if not sel:
                continue
            row = {"condition": cond, "method": method, "n_ok": len(sel)}
            for key in ("time", "tvd_b", "tvd_w"):
                v = np.array([r[key] for r in sel], dtype=float)
                se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
                row[f"{key}_mean"] = float(v.mean())
                row[f"{key}_se"] = se
            out.append(row)
    return out


@dataclass
class BenchmarkResult:
    rows: list
    summary: list
    failures: list


def run_benchmark(cfg: BenchmarkConfig) -> BenchmarkResult:
    """Run every condition x replication; failed replications are excluded with a warning."""
    conditions = cfg.conditions or [{}]
    tasks = [(cfg, dict(c), r) for c in conditions for r in range(cfg.replications)]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(_safe_replication, tasks))
    else:
        results = []
        for task in tasks:
            log.info("replication %s %d", condition_label(task[1]), task[2])
            results.append(_safe_replication(task))
    rows, failures = [], []
    for rep_rows, err in results:
        rows.extend(rep_rows)
        if err is not None:
            warnings.warn(f"excluded failed {err}", RuntimeWarning, stacklevel=2)
            failures.append(err)
    return BenchmarkResult(rows=rows, summary=summarize(rows), failures=failures)
