"""Batch command-line interface.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 IO error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .benchmark import SUMMARY_COLUMNS, BenchmarkConfig, run_benchmark
from .evaluate import TruthFit, evaluate
from .exceptions import NumericalError, ValidationError
from .mcmc import run_mcmc
from .model import simulate_dataset
from .vb import run_vb

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("mxlvb")


def _config(args, mode: str) -> io.RunConfig:
    if args.config is None:
        return io.RunConfig(mode=mode)
    return io.load_config(args.config, mode=mode)


def cmd_simulate(args) -> list[Path]:
    cfg = _config(args, "simulate")
    out = Path(args.out)
    data, truth = simulate_dataset(cfg.dgp)
    io.write_dataset(data, out / "data.csv")
    io.persist_truth(truth, out / "truth.npz", cfg.dgp)
    outputs = [out / "data.csv", out / "truth.npz"]
    io.write_manifest(out, cfg.to_dict(), {"dgp": cfg.dgp.seed}, outputs=outputs)
    log.info("simulated N=%d persons, %d occasions -> %s", data.N, data.M, out)
    return outputs


def _fit(args, mode: str) -> list[Path]:
    cfg = _config(args, mode)
    data = io.load_dataset(args.data)
    hyper = cfg.hyper_for(data.K)
    out = Path(args.out)
    if mode == "fit-vb":
        fit = run_vb(data, hyper, cfg.vb)
        seeds = {}
        log.info("VB: %d sweeps, converged=%s, %.2fs", fit.n_iter, fit.converged, fit.seconds)
    else:
        fit = run_mcmc(data, hyper, cfg.mcmc)
        seeds = {"mcmc": cfg.mcmc.seed}
        log.info("MCMC: %d draws x %d chains, %.2fs", fit.n_draws, fit.n_chains, fit.seconds)
    io.persist_fit(fit, out, seeds=seeds, extra={"hyper": hyper.to_dict(), "dataset": str(args.data)})
    io.write_manifest(out.parent, cfg.to_dict(), seeds, outputs=[out])
    return [out]


def cmd_fit_vb(args):
    return _fit(args, "fit-vb")


def cmd_fit_mcmc(args):
    return _fit(args, "fit-mcmc")


def cmd_evaluate(args) -> list[Path]:
    cfg = _config(args, "evaluate")
    data = io.load_dataset(args.data)
    truth, _ = io.load_truth(args.truth)
    truth.check(data)
    fit = TruthFit(truth) if args.fit == "truth" else io.load_fit(args.fit)
    report = evaluate(data, truth, fit, cfg.eval)
    out = Path(args.out)
    io.write_json(report.to_dict(), out.with_suffix(".json"))
    rows = [{"scenario": kind, "index": i, "tvd": float(v)}
            for kind, vals in (("between", report.tvd_between), ("within", report.tvd_within))
            for i, v in enumerate(vals)]
    io.write_table(rows, out.with_suffix(".csv"))
    io.write_manifest(out.parent, cfg.to_dict(), {"eval": cfg.eval.seed},
                      outputs=[out.with_suffix(".json"), out.with_suffix(".csv")])
    print(f"{report.method}: TVD_B = {report.mean_tvd_between:.4f}, TVD_W = {report.mean_tvd_within:.4f}")
    return [out.with_suffix(".json"), out.with_suffix(".csv")]


def cmd_benchmark(args) -> list[Path]:
    cfg = _config(args, "benchmark")
    bcfg = BenchmarkConfig(dgp=cfg.dgp, mcmc=cfg.mcmc, vb=cfg.vb, eval=cfg.eval, hyper=cfg.hyper,
                           replications=cfg.replications, master_seed=cfg.master_seed,
                           conditions=cfg.conditions, n_jobs=args.jobs)
    result = run_benchmark(bcfg)
    out = Path(args.out)
    io.write_table(result.rows, out / "replications.csv")
    io.write_table([{k: r[k] for k in SUMMARY_COLUMNS} for r in result.summary], out / "summary.csv")
    io.write_json({"rows": result.rows, "summary": result.summary, "failures": result.failures},
                  out / "benchmark.json")
    seeds = {"master": cfg.master_seed,
             "replications": [cfg.master_seed + r for r in range(cfg.replications)]}
    outputs = [out / "replications.csv", out / "summary.csv", out / "benchmark.json"]
    io.write_manifest(out, cfg.to_dict(), seeds, outputs=outputs)
    for r in result.summary:
        print(f"{r['condition']:>10} {r['method']:>5}  time {r['time_mean']:9.2f} ({r['time_se']:.2f})  "
              f"TVD_B {r['tvd_b_mean']:.4f} ({r['tvd_b_se']:.4f})  TVD_W {r['tvd_w_mean']:.4f} ({r['tvd_w_se']:.4f})")
    return outputs


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mxlvb", description="Mixed logit estimation by VB and MCMC.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a synthetic panel and its truth")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("fit-vb", cmd_fit_vb, "variational Bayes fit"),
                                 ("fit-mcmc", cmd_fit_mcmc, "Metropolis-within-Gibbs fit")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data", required=True)
        s.add_argument("--config")
        s.add_argument("--out", required=True, help="fit container (.npz)")
        s.set_defaults(func=func)

    s = sub.add_parser("evaluate", help="predictive TVD of a fit against the truth")
    s.add_argument("--fit", required=True, help="fit container, or 'truth' for a sanity check")
    s.add_argument("--truth", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="report path stem (.json and .csv are written)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("benchmark", help="replicated VB vs MCMC simulation study")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--jobs", type=int, default=1, help="replications run in parallel")
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
