"""
A small replicated study
========================

Same shape as the full comparison (several replications per condition,
mean and standard error of time and both TVDs per method) at a size
that runs in a few minutes.
"""
from mxlvb.benchmark import BenchmarkConfig, run_benchmark
from mxlvb.evaluate import EvalConfig
from mxlvb.mcmc import McmcConfig
from mxlvb.model import DgpConfig

cfg = BenchmarkConfig(
    dgp=DgpConfig(N=100, K=4, J=5),
    mcmc=McmcConfig(n_iter=4000, n_burn=2000, thin=10),
    eval=EvalConfig(n_outer=200, n_inner=100),
    replications=3,
    master_seed=20,
    conditions=[{"T": 5}, {"T": 10}],
)
result = run_benchmark(cfg)

print(f"{'cond':>6} {'method':>6} {'time':>16} {'TVD_B':>16} {'TVD_W':>16}")
for r in result.summary:
    print(f"{r['condition']:>6} {r['method']:>6} "
          f"{r['time_mean']:8.2f} ({r['time_se']:5.2f}) "
          f"{r['tvd_b_mean']:8.4f} ({r['tvd_b_se']:.4f}) "
          f"{r['tvd_w_mean']:8.4f} ({r['tvd_w_se']:.4f})")
