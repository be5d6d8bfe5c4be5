"""
Out-of-sample prediction
========================

Two hold-out scenarios: new persons (between) and a new occasion for known
persons (within). Each method's predictive choice distribution is compared
with the one implied by the true parameters through the total variation
distance.
"""
from mxlvb.evaluate import EvalConfig, TruthFit, evaluate, validation_scenarios
from mxlvb.mcmc import McmcConfig, run_mcmc
from mxlvb.model import DgpConfig, Hyperparameters, simulate_dataset
from mxlvb.vb import run_vb

data, truth = simulate_dataset(DgpConfig(N=200, T=10, K=4, J=5, seed=4))
hyper = Hyperparameters.default(4)
ecfg = EvalConfig(n_outer=300, n_inner=100, seed=4)
scenarios = validation_scenarios(truth, data.J_max, ecfg)

fits = {
    "truth": TruthFit(truth),
    "VB": run_vb(data, hyper),
    "MCMC": run_mcmc(data, hyper, McmcConfig(n_iter=8000, n_burn=4000, seed=4,
                                             keep_mu_for=list(scenarios[1].persons))),
}
for name, fit in fits.items():
    rep = evaluate(data, truth, fit, ecfg, scenarios)
    print(f"{name:>5}: TVD_B {rep.mean_tvd_between:.4f}  TVD_W {rep.mean_tvd_within:.4f}")

# The truth row is the Monte-Carlo floor of the comparison itself.
