"""
How good is the second-order expected log-sum-exp?
==================================================

The VB updates need E[log sum_j exp(x_j' beta)] under a Gaussian q(beta).
The delta method replaces it by the value at the mean plus half the trace
of the curvature times the covariance. The error grows with the spread of q.
"""
import numpy as np

from mxlvb import stats
from mxlvb.vb import expected_lse

rng = np.random.default_rng(0)
X = rng.uniform(size=(5, 4))
mu = np.array([-1.4, 0.8, 1.0, 1.5])

print(" scale   delta      monte carlo   abs error")
for scale in (0.0, 0.01, 0.1, 0.5, 1.0, 2.0):
    Sigma = scale * np.eye(4)
    approx, lin = expected_lse(X, mu, Sigma)
    draws = stats.sample_mvn(mu, Sigma, rng, size=400_000) if scale else mu[None]
    mc = stats.log_sum_exp(draws @ X.T, axis=1).mean()
    print(f"{scale:6.2f}  {approx:9.5f}  {mc:12.5f}  {abs(approx - mc):10.2e}")

# The curvature matrix is the covariance of the attributes under the logit
# probabilities at the mean.
print("choice probabilities at the mean:", np.round(lin.p0, 3))
