"""
Simulating a choice panel
=========================

Each person has a taste vector mu_n drawn around the population mean zeta,
and on every occasion their tastes wobble again around mu_n. Choices then
follow a multinomial logit on uniform attributes.
"""
import tempfile
from pathlib import Path

import numpy as np

from mxlvb import io
from mxlvb.model import DgpConfig, error_rate, simulate_dataset

cfg = DgpConfig(N=300, T=10, K=4, J=5, seed=1)
data, truth = simulate_dataset(cfg)
print(f"{data.N} persons, {data.M} occasions, {data.J_max} alternatives, {data.K} attributes")

# How much of the taste variation sits between persons rather than within?
between = np.cov(truth.mu.T)
within = np.cov((truth.beta - truth.mu[data.person]).T)
print("diag of sample Sigma_B:", np.round(np.diag(between), 2), "(design 1.5)")
print("diag of sample Sigma_W:", np.round(np.diag(within), 2), "(design 0.5)")

# Share of occasions where the chosen alternative is not the one with the
# highest deterministic utility.
print(f"error rate: {error_rate(data, truth.beta):.3f}")

# Round trip through the long-format CSV.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "panel.csv"
    io.write_dataset(data, path)
    print(path.read_text().splitlines()[:3])
    assert io.load_dataset(path).same_as(data)
