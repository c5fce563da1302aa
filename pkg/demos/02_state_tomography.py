"""
Tomography of the delivered state
=================================

Each of the 36 pairs of cardinal bases is measured on freshly delivered
pairs.  The outcome table is then analyzed at three correction levels.
"""

# %%
import sys

import numpy as np

from qnetstack import Network, NoiseParams
from qnetstack import analysis as A
from qnetstack.apps import run_tomography

shots = int(sys.argv[1]) if len(sys.argv) > 1 else 40  # 125 gives the full 4500-pair run
rows = run_tomography(Network(seed=1), shots_per_setting=shots)
print(len(rows), "pairs measured")

# %%
# Readout fidelities of both nodes, as (F0, F1).
noise = NoiseParams()
readout = (noise.readout_client, noise.readout_server)

for level in A.CORRECTIONS:
    res = A.tomography(rows, readout, level, n_boot=200, seed=1)
    extra = ""
    if res.filter_report is not None:
        extra = f", {res.filter_report.combined} flagged rows removed"
    print(f"{level:>8}: F = {res.state.fidelity:.3f} +/- {res.state.fidelity_std:.3f}{extra}")

# %%
# The fully corrected estimate, with the three diagonal correlators.
res = A.tomography(rows, readout, "full", n_boot=200, seed=1)
for k in (("X", "X"), ("Y", "Y"), ("Z", "Z")):
    c = res.correlators[k]
    print(f"<{k[0]}{k[1]}> = {c.value:+.3f} +/- {c.std_err:.3f}")
np.set_printoptions(precision=3, suppress=True)
print("Re(rho) =\n", res.state.rho.real)
