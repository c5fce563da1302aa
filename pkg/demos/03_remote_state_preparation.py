"""
Remote state preparation
========================

The client measures its half of each pair right away, which steers the
server's qubit into one of six cardinal states.  The server then measures in
all three bases to reconstruct each prepared state.
"""

# %%
import sys

from qnetstack import Network, NoiseParams
from qnetstack import analysis as A
from qnetstack.apps import run_rsp

shots = int(sys.argv[1]) if len(sys.argv) > 1 else 40
rows = run_rsp(Network(seed=1), shots_per_setting=shots)

# %%
# Only the server readout is unfolded: a client readout error mislabels the
# prepared state, which is part of what is being characterized.
noise = NoiseParams()
states, avg, report = A.rsp_bloch(rows, (noise.readout_client, noise.readout_server),
                                  "full", n_boot=200, seed=1)
for b in states:
    x, y, z = b.bloch
    print(f"{b.state}: r = ({x:+.2f}, {y:+.2f}, {z:+.2f})  F = {b.fidelity:.3f} +/- {b.fidelity_std:.3f}")
print(f"average preparation fidelity {avg:.3f}")
