"""
Latency and the fidelity trade-off
==================================

Lower requested fidelities let the physical layer use a larger bright-state
population, which raises the success probability per attempt.  This script
times requests at one level and then sweeps the requested fidelity.
"""

# %%
import sys

from qnetstack import Network, NoiseParams
from qnetstack import analysis as A
from qnetstack.apps import run_fidelity_sweep, run_latency

n = int(sys.argv[1]) if len(sys.argv) > 1 else 200
rows = run_latency(Network(seed=1), n_requests=n)
(entry,) = A.latency_table(rows)
print(f"{entry['n']} requests, {entry['excluded']} slow outliers excluded")
for bucket in ("ent_generation", "cr_check", "link_layer", "interface", "total"):
    print(f"  {bucket:>15}: {entry[bucket]:7.2f} ms")

# %%
# Requested against measured fidelity, from the XX, YY and ZZ correlators.
# 720 pairs per level keeps this quick; the error bars are correspondingly wide.
noise = NoiseParams()
rows = run_fidelity_sweep(Network(seed=1), shots_per_setting=60)
points, _ = A.fidelity_sweep(rows, (noise.readout_client, noise.readout_server), "full")
for p in points:
    mark = "ok" if p.meets_request else "below"
    print(f"requested {p.requested:.2f}: measured {p.measured:.3f} +/- {p.std_err:.3f} ({mark})")
