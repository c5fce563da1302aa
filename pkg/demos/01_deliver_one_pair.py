"""
Delivering one entangled pair
=============================

The client asks the link layer for a single kept pair with the server.  We
watch the request move through the stack and look at the delivered state.
"""

# %%
# A network with the calibrated noise model.  Everything random is drawn from
# named streams derived from the seed, so this script prints the same numbers
# on every run.
import numpy as np

from qnetstack import Network
from qnetstack.link import EntRequest
from qnetstack.qstate import BellState, Node, fidelity_with_pure

net = Network(seed=7, trace=True)
handle = net.client.create(EntRequest(Node.SERVER, min_fidelity=0.8))

# %%
# Both nodes wait for the delivery.  The shared state is snapshotted as soon
# as both records have arrived.
got, snapshot = {}, []


def waiter(node):
    got[node] = yield net.qegp[node].wait_delivery()
    if len(got) == 2:
        snapshot.append(net.hw.rho.copy())


for node in Node:
    net.sim.process(waiter(node))
net.run()

rec = got[Node.CLIENT]
print("entanglement id:", rec.ent_id, "| server sees", got[Node.SERVER].ent_id)
print("heralded as", rec.raw_heralded.name, "-> delivered as", rec.delivered_bell.name)
print(f"latency {rec.latency / 1e6:.1f} ms:",
      {k: f"{v / 1e6:.2f} ms" for k, v in rec.latency_breakdown.items()})

# %%
# The delivered state, after the local pi correction on the server.
rho = snapshot[0]
np.set_printoptions(precision=3, suppress=True)
print("Re(rho) =\n", rho.real)
print(f"fidelity with PHI_PLUS: {fidelity_with_pure(rho, BellState.PHI_PLUS):.3f}")

# %%
# The trace lists every protocol event.  Here are the kinds seen.
from collections import Counter

print(Counter(t["event"] for t in net.sim.trace).most_common())
