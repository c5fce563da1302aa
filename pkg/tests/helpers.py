"""Small drivers shared by the test modules."""

import numpy as np

from qnetstack.noise import NoiseParams
from qnetstack.phys import Command, Verb
from qnetstack.qstate import Node
from qnetstack.stack import Network


def noiseless_net(seed=0, **noise_overrides):
    return Network(noise=NoiseParams.noiseless(**noise_overrides), seed=seed)


def drive(net, scripts):
    """Run per-node command lists on the device controllers; return outcome lists.

    ``scripts`` maps a node to a list of Commands or ``int`` delays (ns).
    """
    results = {node: [] for node in scripts}

    def actor(node, cmds):
        dev = net.devices[node]
        for c in cmds:
            if isinstance(c, int):
                yield c
                continue
            out = yield from dev.execute(c)
            results[node].append(out)

    for node, cmds in scripts.items():
        net.sim.process(actor(Node(node), cmds))
    net.run()
    return {Node(n): v for n, v in results.items()}


def ent(tag="r1", verb=Verb.ENT, target=0.83):
    return Command(verb, tag=tag, target_fidelity=target)


def joint_z_distribution(rho):
    return np.real(np.diag(rho)).copy()


def correction_soundness(physical_sign=True):
    """Largest deviation between corrected and ideal PHI_PLUS statistics.

    Brute force over both heralded states, all 6x6 basis pairs and both
    correction paths: the pi gate for kept pairs and the originator's
    classical flip for measured pairs.  Probabilities are exact.
    """
    from qnetstack import qstate as q
    from qnetstack.link import classical_flip, correction_rotation
    from qnetstack.qstate import BellState, MeasBasis

    bases = [MeasBasis.parse(s) for s in ("+X", "-X", "+Y", "-Y", "+Z", "-Z")]
    ideal = q.bell_density(BellState.PHI_PLUS)

    def joint(rho, cb, sb, flip_client):
        r = rho
        flips = [False, False]
        for i, (node, b) in enumerate((("client", cb), ("server", sb))):
            gates, f = q.basis_change(b, physical_sign)
            for g in gates:
                r = q.apply_local_rotation(r, node, g)
            flips[i] = f
        p = np.real(np.diag(r)).reshape(2, 2)
        if flips[0] ^ flip_client:
            p = p[::-1, :]
        if flips[1]:
            p = p[:, ::-1]
        return p

    worst = 0.0
    n_cases = 0
    for heralded in (BellState.PSI_PLUS, BellState.PSI_MINUS):
        raw = q.bell_density(heralded)
        kept = q.apply_local_rotation(raw, "client", correction_rotation(heralded))
        for cb in bases:
            for sb in bases:
                ref = joint(ideal, cb, sb, False)
                worst = max(worst, np.abs(joint(kept, cb, sb, False) - ref).max())
                # measured pairs: the client originated and flips its own bit
                flip = classical_flip(heralded, cb.axis)
                worst = max(worst, np.abs(joint(raw, cb, sb, flip) - ref).max())
                n_cases += 2
    return worst, n_cases
