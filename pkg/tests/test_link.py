import numpy as np
import pytest
from helpers import correction_soundness, noiseless_net

from qnetstack.link import (BUCKETS, EntRequest, RequestError, TdmaSchedule,
                            classical_flip, constant_schedule, correction_rotation, latency_report)
from qnetstack.noise import ChargeParams, NoiseParams
from qnetstack.phys import Command, Verb
from qnetstack.qstate import Axis, BellState, MeasBasis, Node, fidelity_with_pure
from qnetstack.stack import Network
from qnetstack.units import MS

C, S = Node.CLIENT, Node.SERVER


@pytest.mark.parametrize("physical", [True, False])
def test_correction_rules_exact(physical):
    worst, n = correction_soundness(physical)
    assert n == 144
    assert worst < 1e-12


def test_classical_flip_table():
    assert classical_flip(BellState.PSI_PLUS, Axis.X) is False
    assert classical_flip(BellState.PSI_PLUS, Axis.Y) is True
    assert classical_flip(BellState.PSI_MINUS, Axis.X) is True
    assert classical_flip(BellState.PSI_MINUS, Axis.Y) is False
    assert classical_flip(BellState.PSI_MINUS, Axis.Z) is True
    with pytest.raises(ValueError):
        classical_flip(BellState.PHI_PLUS, Axis.Z)
    with pytest.raises(ValueError):
        correction_rotation(BellState.PHI_MINUS)


def test_request_validation():
    with pytest.raises(ValueError):
        EntRequest(S, delivery_type="K", meas_basis=MeasBasis.parse("+X"))
    with pytest.raises(ValueError):
        EntRequest(S, delivery_type="M")
    with pytest.raises(ValueError):
        EntRequest(S, min_fidelity=0.99)
    with pytest.raises(ValueError):
        EntRequest(S, num_pairs=0)
    r = EntRequest(S, 2, 0.7, "R", MeasBasis.parse("-Y"), timeout=5 * MS)
    assert EntRequest.from_dict(r.to_dict()) == r


def test_tdma_bins():
    s = TdmaSchedule(20 * MS, [("tomo", 0.8), None, "rsp"])
    assert s.bin_index(45 * MS) == 2
    assert s.allows(5 * MS, ("tomo", 0.8))
    assert not s.allows(5 * MS, ("tomo", 0.7))
    assert s.allows(25 * MS, ("anything", 0.5))
    assert s.allows(41 * MS, ("rsp", 0.6))
    assert s.next_bin_start(1, ("tomo", 0.8)) == 20 * MS  # bin 1 is open to all
    assert s.next_bin_start(0, ("tomo", 0.8)) == 0
    strict = TdmaSchedule(20 * MS, [("tomo", 0.8), "rsp", "rsp"])
    assert strict.next_bin_start(1, ("tomo", 0.8)) == 60 * MS
    assert strict.next_bin_start(1, ("rsp", 0.6)) == 20 * MS
    assert s.next_allowed(5 * MS, ("tomo", 0.8)) == 5 * MS
    assert TdmaSchedule.from_dict(s.to_dict()).assignment == s.assignment
    with pytest.raises(ValueError):
        constant_schedule(app_id="other").next_bin_start(0, ("tomo", 0.8))


def consume(net, node, n, measure=True, out=None):
    """App stand-in: take ``n`` deliveries on ``node``, measuring kept qubits."""
    out = [] if out is None else out
    qegp, dev = net.qegp[node], net.devices[node]

    def actor():
        for _ in range(n):
            rec = yield qegp.wait_delivery()
            out.append(rec)
            if isinstance(rec, RequestError):
                return
            if measure and dev.has_qubit:
                o = yield from dev.execute(Command(Verb.MSR))
                out.append(o.code.bit)

    net.sim.process(actor())
    return out


def test_k_delivery_is_phi_plus_and_ids_agree():
    net = noiseless_net(seed=3, p_succ=1e-3)
    net.client.create(EntRequest(S))
    got = {C: [], S: []}
    states = []

    def grab(node):
        rec = yield net.qegp[node].wait_delivery()
        got[node].append(rec)

    net.sim.process(grab(C))
    net.sim.process(grab(S))

    def check():
        while not (got[C] and got[S]):
            yield 1000
        states.append(net.hw.rho.copy())

    net.sim.process(check())
    net.run()
    c, s = got[C][0], got[S][0]
    assert c.ent_id == s.ent_id
    assert c.delivered_bell is BellState.PHI_PLUS
    assert s.delivered_bell is s.raw_heralded
    assert fidelity_with_pure(states[0], BellState.PHI_PLUS) == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("basis, equal", [("+X", True), ("+Y", False), ("+Z", True), ("-Y", False)])
def test_m_type_outcomes_follow_phi_plus(basis, equal):
    net = noiseless_net(seed=5, p_succ=1e-3)
    net.client.create(EntRequest(S, num_pairs=20, delivery_type="M",
                                 meas_basis=MeasBasis.parse(basis)))
    c = consume(net, C, 20)
    s = consume(net, S, 20)
    net.run()
    assert len(c) == len(s) == 20
    for a, b in zip(c, s):
        assert a.ent_id == b.ent_id
        assert (a.meas_outcome == b.meas_outcome) is equal


def test_r_type_keeps_remote_qubit_without_correction():
    net = noiseless_net(seed=6, p_succ=1e-3)
    net.sim.tracing = True
    net.client.create(EntRequest(S, delivery_type="R", meas_basis=MeasBasis.parse("+Z")))
    c = consume(net, C, 1, measure=False)
    s = consume(net, S, 1)
    net.run()
    assert c[0].meas_outcome is not None
    # server then measured Z: PHI_PLUS semantics, same bit
    assert s[1] == c[0].meas_outcome
    assert not any(t["event"] == "command" and t["data"]["correction"] for t in net.sim.trace)


def test_multi_pair_k_request():
    net = noiseless_net(seed=7, p_succ=1e-3)
    h = net.client.create(EntRequest(S, num_pairs=3))
    c = consume(net, C, 3)
    s = consume(net, S, 3)
    net.run()
    recs_c = [x for x in c if not isinstance(x, int)]
    recs_s = [x for x in s if not isinstance(x, int)]
    assert [r.ent_id for r in recs_c] == [r.ent_id for r in recs_s]
    assert len({r.ent_id for r in recs_c}) == 3
    assert len(h.records) == 3
    # Z outcomes of PHI_PLUS agree
    assert [x for x in c if isinstance(x, int)] == [x for x in s if isinstance(x, int)]


def test_timeout_reported_to_originator():
    net = noiseless_net(p_succ=0.0)
    h = net.client.create(EntRequest(S, timeout=30 * MS))
    c = consume(net, C, 1)
    net.run(until=200 * MS)
    assert isinstance(c[0], RequestError) and c[0].kind == "timeout"
    assert h.error is c[0]


def test_mismatch_when_forward_lost():
    net = noiseless_net(p_succ=1e-3)
    sent = net.channel.send

    def lossy(sender, receiver, frame, _first=[True]):
        if _first[0]:
            _first[0] = False
            return
        sent(sender, receiver, frame)

    net.channel.send = lossy
    net.client.create(EntRequest(S))  # never reaches the server

    def later():
        yield 1 * MS
        net.server.create(EntRequest(C))

    net.sim.process(later())
    c = consume(net, C, 1)
    s = consume(net, S, 1)
    net.run(until=2000 * MS)
    assert isinstance(c[0], RequestError) and c[0].kind == "mismatch"
    assert isinstance(s[0], RequestError) and s[0].kind == "mismatch"


def test_latency_buckets_sum_exactly():
    net = Network(seed=8)
    net.client.create(EntRequest(S, num_pairs=4))
    c = consume(net, C, 4)
    consume(net, S, 4)
    net.run()
    recs = [r for r in c if not isinstance(r, int)]
    assert len(recs) == 4
    for r in recs:
        assert sum(r.latency_breakdown[b] for b in BUCKETS) == r.latency
    rep = latency_report(recs)
    assert rep.n == 4 and rep.excluded == 0
    assert rep.total_mean == pytest.approx(np.mean([r.latency for r in recs]))


def test_latency_report_excludes_outliers():
    class R:
        def __init__(self, lat):
            self.latency = lat
            self.latency_breakdown = dict.fromkeys(BUCKETS, 0)
            self.latency_breakdown["ent_generation"] = lat

    rep = latency_report([R(100), R(11 * 10**9), R(300)])
    assert rep.n == 2 and rep.excluded == 1
    assert rep.means["ent_generation"] == 200
    assert latency_report([]) is None


def test_first_request_waits_for_next_bin():
    net = noiseless_net(p_succ=1.0)

    def later():
        yield 3 * MS
        net.client.create(EntRequest(S))

    net.sim.process(later())
    c = consume(net, C, 1)
    consume(net, S, 1)
    net.run()
    assert c[0].latency_breakdown["link_layer"] == 17 * MS


def test_charge_flag_set_at_next_cr_check():
    p = NoiseParams.noiseless(p_succ=1e-3, charge_server=ChargeParams(entry=1.0, recovery=1.0))
    net = Network(noise=p, seed=2)
    net.client.create(EntRequest(S, num_pairs=2))
    c = consume(net, C, 2)
    s = consume(net, S, 2)
    net.run()
    recs = [r for r in s if not isinstance(r, int)]
    assert recs[0].charge_flag  # flagged by the CR check before the second pair
    assert not recs[1].charge_flag  # no CR check has happened since
    net.sim.process(net.server.final_check())
    net.run()
    assert recs[1].charge_flag
    assert not any(r.charge_flag for r in c if not isinstance(r, int))


def test_wrong_charge_delivery_is_degraded():
    p = NoiseParams.noiseless(p_succ=1e-3, charge_server=ChargeParams(entry=1.0, recovery=1.0))
    net = Network(noise=p, seed=2)
    net.client.create(EntRequest(S))
    snap = []

    def grab():
        yield net.client.wait_delivery()
        snap.append(net.hw.rho.copy())

    net.sim.process(grab())
    net.run()
    assert fidelity_with_pure(snap[0], BellState.PHI_PLUS) == pytest.approx(0.25)


def test_self_request_rejected():
    net = noiseless_net()
    with pytest.raises(ValueError):
        net.client.create(EntRequest(C))
