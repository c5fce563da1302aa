import numpy as np
import pytest

from qnetstack import noise as nz
from qnetstack.noise import ChargeParams, ChargeState, DeliveredModel, NoiseParams
from qnetstack.qstate import (PI_STEPS, Axis, BellState, Node, Rotation, apply_local_rotation,
                              bell_density, fidelity_with_pure, is_density, partial_trace)


def corrected(rho, heralded):
    axis = Axis.X if heralded is BellState.PSI_PLUS else Axis.Y
    return apply_local_rotation(rho, Node.CLIENT, Rotation(axis, PI_STEPS))


def test_noiseless_model_gives_pure_bell():
    for b in (BellState.PSI_PLUS, BellState.PSI_MINUS):
        assert np.allclose(nz.delivered_state(DeliveredModel(1, 0, 1), b), bell_density(b))


def test_phi_states_rejected():
    with pytest.raises(ValueError, match="PSI"):
        nz.delivered_state(DeliveredModel(), BellState.PHI_PLUS)


def test_calibrated_row_hits_target():
    row = nz.default_fidelity_table().lookup(0.83)
    for b in (BellState.PSI_PLUS, BellState.PSI_MINUS):
        rho = corrected(nz.delivered_state(row.model, b), b)
        assert fidelity_with_pure(rho, BellState.PHI_PLUS) == pytest.approx(0.83, abs=5e-3)


def test_calibrated_populations_follow_reconstructed_state():
    # diagonal of the reconstructed tomography state: 0.442, 0.033, 0.056, 0.469
    row = nz.default_fidelity_table().lookup(0.83)
    rho = corrected(nz.delivered_state(row.model, BellState.PSI_PLUS), BellState.PSI_PLUS)
    pops = np.real(np.diag(rho))
    assert pops[0] < pops[3]
    assert pops[3] - pops[0] == pytest.approx(0.027, abs=0.005)
    assert pops == pytest.approx([0.442, 0.033, 0.056, 0.469], abs=0.01)


@pytest.mark.parametrize("w", np.linspace(0, 1, 11))
def test_delivered_state_valid(w):
    m = DeliveredModel(w, 0.1742 * (1 - w), 0.8629)
    assert is_density(nz.delivered_state(m, BellState.PSI_MINUS))


def test_fidelity_monotone_in_bell_weight():
    fs = [nz.corrected_fidelity(DeliveredModel(w, 0.02, 0.9)) for w in np.linspace(0.1, 1, 30)]
    assert np.all(np.diff(fs) >= 0)


def test_table_domain_and_interpolation():
    t = nz.default_fidelity_table()
    lo, hi = t.domain
    assert lo == pytest.approx(0.28) and hi == 1.0
    mid = t.lookup(0.805)
    a, b = t.lookup(0.78), t.lookup(0.83)
    assert mid.bell_weight == pytest.approx((a.bell_weight + b.bell_weight) / 2)
    with pytest.raises(ValueError, match="domain"):
        t.lookup(0.2)
    assert t.lookup(0.83).p_succ == pytest.approx(5e-5)
    assert t.lookup(0.53).p_succ == pytest.approx(1e-4)
    ps = [r.p_succ for r in t.rows[:-1]]
    assert np.all(np.diff(ps) < 0)


def test_table_roundtrip():
    t = nz.default_fidelity_table()
    t2 = nz.FidelityTable.from_list(t.to_list())
    assert t2.rows == t.rows


def test_readout_examples():
    assert nz.apply_readout_error(0, 1.0, 1.0, 0.999) == 0
    assert nz.apply_readout_error(0, 0.928, 0.997, 0.95) == 1
    assert nz.apply_readout_error(1, 0.928, 0.997, 0.5) == 1


def test_readout_confusion_statistics():
    rng = np.random.default_rng(11)
    n = 100_000
    f0, f1 = 0.928, 0.997
    for true, keep in ((0, f0), (1, f1)):
        bits = np.array([nz.apply_readout_error(true, f0, f1, u) for u in rng.random(n)])
        frac = np.mean(bits == true)
        assert abs(frac - keep) < 4 * np.sqrt(keep * (1 - keep) / n)


def test_step_charge_examples():
    p = NoiseParams(charge_server=ChargeParams(entry=0.0, recovery=1.0))
    assert nz.step_charge(ChargeState.RESONANT, "server", "batch_completed", p, 0.0) is ChargeState.RESONANT
    assert nz.step_charge(ChargeState.WRONG_CHARGE, "server", "cr_try", p, 0.99) is ChargeState.RESONANT
    with pytest.raises(ValueError):
        nz.step_charge(ChargeState.RESONANT, "server", "nap", p, 0.1)


def test_client_can_enter_long_outage_server_cannot():
    p = NoiseParams()
    assert nz.step_charge(ChargeState.WRONG_CHARGE, "client", "cr_try", p, 0.0) is ChargeState.LONG_OUTAGE
    assert nz.step_charge(ChargeState.WRONG_CHARGE, "server", "cr_try", p, 0.0) is ChargeState.RESONANT


def test_server_recovery_under_one_ms():
    p = NoiseParams()
    cp = p.charge_server
    rng = np.random.default_rng(3)
    durations = []
    for _ in range(5000):
        state, t = ChargeState.WRONG_CHARGE, 0
        while state is not ChargeState.RESONANT:
            t += cp.recovery_try_duration
            state = nz.step_charge(state, "server", "cr_try", p, rng.random())
        durations.append(t)
    assert np.mean(np.array(durations) < 1_000_000) >= 0.99


def test_long_outage_duration_range():
    cp = ChargeParams(long_outage=1e-4)
    assert cp.outage_duration(0.0) == 10 * 10**9
    assert cp.outage_duration(0.999999) < 60 * 10**9


@pytest.mark.parametrize("req, phys", [(0.80, 0.83), (0.50, 0.53), (0.97, 1.0)])
def test_fidelity_to_phys_target(req, phys):
    assert nz.fidelity_to_phys_target(req) == pytest.approx(phys)


@pytest.mark.parametrize("req", [0.2, 0.99, 1.0])
def test_fidelity_to_phys_target_rejects(req):
    with pytest.raises(ValueError):
        nz.fidelity_to_phys_target(req)


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(readout_client=(0.5, 0.9))
    with pytest.raises(ValueError):
        NoiseParams(p_succ=1.5)
    with pytest.raises(ValueError):
        ChargeParams(entry=2)


def test_noise_params_dict_roundtrip():
    p = NoiseParams(readout_server=(0.95, 0.99), p_succ=1e-4)
    q = NoiseParams.from_dict(p.to_dict())
    assert q.to_dict() == p.to_dict()
    with pytest.raises(ValueError, match="unknown"):
        NoiseParams.from_dict({"nonsense": 1})


def test_success_probability_override():
    row = nz.default_fidelity_table().lookup(0.83)
    assert NoiseParams().success_probability(row) == row.p_succ
    assert NoiseParams(p_succ=0.0).success_probability(row) == 0.0


def test_wrong_charge_state_mixes_one_side():
    rho = nz.wrong_charge_state(bell_density(BellState.PSI_PLUS), "server")
    assert np.allclose(partial_trace(rho, "server"), np.eye(2) / 2)
    assert fidelity_with_pure(rho, BellState.PSI_PLUS) == pytest.approx(0.25)
