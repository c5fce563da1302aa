"""Post-processing of outcome tables.

Everything here is a pure function of the row dicts produced by
:mod:`qnetstack.apps`: charge filtering, readout unfolding, correlator
estimation over the four sign variants, linear-inversion tomography with a
projection onto physical states, remote-state-preparation Bloch vectors and
latency tables.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .link import BUCKETS
from .qstate import PAULI, BellState, MeasBasis, fidelity_with_pure
from .units import S

logger = logging.getLogger(__name__)

__all__ = [
    "FilterReport", "filter_charge", "confusion_matrix", "unfold_readout", "unfold_joint",
    "CorrelatorEstimate", "ReconstructedState", "estimate_correlators",
    "single_qubit_expectations", "linear_inversion", "project_psd", "tomography",
    "fidelity_from_correlators", "fidelity_sweep", "rsp_bloch", "latency_table",
    "delivered_series", "write_csv", "CORRECTIONS",
]

AXES = ("X", "Y", "Z")
CORRECTIONS = ("none", "readout", "full")


# -- charge filtering ----------------------------------------------------------

@dataclass(frozen=True)
class FilterReport:
    total: int
    client: int
    server: int
    combined: int
    both: int


def filter_charge(rows):
    """Drop rows in which either node was flagged as off-resonant.

    Returns ``(kept_rows, FilterReport)``.
    """
    rows = list(rows)
    c = np.array([bool(r["client_charge_flag"]) for r in rows], dtype=bool)
    s = np.array([bool(r["server_charge_flag"]) for r in rows], dtype=bool)
    bad = c | s
    kept = [r for r, b in zip(rows, bad) if not b]
    if rows and not kept:
        logger.warning("charge filter removed all %d rows", len(rows))
    return kept, FilterReport(len(rows), int(c.sum()), int(s.sum()), int(bad.sum()),
                              int((c & s).sum()))


# -- readout unfolding ---------------------------------------------------------

def confusion_matrix(f0: float, f1: float) -> np.ndarray:
    """Column ``j`` is the distribution of read bits given true bit ``j``."""
    if f0 + f1 <= 1:
        raise np.linalg.LinAlgError(f"readout matrix singular or inverting (f0+f1={f0 + f1} <= 1)")
    return np.array([[f0, 1 - f1], [1 - f0, f1]], dtype=float)


def _to_simplex(p: np.ndarray) -> np.ndarray:
    if np.all(p >= 0) and np.all(p <= 1):
        return p
    p = np.clip(p, 0, 1)
    return p / p.sum()


def unfold_readout(p_measured, f0: float, f1: float, clip: bool = True) -> np.ndarray:
    """Invert single-qubit readout errors on a ``(p0, p1)`` distribution."""
    p = np.linalg.solve(confusion_matrix(f0, f1), np.asarray(p_measured, dtype=float))
    return _to_simplex(p) if clip else p


def unfold_joint(p_measured, client, server, clip: bool = False) -> np.ndarray:
    """Invert independent readout errors on a joint ``(p00, p01, p10, p11)``.

    ``client`` and ``server`` are ``(f0, f1)`` pairs.  Left unclipped by
    default because correlators are linear in the distribution and clipping
    would bias them.
    """
    m = np.kron(confusion_matrix(*client), confusion_matrix(*server))
    p = np.linalg.solve(m, np.asarray(p_measured, dtype=float))
    return _to_simplex(p) if clip else p


# -- correlators -----------------------------------------------------------------

@dataclass(frozen=True)
class CorrelatorEstimate:
    client_axis: str
    server_axis: str
    value: float
    std_err: float
    n_shots: int
    partial: bool = False


def _basis_pair(row):
    return MeasBasis.parse(row["client_basis"]), MeasBasis.parse(row["server_basis"])


def _joint_counts(rows):
    """Counts of (client_bit, server_bit) per (client_basis, server_basis)."""
    counts = defaultdict(lambda: np.zeros(4, dtype=np.int64))
    for r in rows:
        counts[_basis_pair(r)][2 * r["client_bit"] + r["server_bit"]] += 1
    return counts


def _parity_from_counts(n, readout):
    """``<z (x) z>`` of a 4-vector of counts, with its binomial standard error."""
    total = n.sum()
    p = n / total
    gain = 1.0
    if readout is not None:
        p = unfold_joint(p, readout[0], readout[1])
        gain = (sum(readout[0]) - 1) * (sum(readout[1]) - 1)
    e = p[0] - p[1] - p[2] + p[3]
    e_raw = (n[0] - n[1] - n[2] + n[3]) / total
    return e, np.sqrt(max(1 - e_raw ** 2, 1.0 / total) / total) / gain


def estimate_correlators(rows, readout=None, counts=None) -> dict:
    """Two-node correlators ``<a (x) b>`` keyed by ``(a, b)`` axis letters.

    ``readout`` is ``((f0, f1) client, (f0, f1) server)`` or ``None``.  Sign
    variants are mapped onto the positive orientation and averaged; an axis
    pair with fewer than four variants is marked ``partial``.
    """
    counts = _joint_counts(rows) if counts is None else counts
    groups = defaultdict(list)
    for (cb, sb), n in counts.items():
        groups[(cb.axis.value, sb.axis.value)].append((cb.sign * sb.sign, n))
    out = {}
    for (a, b), variants in sorted(groups.items()):
        vals, errs = [], []
        for sign, n in variants:
            e, se = _parity_from_counts(n, readout)
            vals.append(sign * e)
            errs.append(se)
        k = len(vals)
        out[(a, b)] = CorrelatorEstimate(a, b, float(np.mean(vals)),
                                         float(np.sqrt(np.sum(np.square(errs))) / k),
                                         int(sum(n.sum() for _, n in variants)), k < 4)
        if k < 4:
            logger.warning("correlator %s%s estimated from %d of 4 sign variants", a, b, k)
    return out


def single_qubit_expectations(rows, readout=None, counts=None) -> dict:
    """``<a (x) I>`` and ``<I (x) b>`` keyed ``(a, "I")`` / ``("I", b)``.

    Each node's marginal is unfolded with its own readout fidelities and the
    estimates are averaged over the sign of the node's own basis.
    """
    counts = _joint_counts(rows) if counts is None else counts
    acc = defaultdict(lambda: defaultdict(lambda: np.zeros(2)))
    for (cb, sb), n in counts.items():
        acc[(cb.axis.value, "I")][cb.sign] += [n[0] + n[1], n[2] + n[3]]
        acc[("I", sb.axis.value)][sb.sign] += [n[0] + n[2], n[1] + n[3]]
    out = {}
    for key, by_sign in acc.items():
        which = 0 if key[1] == "I" else 1
        vals = []
        for sign, m in by_sign.items():
            p = m / m.sum()
            if readout is not None:
                p = unfold_readout(p, *readout[which], clip=False)
            vals.append(sign * (p[0] - p[1]))
        out[key] = float(np.mean(vals))
    return out


# -- state reconstruction ------------------------------------------------------

@dataclass
class ReconstructedState:
    rho: np.ndarray
    fidelity: float
    element_uncertainties: Optional[np.ndarray] = None
    fidelity_std: Optional[float] = None
    raw_rho: Optional[np.ndarray] = None


def project_psd(rho: np.ndarray) -> np.ndarray:
    """Nearest-in-spectrum physical state: clip negative eigenvalues, renormalize."""
    rho = (rho + rho.conj().T) / 2
    w, v = np.linalg.eigh(rho)
    w = np.clip(w, 0, None)
    if w.sum() <= 0:
        return np.eye(rho.shape[0], dtype=complex) / rho.shape[0]
    w /= w.sum()
    out = (v * w) @ v.conj().T
    return (out + out.conj().T) / 2


def _pauli_keys():
    labels = ("I",) + AXES
    return [(a, b) for a in labels for b in labels if (a, b) != ("I", "I")]


def linear_inversion(expectations: dict, target: BellState = BellState.PHI_PLUS,
                     project: bool = True) -> ReconstructedState:
    """``rho = 1/4 sum <s_i s_j> s_i (x) s_j`` over all fifteen Pauli terms.

    ``expectations`` maps ``(a, b)`` to a float or a CorrelatorEstimate.
    """
    missing = [a + b for a, b in _pauli_keys() if (a, b) not in expectations]
    if missing:
        raise ValueError(f"missing expectation values: {', '.join(missing)}")
    rho = np.kron(PAULI["I"], PAULI["I"]).astype(complex)
    for a, b in _pauli_keys():
        e = expectations[(a, b)]
        rho = rho + float(getattr(e, "value", e)) * np.kron(PAULI[a], PAULI[b])
    rho /= 4
    phys = project_psd(rho) if project else rho
    return ReconstructedState(phys, fidelity_with_pure(phys, target), raw_rho=rho)


def fidelity_from_correlators(xx: float, yy: float, zz: float) -> float:
    """PHI_PLUS fidelity from the three diagonal correlators."""
    return (1 + xx - yy + zz) / 4


def _resample_counts(counts, rng):
    return {k: rng.multinomial(int(n.sum()), n / n.sum()) for k, n in counts.items()}


def _readout_for(level: str, readout):
    return readout if level in ("readout", "full") else None


def _check_level(level):
    if level not in CORRECTIONS:
        raise ValueError(f"corrections must be one of {CORRECTIONS}, got {level!r}")


@dataclass
class TomographyResult:
    state: ReconstructedState
    correlators: dict
    singles: dict
    filter_report: Optional[FilterReport]
    corrections: str
    n_rows: int


def tomography(rows, readout=None, corrections: str = "full", n_boot: int = 1000,
               seed: int = 0) -> TomographyResult:
    """Reconstruct the delivered two-qubit state from a tomography outcome table.

    ``corrections`` is ``"none"`` (raw counts), ``"readout"`` (unfold readout
    errors) or ``"full"`` (also drop charge-flagged rows).  Uncertainties are
    the spread over ``n_boot`` resamples drawn per measurement setting.
    """
    _check_level(corrections)
    report = None
    if corrections == "full":
        rows, report = filter_charge(rows)
    ro = _readout_for(corrections, readout)
    counts = _joint_counts(rows)
    corr = estimate_correlators(rows, ro, counts)
    singles = single_qubit_expectations(rows, ro, counts)
    state = linear_inversion({**corr, **singles})
    if n_boot:
        rng = np.random.default_rng(seed)
        rhos = np.empty((n_boot, 4, 4), dtype=complex)
        fids = np.empty(n_boot)
        for i in range(n_boot):
            c = _resample_counts(counts, rng)
            st = linear_inversion({**estimate_correlators(None, ro, c),
                                   **single_qubit_expectations(None, ro, c)})
            rhos[i], fids[i] = st.rho, st.fidelity
        state.element_uncertainties = np.sqrt(rhos.real.std(0) ** 2 + rhos.imag.std(0) ** 2)
        state.fidelity_std = float(fids.std())
    return TomographyResult(state, corr, singles, report, corrections, len(rows))


# -- fidelity sweep ------------------------------------------------------------

@dataclass(frozen=True)
class FidelityPoint:
    requested: float
    measured: float
    std_err: float
    n: int
    meets_request: bool


def fidelity_sweep(rows, readout=None, corrections: str = "full"):
    """Measured PHI_PLUS fidelity per requested level, from XX, YY and ZZ."""
    _check_level(corrections)
    report = None
    if corrections == "full":
        rows, report = filter_charge(rows)
    ro = _readout_for(corrections, readout)
    by_fid = defaultdict(list)
    for r in rows:
        by_fid[r["fid"]].append(r)
    points = []
    for fid in sorted(by_fid):
        corr = estimate_correlators(by_fid[fid], ro)
        need = [("X", "X"), ("Y", "Y"), ("Z", "Z")]
        if any(k not in corr for k in need):
            raise ValueError(f"requested level {fid} lacks XX/YY/ZZ data")
        xx, yy, zz = (corr[k] for k in need)
        f = fidelity_from_correlators(xx.value, yy.value, zz.value)
        se = float(np.sqrt(xx.std_err ** 2 + yy.std_err ** 2 + zz.std_err ** 2) / 4)
        points.append(FidelityPoint(fid, float(f), se, len(by_fid[fid]), bool(f >= fid)))
    return points, report


# -- remote state preparation ----------------------------------------------------

@dataclass(frozen=True)
class BlochEstimate:
    state: str  # prepared cardinal state, e.g. "+Z"
    bloch: tuple
    bloch_std: tuple
    fidelity: float
    fidelity_std: float
    n: int


def _prepared_state(client_basis: str, bit: int) -> MeasBasis:
    """Server state steered by a PHI_PLUS pair when the client reads ``bit``."""
    b = MeasBasis.parse(client_basis)
    sign = b.sign * (1 if bit == 0 else -1)
    if b.axis.value == "Y":
        sign = -sign  # <YY> = -1 on PHI_PLUS
    return MeasBasis(b.axis, sign)


def _bloch_from_counts(counts: dict, readout):
    """Bloch vector from per-basis (n0, n1) server counts."""
    r = []
    for axis in AXES:
        vals = []
        for sign in (1, -1):
            n = counts.get((axis, sign))
            if n is None or n.sum() == 0:
                continue
            p = n / n.sum()
            if readout is not None:
                p = unfold_readout(p, *readout, clip=False)
            vals.append(sign * (p[0] - p[1]))
        r.append(float(np.mean(vals)) if vals else 0.0)
    return np.array(r)


def rsp_bloch(rows, readout=None, corrections: str = "full", n_boot: int = 1000,
              seed: int = 0):
    """Server Bloch vectors for the six remotely prepared states.

    ``readout`` is ``((f0, f1) client, (f0, f1) server)``; only the server's
    readout is unfolded, since the client outcome only labels the state.
    Returns ``(list of BlochEstimate, average fidelity, FilterReport)``.
    """
    _check_level(corrections)
    report = None
    if corrections == "full":
        rows, report = filter_charge(rows)
    ro = None if readout is None or corrections == "none" else readout[1]
    groups = defaultdict(lambda: defaultdict(lambda: np.zeros(2, dtype=np.int64)))
    for r in rows:
        prep = _prepared_state(r["client_basis"], r["client_bit"])
        sb = MeasBasis.parse(r["server_basis"])
        groups[str(prep)][(sb.axis.value, sb.sign)][r["server_bit"]] += 1
    rng = np.random.default_rng(seed)
    results = []
    for label in ("+X", "-X", "+Y", "-Y", "+Z", "-Z"):
        g = groups.get(label)
        if not g:
            logger.warning("no rows prepared state %s; omitted", label)
            continue
        ideal = np.zeros(3)
        mb = MeasBasis.parse(label)
        ideal[AXES.index(mb.axis.value)] = mb.sign
        r = _bloch_from_counts(g, ro)
        boots = []
        for _ in range(n_boot):
            rc = {k: rng.multinomial(int(n.sum()), n / n.sum()) for k, n in g.items()}
            boots.append(_bloch_from_counts(rc, ro))
        boots = np.array(boots) if boots else np.zeros((1, 3))
        fid = (1 + r @ ideal) / 2
        fstd = float(((1 + boots @ ideal) / 2).std())
        results.append(BlochEstimate(label, tuple(r.tolist()), tuple(boots.std(0).tolist()),
                                     float(fid), fstd, int(sum(n.sum() for n in g.values()))))
    avg = float(np.mean([b.fidelity for b in results])) if results else float("nan")
    return results, avg, report


# -- latency and delivery time series --------------------------------------------

def latency_table(rows, cutoff: int = 10 * S):
    """Mean latency per bucket (ms), per requested fidelity, dropping slow outliers."""
    by_fid = defaultdict(list)
    for r in rows:
        by_fid[r["fid"]].append(r)
    table = []
    for fid in sorted(by_fid):
        rs = by_fid[fid]
        kept = [r for r in rs if r["latency"] <= cutoff]
        entry = {"requested": fid, "n": len(kept), "excluded": len(rs) - len(kept)}
        for b in BUCKETS:
            entry[b] = float(np.mean([r["latency_breakdown"][b] for r in kept]) / 1e6) if kept else 0.0
        entry["total"] = float(np.mean([r["latency"] for r in kept]) / 1e6) if kept else 0.0
        table.append(entry)
    return table


def delivered_series(rows):
    """``(t_seconds, cumulative_count)`` arrays ordered by delivery time."""
    t = np.sort(np.array([r["delivered_at"] for r in rows], dtype=np.int64))
    return t / S, np.arange(1, len(t) + 1)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
