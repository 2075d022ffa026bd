"""Operator statistics of a measurement encoding and its information loss.

For a parameter-dependent Kraus family {M_w(x)} acting on a fixed probe
state, three scalar families summarize everything single-parameter
estimation cares about: the outcome weight <E_w> = <M'M>, the overlap
current <F_w> = i<dM'M>, and the derivative weight <G_w> = <dM'dM>
(primes denote adjoints, d the parameter derivative, brackets the probe
expectation).  This module computes those statistics, fixes the U(1)
derivative gauge, decides losslessness of the encoding in both the
perpendicular and the generic gauge, and evaluates the retained-fraction
loss kappa together with per-outcome amplification ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .fisher import DP_FLOOR, P_FLOOR
from .quantum_core import Ket, MeasurementChannel, Operator

__all__ = [
    "KAPPA_DENOM_FLOOR",
    "EfgReport",
    "GaugePhase",
    "LosslessPerpVerdict",
    "GenericLosslessVerdict",
    "KappaResult",
    "AmplificationReport",
    "efg",
    "total_qfi",
    "fix_perpendicular_gauge",
    "check_lossless_perp",
    "check_lossless_generic",
    "loss_kappa",
    "amplification_report",
    "complete_report",
]

#: below this the total QFI counts as zero and kappa is undefined
KAPPA_DENOM_FLOOR = 1e-14

_GAUGES = ("as_given", "perpendicular")


def _aggregate(per_outcome, retained):
    """Sum per-outcome rows in row order; shared by builder and validator."""
    e_total = sum((row[1] for row in per_outcome), 0.0)
    f_total = sum((row[2] for row in per_outcome), 0j)
    g_total = sum((row[3] for row in per_outcome), 0.0)
    f_ret = sum((row[2] for row in per_outcome if row[0] in retained), 0j)
    g_ret = sum((row[3] for row in per_outcome if row[0] in retained), 0.0)
    f_dis = sum((row[2] for row in per_outcome if row[0] not in retained), 0j)
    g_dis = sum((row[3] for row in per_outcome if row[0] not in retained), 0.0)
    return e_total, f_total, g_total, f_ret, g_ret, f_dis, g_dis


@dataclass(frozen=True)
class GaugePhase:
    """U(1) phase convention at the evaluation point.

    theta is the phase value (zero by convention at the point where the
    derivatives were taken) and dtheta its parameter derivative; applying
    it maps every overlap current to <F_w> + dtheta * <E_w>.
    """

    theta: float
    dtheta: float


@dataclass(frozen=True)
class EfgReport:
    """Per-outcome and aggregate E/F/G statistics of one channel.

    per_outcome rows are (label, e, f, g) with e, g real and f complex,
    in the channel's outcome order.  Aggregate fields are sums of the
    rows (total, retained-only, discarded-only), recomputed and checked
    for exact equality on construction.  avg_ps_qfi is the retained sum
    of 4(g - |f|^2/e) over outcomes with weight above the dead-outcome
    floor; i_q and kappa stay None until filled by total_qfi/loss_kappa.
    """

    per_outcome: tuple
    retained: frozenset
    gauge: str
    channel_kind: str
    completeness_residual: float
    e_total: float
    f_total: complex
    g_total: float
    f_retained: complex
    g_retained: float
    f_discarded: complex
    g_discarded: float
    avg_ps_qfi: float
    i_q: Optional[float] = None
    kappa: Optional[float] = None

    def __post_init__(self):
        if self.gauge not in _GAUGES:
            raise ValueError(f"unknown gauge {self.gauge!r}")
        slack = max(self.completeness_residual, 0.0) + 1e-10
        for label, e, f, g in self.per_outcome:
            if not -1e-10 <= e <= 1.0 + slack:
                raise ValueError(f"outcome {label!r} weight {e} outside [0, 1]")
            if g < -1e-10:
                raise ValueError(f"outcome {label!r} derivative weight {g} < 0")
        if self.channel_kind == "exact" and abs(self.f_total.imag) > 1e-9:
            raise ValueError(
                "total overlap current should be real for an exact channel, "
                f"got imaginary part {self.f_total.imag}"
            )
        sums = _aggregate(self.per_outcome, self.retained)
        stored = (
            self.e_total,
            self.f_total,
            self.g_total,
            self.f_retained,
            self.g_retained,
            self.f_discarded,
            self.g_discarded,
        )
        if any(a != b for a, b in zip(stored, sums)):
            raise ValueError("aggregate fields do not equal per-outcome sums")
        if self.kappa is not None and not -1e-8 <= self.kappa <= 1.0 + 1e-8:
            raise ValueError(f"kappa {self.kappa} outside [0, 1]")

    def row(self, label: str):
        for r in self.per_outcome:
            if r[0] == label:
                return r
        raise KeyError(label)

    def retained_probability(self) -> float:
        return sum(e for label, e, _, _ in self.per_outcome if label in self.retained)


def _contract(channel: MeasurementChannel, derivatives, psi: Ket):
    """Per-outcome (label, e, f, g, m_psi, dm_psi) contractions."""
    psi.require_normalized()
    dmap = dict((label, op) for label, op in derivatives)
    if set(dmap) != set(channel.labels) or len(dmap) != len(channel.labels):
        raise ValueError("derivative labels do not match channel labels")
    rows = []
    for label, op in channel.kraus:
        dm = dmap[label]
        if dm.dim != channel.dim:
            raise ValueError(f"derivative for {label!r} has wrong dimension")
        m_psi = op.entries @ psi.amplitudes
        dm_psi = dm.entries @ psi.amplitudes
        e = float(np.vdot(m_psi, m_psi).real)
        f = complex(1j * np.vdot(dm_psi, m_psi))
        g = float(np.vdot(dm_psi, dm_psi).real)
        rows.append((label, e, f, g, m_psi, dm_psi))
    return rows


def _branch_share(e: float, f: complex, g: float) -> float:
    """Retained-branch summand 4(g - |f|^2/e), clamped at exact zero.

    Cauchy-Schwarz on the branch vectors makes the bracket nonnegative,
    so anything below the roundoff allowance signals broken inputs.
    """
    val = 4.0 * (g - abs(f) ** 2 / e)
    if val < -1e-9 * max(1.0, 4.0 * g):
        raise ValueError(f"branch information share {val} below zero")
    return max(val, 0.0)


def efg(
    channel: MeasurementChannel,
    derivatives: Sequence,
    psi: Ket,
    gauge: str = "as_given",
) -> EfgReport:
    """Contract the E/F/G operator statistics against the probe state.

    Parameters
    ----------
    channel : MeasurementChannel
        Kraus family at the evaluation point.
    derivatives : sequence of (label, Operator)
        Parameter derivatives of the Kraus operators, same labels.
    psi : Ket
        Normalized probe state.
    gauge : str
        Recorded gauge tag; pass "perpendicular" for derivatives that
        came out of fix_perpendicular_gauge.

    Returns
    -------
    EfgReport
        With avg_ps_qfi filled and i_q/kappa left as None.
    """
    rows6 = _contract(channel, derivatives, psi)
    per_outcome = tuple((label, e, f, g) for label, e, f, g, _, _ in rows6)
    avg = 0.0
    for label, e, f, g in per_outcome:
        if label in channel.retained and e > P_FLOOR:
            avg += _branch_share(e, f, g)
    sums = _aggregate(per_outcome, channel.retained)
    return EfgReport(
        per_outcome=per_outcome,
        retained=channel.retained,
        gauge=gauge,
        channel_kind=channel.kind,
        completeness_residual=channel.completeness_residual,
        e_total=sums[0],
        f_total=sums[1],
        g_total=sums[2],
        f_retained=sums[3],
        g_retained=sums[4],
        f_discarded=sums[5],
        g_discarded=sums[6],
        avg_ps_qfi=avg,
    )


def total_qfi(report: EfgReport, allow_approximate: bool = False) -> float:
    """QFI carried by the full record-resolved pair, 4(<G> - Re<F>^2).

    Equals the pure QFI of the dilated joint state for an exact channel.
    Approximate channels are rejected unless allow_approximate is set,
    since their sums track a truncated branch family rather than the
    physical evolution; integral corrections live in the collision
    workflow.
    """
    if report.channel_kind != "exact" and not allow_approximate:
        raise ValueError(
            "total QFI from sums is only meaningful for an exact channel; "
            "pass allow_approximate=True to override"
        )
    raw = 4.0 * (report.g_total - report.f_total.real**2)
    if raw < -1e-8:
        raise ValueError(f"total QFI {raw} is negative beyond roundoff")
    return max(raw, 0.0)


def fix_perpendicular_gauge(
    channel: MeasurementChannel,
    derivatives: Sequence,
    psi: Ket,
):
    """Shift the derivative phases so the total overlap current is real-free.

    Adds i * dtheta * M_w to every derivative with dtheta chosen as
    -Re<F_total>/<E_total>, which zeroes Re<F_total> without touching its
    imaginary part or any gauge-invariant quantity.

    Returns
    -------
    (gauged, phase) : (tuple of (label, Operator), GaugePhase)
    """
    if channel.kind != "exact":
        raise ValueError("gauge fixing expects an exact channel")
    rows6 = _contract(channel, derivatives, psi)
    e_total = sum(e for _, e, _, _, _, _ in rows6)
    f_total = sum((f for _, _, f, _, _, _ in rows6), 0j)
    dtheta = -f_total.real / e_total
    dmap = dict((label, op) for label, op in derivatives)
    gauged = tuple(
        (label, Operator(dmap[label].entries + (1j * dtheta) * op.entries))
        for label, op in channel.kraus
    )
    return gauged, GaugePhase(theta=0.0, dtheta=dtheta)


@dataclass(frozen=True)
class LosslessPerpVerdict:
    """Perpendicular-gauge losslessness: stationary retained branches,
    parameter-free discarded branches.

    retained_residuals rows are (label, |<branch|dbranch>|); discarded
    rows are (label, ||dbranch||).  flagged lists retained outcomes whose
    weight sits at zero while the branch derivative does not, where the
    stationarity condition is vacuous and the verdict withholds a pass.
    """

    lossless: bool
    tol: float
    retained_residuals: tuple
    discarded_residuals: tuple
    flagged: tuple

    def worst(self) -> float:
        vals = [r for _, r in self.retained_residuals]
        vals += [r for _, r in self.discarded_residuals]
        return max(vals) if vals else 0.0


def check_lossless_perp(
    channel: MeasurementChannel,
    derivatives: Sequence,
    psi: Ket,
    tol: float = 1e-9,
) -> LosslessPerpVerdict:
    """Decide losslessness assuming perpendicular-gauge derivatives.

    Call fix_perpendicular_gauge first; with an unfixed gauge the
    retained residuals conflate the physical overlap with the removable
    phase drift.  The conditions here are sufficient only: a channel can
    fail them in this gauge yet lose nothing.
    """
    rows6 = _contract(channel, derivatives, psi)
    retained_res = []
    discarded_res = []
    flagged = []
    for label, e, f, g, m_psi, dm_psi in rows6:
        if label in channel.retained:
            retained_res.append((label, float(abs(np.vdot(m_psi, dm_psi)))))
            if e <= P_FLOOR and np.sqrt(max(g, 0.0)) > DP_FLOOR:
                flagged.append(label)
        else:
            discarded_res.append((label, float(np.linalg.norm(dm_psi))))
    worst = max(
        [r for _, r in retained_res] + [r for _, r in discarded_res],
        default=0.0,
    )
    return LosslessPerpVerdict(
        lossless=bool(worst <= tol and not flagged),
        tol=tol,
        retained_residuals=tuple(retained_res),
        discarded_residuals=tuple(discarded_res),
        flagged=tuple(flagged),
    )


@dataclass(frozen=True)
class GenericLosslessVerdict:
    """Gauge-free losslessness via the proportionality conditions.

    retained_residuals rows are (label, |<F_w> - <F_total><E_w>|); the
    discarded_residual is |<G_dis> - <F_total> conj(<F_dis>)|.  The
    imag_f_residuals rows (label, |Im<F_w>|) record the necessary
    stationary-weight condition on retained outcomes, which follows from
    the first condition when the total current is real.
    """

    lossless: bool
    tol: float
    retained_residuals: tuple
    discarded_residual: float
    imag_f_residuals: tuple


def check_lossless_generic(
    channel: MeasurementChannel,
    derivatives: Sequence,
    psi: Ket,
    tol: float = 1e-9,
) -> GenericLosslessVerdict:
    """Decide losslessness in whatever gauge the derivatives carry.

    The two conditions (every retained overlap current proportional to
    its weight through the total current, and the discarded derivative
    weight matching the total-current cross term) characterize lossless
    encodings without requiring a prior gauge fix.
    """
    rows6 = _contract(channel, derivatives, psi)
    per = [(label, e, f, g) for label, e, f, g, _, _ in rows6]
    f_total = sum((f for _, _, f, _ in per), 0j)
    retained_res = []
    imag_res = []
    f_dis = 0j
    g_dis = 0.0
    for label, e, f, g in per:
        if label in channel.retained:
            retained_res.append((label, float(abs(f - f_total * e))))
            imag_res.append((label, float(abs(f.imag))))
        else:
            f_dis += f
            g_dis += g
    discarded_res = float(abs(g_dis - f_total * f_dis.conjugate()))
    worst = max([r for _, r in retained_res] + [discarded_res], default=0.0)
    return GenericLosslessVerdict(
        lossless=bool(worst <= tol),
        tol=tol,
        retained_residuals=tuple(retained_res),
        discarded_residual=discarded_res,
        imag_f_residuals=tuple(imag_res),
    )


@dataclass(frozen=True)
class KappaResult:
    """Loss fraction of the retained record.

    kappa is the primary, gauge-invariant value 1 - avg_ps_qfi/i_q.
    kappa_formula is the closed-form ratio
    (<G_dis> - <F_total><F_dis>)/(<G_total> - <F_total>^2), which agrees
    with kappa exactly when every retained overlap current is
    proportional to its weight; condition_residual measures the worst
    violation of that proportionality and conditional marks results
    where the closed form only bounds validity rather than equals it.
    """

    kappa: float
    kappa_formula: float
    condition_residual: float
    conditional: bool


def loss_kappa(
    report: EfgReport,
    condition_tol: float = 1e-9,
    allow_approximate: bool = False,
) -> KappaResult:
    """Fraction of the total QFI lost by keeping only retained outcomes.

    Raises
    ------
    ValueError
        When the total QFI is zero (no information to lose) or the
        resulting kappa escapes [0, 1] beyond roundoff.
    """
    i_q = report.i_q
    if i_q is None:
        i_q = total_qfi(report, allow_approximate=allow_approximate)
    if i_q <= KAPPA_DENOM_FLOOR:
        raise ValueError("total QFI is zero; loss fraction undefined")
    kappa = 1.0 - report.avg_ps_qfi / i_q
    if not -1e-8 <= kappa <= 1.0 + 1e-8:
        raise ValueError(f"kappa {kappa} outside [0, 1] beyond roundoff")
    cond = max(
        (
            abs(f - report.f_total * e)
            for label, e, f, _ in report.per_outcome
            if label in report.retained
        ),
        default=0.0,
    )
    den = report.g_total - report.f_total.real**2
    num = report.g_discarded - (report.f_total * report.f_discarded.conjugate()).real
    return KappaResult(
        kappa=float(kappa),
        kappa_formula=float(num / den),
        condition_residual=float(cond),
        conditional=bool(cond > condition_tol),
    )


@dataclass(frozen=True)
class AmplificationReport:
    """Per-outcome conditional QFIs against the total.

    rows are (label, p, i_sigma, ratio) with ratio = p * i_sigma / i_q;
    dead outcomes (weight at or below the floor) are skipped.  The sum
    of ratios over retained outcomes is 1 - kappa.  strict_regime marks
    that every outcome weight sat strictly inside (0, 1), the situation
    in which some conditional QFI strictly exceeds the total.
    """

    rows: tuple
    i_q: float
    strict_regime: bool

    def ratio_sum(self) -> float:
        return sum(r for _, _, _, r in self.rows)


def amplification_report(
    channel: MeasurementChannel,
    derivatives: Sequence,
    psi: Ket,
) -> AmplificationReport:
    """Compare each outcome's conditional QFI with the total QFI."""
    report = efg(channel, derivatives, psi)
    i_q = total_qfi(report)
    if i_q <= KAPPA_DENOM_FLOOR:
        raise ValueError("total QFI is zero; amplification undefined")
    rows = []
    strict = True
    for label, e, f, g in report.per_outcome:
        if e <= P_FLOOR:
            strict = False
            continue
        if e >= 1.0 - P_FLOOR:
            strict = False
        share = _branch_share(e, f, g)
        rows.append((label, e, share / e, share / i_q))
    return AmplificationReport(rows=tuple(rows), i_q=i_q, strict_regime=strict)


def complete_report(
    channel: MeasurementChannel,
    derivatives: Sequence,
    psi: Ket,
    gauge: str = "as_given",
    allow_approximate: bool = False,
) -> EfgReport:
    """efg with i_q filled and, when i_q is nonzero, kappa filled too."""
    report = efg(channel, derivatives, psi, gauge=gauge)
    i_q = total_qfi(report, allow_approximate=allow_approximate)
    kappa = None
    if i_q > KAPPA_DENOM_FLOOR:
        filled = replace(report, i_q=i_q)
        kappa = loss_kappa(filled, allow_approximate=allow_approximate).kappa
    return replace(report, i_q=i_q, kappa=kappa)
