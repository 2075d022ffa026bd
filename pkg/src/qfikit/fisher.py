"""Quantum and classical Fisher information estimators.

Pure-state QFI, mixed-state QFI via the symmetric logarithmic derivative,
classical Fisher information of outcome distributions, the measured-pair
(system plus record) QFI decomposition, the derivative engine for channel
families, and the refined convexity inequality check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .quantum_core import (
    ChannelFamily,
    Ket,
    MeasurementChannel,
    Operator,
    mixed_state,
    spectral_norm,
)

__all__ = [
    "P_FLOOR",
    "DP_FLOOR",
    "DerivativeConfig",
    "SldResult",
    "FamilyDerivative",
    "OutcomeQfi",
    "SigmaSeResult",
    "RefinedConvexityReport",
    "pure_qfi",
    "sld",
    "classical_fi",
    "family_derivative",
    "sigma_se_qfi",
    "refined_convexity_check",
]

#: below this probability an outcome is treated as dead
P_FLOOR = 1e-12

#: a dead outcome whose state derivative norm exceeds this is singular
DP_FLOOR = 1e-9


@dataclass(frozen=True)
class DerivativeConfig:
    """How to differentiate a channel family over x.

    mode is `analytic` or `central_fd`; h of None means the default step
    1e-5 * max(1, |x|); richardson toggles one step-halving refinement of
    the central difference.
    """

    mode: str = "analytic"
    h: Optional[float] = None
    richardson: bool = True

    def __post_init__(self):
        if self.mode not in ("analytic", "central_fd"):
            raise ValueError(f"unknown derivative mode {self.mode!r}")
        if self.h is not None and not self.h > 0:
            raise ValueError("finite-difference step must be positive")

    def step(self, x: float) -> float:
        return self.h if self.h is not None else 1e-5 * max(1.0, abs(x))


@dataclass(frozen=True)
class SldResult:
    """Symmetric logarithmic derivative and the QFI it certifies."""

    L: Operator
    support_cutoff: float
    qfi: float


@dataclass(frozen=True)
class FamilyDerivative:
    """Per-outcome x-derivatives plus a truncation-error estimate."""

    terms: tuple
    mode: str
    truncation_error: Optional[float] = None

    def as_dict(self) -> dict:
        return dict(self.terms)


@dataclass(frozen=True)
class OutcomeQfi:
    """One outcome's share of the measured-pair QFI.

    i_sigma is the QFI of the normalized conditional state, i_cl the
    classical Fisher information of the outcome weight, and i_joint their
    combination p * i_sigma + i_cl.
    """

    label: str
    p: float
    i_sigma: float
    i_cl: float
    i_joint: float


@dataclass(frozen=True)
class SigmaSeResult:
    total: float
    per_outcome: tuple
    singular: tuple


@dataclass(frozen=True)
class RefinedConvexityReport:
    """Per-POVM-element chain J_cl <= J(rho) <= J(sigma_SE).

    rows holds (index, J_cl, J_rho, J_sigma_se) per POVM element.
    worst_lower_margin is min(J_rho - J_cl), worst_upper_margin is
    min(J_sigma_se - J_rho), worst_outer_margin is min(J_sigma_se - J_cl).

    Caution: only the two J_cl-anchored links are guaranteed for every
    PSD element (each follows from a Cauchy-Schwarz bound), together with
    the summed identity sum_mu J_rho = QFI(rho) <= QFI(sigma_SE) =
    sum_mu J_sigma_se.  The per-element middle link J_rho <= J_sigma_se
    is only guaranteed at a measurement saturating the classical bound
    (there J_cl = J_rho) and fails for generic POVM elements, so ok()
    can legitimately return False on valid inputs.
    """

    rows: tuple
    worst_lower_margin: float
    worst_upper_margin: float
    worst_outer_margin: float

    def ok(self, slack: float = 1e-8) -> bool:
        return self.worst_lower_margin >= -slack and self.worst_upper_margin >= -slack

    def outer_ok(self, slack: float = 1e-8) -> bool:
        """Check only the two universally valid J_cl-anchored links."""
        return self.worst_lower_margin >= -slack and self.worst_outer_margin >= -slack


def pure_qfi(psi: Ket, dpsi: Ket) -> float:
    """QFI of a pure state family, 4(<dpsi|dpsi> - |<psi|dpsi>|^2).

    psi must be normalized; dpsi is the x-derivative of the state vector.
    The result is clamped to zero from below (rounding can leave a
    residual around -1e-16 for gauge directions).
    """
    psi.require_normalized()
    if psi.dim != dpsi.dim:
        raise ValueError(f"dimension mismatch: {psi.dim} vs {dpsi.dim}")
    dd = np.vdot(dpsi.amplitudes, dpsi.amplitudes).real
    overlap = np.vdot(psi.amplitudes, dpsi.amplitudes)
    value = 4.0 * (dd - abs(overlap) ** 2)
    if value < -1e-10:
        raise ValueError(f"pure QFI evaluated to {value:.3e}; inputs are inconsistent")
    return max(value, 0.0)


def sld(rho: Operator, drho: Operator, cutoff: Optional[float] = None) -> SldResult:
    """SLD of a state family and the mixed-state QFI Tr(rho L^2).

    L is assembled in rho's eigenbasis via L_ij = 2 (drho)_ij / (w_i + w_j)
    on eigenvalue pairs above the cutoff (default 1e-10 times the trace
    scale); pairs below it are zeroed.

    Raises
    ------
    ValueError
        Non-Hermitian inputs, non-PSD rho, trace defects, or a
        reconstruction residual above 1e-8 on the retained support.
    """
    if not rho.is_hermitian(1e-10):
        raise ValueError("rho is not Hermitian within 1e-10")
    if not drho.is_hermitian(1e-10):
        raise ValueError("drho is not Hermitian within 1e-10")
    tr = rho.entries.trace().real
    if abs(tr - 1.0) > 1e-8:
        raise ValueError(f"rho trace {tr!r} is not 1 within 1e-8")
    if abs(drho.entries.trace()) > 1e-8:
        raise ValueError("drho is not traceless within 1e-8")
    w = np.linalg.eigvalsh(rho.entries)
    if w.min() < -1e-10:
        raise ValueError(f"rho has negative eigenvalue {w.min():.3e}")
    if cutoff is None:
        cutoff = 1e-10 * max(tr, 1.0)
    w, v = np.linalg.eigh(rho.entries)
    drho_eig = v.conj().T @ drho.entries @ v
    pair_sums = w[:, None] + w[None, :]
    live = pair_sums > cutoff
    l_eig = np.zeros_like(drho_eig)
    l_eig[live] = 2.0 * drho_eig[live] / pair_sums[live]
    # QFI in the eigenbasis: sum_ij w_i |L_ij|^2
    qfi = float(np.einsum("i,ij->", w, np.abs(l_eig) ** 2).real)
    recon = (l_eig * w[None, :] + w[:, None] * l_eig) / 2.0
    gap = np.where(live, recon - drho_eig, 0.0)
    scale = max(1.0, spectral_norm(drho.entries))
    if spectral_norm(gap) > 1e-8 * scale:
        raise ValueError("SLD reconstruction failed on the retained eigensupport")
    l_mat = v @ l_eig @ v.conj().T
    return SldResult(L=Operator(l_mat), support_cutoff=float(cutoff), qfi=qfi)


def classical_fi(p: float, dp: float) -> float:
    """Classical Fisher information dp^2 / p of one outcome weight.

    A dead outcome (p at or below the floor) contributes zero when its
    weight derivative also vanishes, and raises otherwise: the Fisher
    information of a vanishing-probability outcome with live sensitivity
    diverges.
    """
    if p < 0.0 or p > 1.0 + 1e-9:
        raise ValueError(f"probability {p!r} outside [0, 1]")
    if p <= P_FLOOR:
        if abs(dp) <= DP_FLOOR:
            return 0.0
        raise ValueError(
            f"singular outcome: p = {p:.3e} at the floor but dp = {dp:.3e} is live"
        )
    return dp * dp / p


def family_derivative(
    family: ChannelFamily, x: float, cfg: Optional[DerivativeConfig] = None
) -> FamilyDerivative:
    """Per-outcome derivatives dM_w/dx of a channel family.

    Analytic mode passes the family's own derivative through. Central FD
    evaluates (M(x+h) - M(x-h)) / 2h and, with richardson enabled,
    combines steps h and h/2 to cancel the leading truncation term. The
    reported truncation error is the Richardson-difference estimate.
    """
    if cfg is None:
        cfg = DerivativeConfig(mode="analytic" if family.derivative is not None else "central_fd")
    if cfg.mode == "analytic":
        if family.derivative is None:
            raise ValueError("family carries no analytic derivative")
        terms = tuple((str(lbl), op) for lbl, op in family.derivative(x))
        return FamilyDerivative(terms=terms, mode="analytic", truncation_error=0.0)

    h = cfg.step(x)
    if family.fd_step is not None and cfg.h is None:
        h = family.fd_step

    def central(step):
        plus = family.eval(x + step)
        minus = family.eval(x - step)
        return {
            lbl: (plus.operator(lbl).entries - minus.operator(lbl).entries) / (2.0 * step)
            for lbl in plus.labels
        }

    d_h = central(h)
    if not cfg.richardson:
        terms = tuple((lbl, Operator(m)) for lbl, m in d_h.items())
        return FamilyDerivative(terms=terms, mode="central_fd", truncation_error=None)
    d_half = central(h / 2.0)
    combined = {}
    worst_gap = 0.0
    for lbl, coarse in d_h.items():
        fine = d_half[lbl]
        combined[lbl] = (4.0 * fine - coarse) / 3.0
        worst_gap = max(worst_gap, float(np.max(np.abs(fine - coarse))))
    terms = tuple((lbl, Operator(m)) for lbl, m in combined.items())
    return FamilyDerivative(terms=terms, mode="central_fd", truncation_error=worst_gap / 3.0)


def _conditional_state_and_derivative(m: np.ndarray, dm: np.ndarray, psi: np.ndarray):
    """Normalized conditional state, its derivative, p, dp, and ||d tilde||.

    Differentiates the normalized state sigma = tilde / sqrt(p) rather
    than the raw branch vector, so the returned pair feeds pure_qfi
    directly.
    """
    tilde = m @ psi
    dtilde = dm @ psi
    p = float(np.vdot(tilde, tilde).real)
    dp = 2.0 * float(np.vdot(tilde, dtilde).real)
    if p <= P_FLOOR:
        return None, None, p, dp, float(np.linalg.norm(dtilde))
    s = tilde / np.sqrt(p)
    ds = dtilde / np.sqrt(p) - tilde * (dp / (2.0 * p**1.5))
    return s, ds, p, dp, float(np.linalg.norm(dtilde))


def sigma_se_qfi(
    channel: MeasurementChannel,
    family: ChannelFamily,
    psi: Ket,
    x: float,
    cfg: Optional[DerivativeConfig] = None,
) -> SigmaSeResult:
    """QFI of the measured system-record pair, outcome by outcome.

    Per outcome this lists (p, I(sigma), I_cl, joint share); the total is
    the sum of p * I(sigma) + I_cl over live outcomes. Dead outcomes with
    live derivative norm are excluded from the total and reported in
    `singular` instead.
    """
    psi.require_normalized()
    if channel.kind != "exact":
        raise ValueError(
            f"channel is approximate (residual {channel.completeness_residual:.3e}); "
            "the decomposition needs an exact outcome resolution"
        )
    derivs = family_derivative(family, x, cfg).as_dict()
    rows = []
    singular = []
    total = 0.0
    for label, op in channel.kraus:
        s, ds, p, dp, dtilde_norm = _conditional_state_and_derivative(
            op.entries, derivs[label].entries, psi.amplitudes
        )
        if s is None:
            if dtilde_norm > DP_FLOOR:
                singular.append(label)
                continue
            rows.append(OutcomeQfi(label=label, p=p, i_sigma=0.0, i_cl=0.0, i_joint=0.0))
            continue
        i_sigma = pure_qfi(Ket(s), Ket(ds))
        i_cl = classical_fi(min(p, 1.0), dp)
        joint = p * i_sigma + i_cl
        rows.append(OutcomeQfi(label=label, p=p, i_sigma=i_sigma, i_cl=i_cl, i_joint=joint))
        total += joint
    return SigmaSeResult(total=total, per_outcome=tuple(rows), singular=tuple(singular))


def refined_convexity_check(
    channel: MeasurementChannel,
    family: ChannelFamily,
    psi: Ket,
    x: float,
    povm: Sequence[Operator],
    cfg: Optional[DerivativeConfig] = None,
) -> RefinedConvexityReport:
    """Check J_cl(E) <= J_rho(E) <= J_sigmaSE(E) for each POVM element.

    J_cl is the classical information of the element's weight, J_rho the
    SLD-sandwich Tr(rho L E L), and J_sigmaSE its refinement over the
    record-resolved pair, using the block SLD (dp/p) I + 2 dsigma of each
    pure conditional branch.

    Raises
    ------
    ValueError
        POVM elements that are not PSD or do not resolve the identity
        within 1e-10.
    """
    psi.require_normalized()
    dim = channel.dim
    acc = np.zeros((dim, dim), dtype=np.complex128)
    for e in povm:
        if not e.is_psd(1e-10):
            raise ValueError("POVM element is not positive semidefinite")
        acc += e.entries
    if spectral_norm(acc - np.eye(dim)) > 1e-10:
        raise ValueError("POVM does not resolve the identity within 1e-10")

    derivs = family_derivative(family, x, cfg).as_dict()
    rho = mixed_state(channel, psi)
    proj = np.outer(psi.amplitudes, psi.amplitudes.conj())
    drho = np.zeros((dim, dim), dtype=np.complex128)
    for label, op in channel.kraus:
        dm = derivs[label].entries
        drho += dm @ proj @ op.entries.conj().T + op.entries @ proj @ dm.conj().T
    l_rho = sld(rho, Operator(drho)).L.entries

    # per-branch block SLDs of the record-resolved state
    branch_terms = []
    for label, op in channel.kraus:
        s, ds, p, dp, dtilde_norm = _conditional_state_and_derivative(
            op.entries, derivs[label].entries, psi.amplitudes
        )
        if s is None:
            if dtilde_norm > DP_FLOOR:
                raise ValueError(f"outcome {label!r} is singular; chain undefined")
            continue
        sigma = np.outer(s, s.conj())
        dsigma = np.outer(ds, s.conj()) + np.outer(s, ds.conj())
        l_block = (dp / p) * np.eye(dim) + 2.0 * dsigma
        branch_terms.append((p, sigma, l_block))

    rows = []
    worst_lower = np.inf
    worst_upper = np.inf
    worst_outer = np.inf
    for mu, e in enumerate(povm):
        p_mu = float(np.trace(rho.entries @ e.entries).real)
        dp_mu = float(np.trace(drho @ e.entries).real)
        j_cl = classical_fi(min(max(p_mu, 0.0), 1.0), dp_mu)
        j_rho = float(np.trace(rho.entries @ l_rho @ e.entries @ l_rho).real)
        j_sigma = sum(
            p * float(np.trace(sigma @ lb @ e.entries @ lb).real)
            for p, sigma, lb in branch_terms
        )
        rows.append((mu, j_cl, j_rho, j_sigma))
        worst_lower = min(worst_lower, j_rho - j_cl)
        worst_upper = min(worst_upper, j_sigma - j_rho)
        worst_outer = min(worst_outer, j_sigma - j_cl)
    return RefinedConvexityReport(
        rows=tuple(rows),
        worst_lower_margin=float(worst_lower),
        worst_upper_margin=float(worst_upper),
        worst_outer_margin=float(worst_outer),
    )
