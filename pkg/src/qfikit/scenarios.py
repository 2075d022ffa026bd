"""Canonical worked examples and seeded random-instance generators.

The flip-transducer protocol freezes the probe's own dynamics and lets a
two-level section of the environment steer a conditional flip on the
probe; reading the environment in a mixed basis parameterized by eps
moves the signal between the two outcome branches without changing the
post-selected average. The dephasing builder wires a commuting jump
model into the collision machinery. The random generators supply exact
channels and differentiable families for property suites.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import expm, null_space

from .collision import CollisionSpec
from .encoding import amplification_report
from .quantum_core import (
    ChannelFamily,
    Ket,
    MeasurementChannel,
    Operator,
    kraus_from_dilation,
    spectral_norm,
)

__all__ = [
    "TransducerSpec",
    "two_qubit_transducer",
    "build_transducer",
    "Fig1bRow",
    "DEFAULT_EPS_GRID",
    "fig1b_sweep",
    "build_dephasing",
    "random_channel",
    "random_family",
]

#: Variance floor below which the environment pointer is undefined.
VAR_FLOOR = 1e-14

#: Default mixing grid for the two-outcome sweep.
DEFAULT_EPS_GRID = tuple(np.logspace(-3.0, 3.0, 41))


@dataclass(frozen=True)
class TransducerSpec:
    """Inputs of the conditional-flip transducer protocol.

    The environment generator is shifted at construction so its mean in
    the initial environment state vanishes; the flip gate must be
    unitary and must send the probe state to an orthogonal one.

    Parameters
    ----------
    h0_env : Operator
        Environment generator whose strength x is estimated.
    env_initial : Ket
        Initial environment state.
    sys_initial : Ket
        Probe state the flip acts on.
    flip : Operator
        Unitary with flip |psi> orthogonal to |psi| within 1e-10.
    T : float
        Sensing time.
    x : float
        Operating point of the parameter.
    eps : float
        Readout mixing between the pointer states, >= 0.
    """

    h0_env: Operator
    env_initial: Ket
    sys_initial: Ket
    flip: Operator
    T: float
    x: float
    eps: float

    def __post_init__(self):
        if self.h0_env.dim != self.env_initial.dim:
            raise ValueError(
                f"environment generator dim {self.h0_env.dim} does not match "
                f"state dim {self.env_initial.dim}"
            )
        if self.flip.dim != self.sys_initial.dim:
            raise ValueError(
                f"flip dim {self.flip.dim} does not match probe dim "
                f"{self.sys_initial.dim}"
            )
        if not self.h0_env.is_hermitian(1e-10):
            raise ValueError("environment generator is not Hermitian")
        if not self.flip.is_unitary(1e-10):
            raise ValueError("flip gate is not unitary")
        self.env_initial.require_normalized()
        self.sys_initial.require_normalized()
        overlap = abs(
            np.vdot(self.sys_initial.amplitudes,
                    self.flip.entries @ self.sys_initial.amplitudes)
        )
        if overlap > 1e-10:
            raise ValueError(
                f"flip must map the probe state to an orthogonal one; "
                f"overlap {overlap:.3e}"
            )
        if self.eps < 0.0:
            raise ValueError(f"mixing must be nonnegative, got {self.eps}")
        mean = self.h0_env.expectation(self.env_initial).real
        shifted = self.h0_env.entries - mean * np.eye(self.h0_env.dim)
        object.__setattr__(self, "h0_env", Operator(shifted))

    def env_variance(self) -> float:
        """Variance of the (shifted) generator in the initial state."""
        hit = self.h0_env.entries @ self.env_initial.amplitudes
        return float(np.vdot(hit, hit).real)


def two_qubit_transducer(T: float = 1.0, x: float = 1e-5,
                         eps: float = 1.0) -> TransducerSpec:
    """The minimal instance: qubit environment, qubit probe, X flip."""
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    return TransducerSpec(
        h0_env=Operator(sz),
        env_initial=Ket(np.array([1.0, 1.0]) / np.sqrt(2.0)),
        sys_initial=Ket([1.0, 0.0]),
        flip=Operator(sx),
        T=T,
        x=x,
        eps=eps,
    )


def _pointer_basis(spec: TransducerSpec):
    """Initial state, conjugate pointer, and the full readout basis."""
    phi = spec.env_initial.amplitudes
    var = spec.env_variance()
    if var <= VAR_FLOOR:
        raise ValueError(
            "environment generator variance vanishes; the conjugate pointer "
            "state is undefined"
        )
    perp = (spec.h0_env.entries @ phi) / np.sqrt(var)
    norm = 1.0 / np.sqrt(1.0 + spec.eps**2)
    v1 = (phi + spec.eps * perp) * norm
    v2 = (perp - spec.eps * phi) * norm
    vectors = [v1, v2]
    if spec.env_initial.dim > 2:
        rest = null_space(np.stack([v1.conj(), v2.conj()]))
        vectors.extend(rest[:, k] for k in range(rest.shape[1]))
    return phi, perp, var, vectors


def _interaction_unitary(spec: TransducerSpec, perp: np.ndarray) -> np.ndarray:
    dim_s, dim_e = spec.sys_initial.dim, spec.env_initial.dim
    perp_proj = np.outer(perp, perp.conj())
    return np.kron(np.eye(dim_s), np.eye(dim_e) - perp_proj) + np.kron(
        spec.flip.entries, perp_proj
    )


def _check_weak_signal_condition(spec, u_int, phi, perp, vectors):
    """The readout must not couple the pointer states through the probe.

    For every outcome the matrix element between the evolved (psi, phi)
    and (psi, perp) branches has to vanish; this is what makes the
    interaction transduce only the signal-rotated component.
    """
    dim_s, dim_e = spec.sys_initial.dim, spec.env_initial.dim
    a = (u_int @ np.kron(spec.sys_initial.amplitudes, phi)).reshape(dim_s, dim_e)
    b = (u_int @ np.kron(spec.sys_initial.amplitudes, perp)).reshape(dim_s, dim_e)
    for w, v in enumerate(vectors):
        val = np.vdot(a @ v.conj(), b @ v.conj())
        if abs(val) > 1e-10:
            raise ValueError(
                f"readout outcome {w + 1} couples the pointer states: "
                f"matrix element {abs(val):.3e}"
            )


def build_transducer(spec: TransducerSpec, retained=None):
    """Differentiable channel family of the transducer readout.

    Returns the family together with the total information the exact
    joint evolution carries, 4 T^2 times the generator variance. Outcome
    labels count from "1"; with an environment larger than two levels
    the readout basis is completed orthonormally past the two pointer
    mixtures. By default every outcome is retained.
    """
    phi, perp, var, vectors = _pointer_basis(spec)
    u_int = _interaction_unitary(spec, perp)
    _check_weak_signal_condition(spec, u_int, phi, perp, vectors)

    dim_s, dim_e = spec.sys_initial.dim, spec.env_initial.dim
    labels = [str(w + 1) for w in range(dim_e)]
    keep = frozenset(labels if retained is None else retained)
    basis_kets = [Ket(v) for v in vectors]
    basis = np.stack(vectors)
    h_env = spec.h0_env.entries
    t_total = spec.T

    def joint(x):
        rot = expm(-1j * x * t_total * h_env)
        return u_int @ np.kron(np.eye(dim_s), rot)

    def at(x):
        return kraus_from_dilation(
            Operator(joint(x)), spec.env_initial, basis_kets,
            retained=keep, labels=labels,
        )

    def deriv(x):
        rot = expm(-1j * x * t_total * h_env)
        du = u_int @ np.kron(np.eye(dim_s), -1j * t_total * h_env @ rot)
        du4 = du.reshape(dim_s, dim_e, dim_s, dim_e)
        mats = np.einsum("we,aebf,f->wab", basis.conj(), du4, phi)
        return tuple((lbl, Operator(m)) for lbl, m in zip(labels, mats))

    family = ChannelFamily(eval=at, derivative=deriv)
    return family, 4.0 * t_total**2 * var


class Fig1bRow(NamedTuple):
    """One mixing point of the two-outcome information sweep."""

    eps: float
    i_sigma_1: float
    i_sigma_2: float
    avg_total: float
    sum_total: float


def fig1b_sweep(spec: TransducerSpec, eps_grid=None) -> tuple:
    """Sweep the readout mixing and tabulate the per-outcome information.

    Each row reports the two conditional-state informations, their
    probability-weighted total, and their plain sum at the spec's
    operating point. The weighted total stays pinned at the joint value
    while the mixing hands the signal from one branch to the other.
    """
    grid = DEFAULT_EPS_GRID if eps_grid is None else tuple(eps_grid)
    rows = []
    for eps in grid:
        family, _ = build_transducer(replace(spec, eps=float(eps)))
        chan = family.eval(spec.x)
        derivs = family.derivative(spec.x)
        amp = amplification_report(chan, derivs, spec.sys_initial)
        per = {label: i_sigma for label, _, i_sigma, _ in amp.rows}
        avg_total = amp.i_q * amp.ratio_sum()
        rows.append(
            Fig1bRow(
                eps=float(eps),
                i_sigma_1=per.get("1", 0.0),
                i_sigma_2=per.get("2", 0.0),
                avg_total=avg_total,
                sum_total=sum(per.values()),
            )
        )
    return tuple(rows)


def build_dephasing(H0: Operator, H1, L: Operator, gamma: float, T: float,
                    psi: Ket, x: float) -> CollisionSpec:
    """Commuting jump model with a multiplicative estimation generator.

    All of H0, the control at every sampled time, and L must commute
    pairwise within 1e-10, which is what reduces the loss to the
    closed decay-weighted-variance form.
    """
    if gamma < 0.0:
        raise ValueError(f"rate must be nonnegative, got {gamma}")
    if T <= 0.0:
        raise ValueError(f"probe time must be positive, got {T}")
    dim = H0.dim
    if L.dim != dim or psi.dim != dim:
        raise ValueError(
            f"dimension mismatch: generator {dim}, jump {L.dim}, state {psi.dim}"
        )
    psi.require_normalized()
    if not H0.is_hermitian(1e-10):
        raise ValueError("estimation generator is not Hermitian")

    def commutes(a, b):
        return spectral_norm(a @ b - b @ a) <= 1e-10

    if not commutes(H0.entries, L.entries):
        raise ValueError("estimation generator and jump operator do not commute")
    for t in (0.0, T / 2.0, T):
        control = H1(t)
        if not control.is_hermitian(1e-10):
            raise ValueError(f"control is not Hermitian at t={t:.6g}")
        if not commutes(H0.entries, control.entries):
            raise ValueError(f"control does not commute with the generator at t={t:.6g}")
        if not commutes(L.entries, control.entries):
            raise ValueError(f"control does not commute with the jump at t={t:.6g}")

    return CollisionSpec(
        h0=lambda t, xx: Operator(xx * H0.entries),
        h1=H1,
        jumps=((L, lambda t: gamma),),
        dim=dim,
        dh0=lambda t, xx: H0,
    )


def _haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a Ginibre matrix."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (g + g.conj().T) / 2.0


def random_channel(dim: int, n_outcomes: int, seed: int,
                   retained=None) -> MeasurementChannel:
    """Exact channel from the row blocks of a seeded Haar unitary."""
    if dim < 2 or n_outcomes < 1:
        raise ValueError(
            f"need dim >= 2 and n_outcomes >= 1, got {dim}, {n_outcomes}"
        )
    rng = np.random.default_rng(seed)
    u = _haar_unitary(dim * n_outcomes, rng)
    kraus = tuple(
        (str(w), Operator(u[w * dim:(w + 1) * dim, :dim]))
        for w in range(n_outcomes)
    )
    labels = [lbl for lbl, _ in kraus]
    return MeasurementChannel(
        kraus=kraus,
        retained=frozenset(labels if retained is None else retained),
    )


def random_family(dim: int, n_outcomes: int, seed: int,
                  retained=None) -> ChannelFamily:
    """Differentiable exact family: Haar mixer times a random rotation.

    The generator acts before the mixer, so each slice is the seed
    channel's block times exp(-i x H) and the channel stays exact at
    every x; the analytic derivative is supplied alongside.
    """
    if dim < 2 or n_outcomes < 1:
        raise ValueError(
            f"need dim >= 2 and n_outcomes >= 1, got {dim}, {n_outcomes}"
        )
    rng = np.random.default_rng(seed)
    u0 = _haar_unitary(dim * n_outcomes, rng)
    h = _random_hermitian(dim, rng)
    labels = [str(w) for w in range(n_outcomes)]
    keep = frozenset(labels if retained is None else retained)

    def at(x):
        core = u0 @ np.kron(np.eye(n_outcomes), expm(-1j * x * h))
        return MeasurementChannel(
            kraus=tuple(
                (lbl, Operator(core[w * dim:(w + 1) * dim, :dim]))
                for w, lbl in enumerate(labels)
            ),
            retained=keep,
        )

    def deriv(x):
        core = u0 @ np.kron(np.eye(n_outcomes), -1j * h @ expm(-1j * x * h))
        return tuple(
            (lbl, Operator(core[w * dim:(w + 1) * dim, :dim]))
            for w, lbl in enumerate(labels)
        )

    return ChannelFamily(eval=at, derivative=deriv)
