"""Dense complex linear algebra and the channel/state data model.

Provides immutable kets and operators (complex128 throughout), labeled
Kraus measurement channels with a retained/discarded outcome split, and
differentiable channel families. Residuals are measured in spectral norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Ket",
    "Operator",
    "MeasurementChannel",
    "ChannelFamily",
    "tensor",
    "kraus_from_dilation",
    "apply_channel_outcome",
    "outcome_probabilities",
    "mixed_state",
    "hermitian_eig",
    "spectral_norm",
    "check_family_derivative",
]

#: spectral-norm residual below which a channel counts as exact
EXACT_RESIDUAL_TOL = 1e-10

#: |norm^2 - 1| bound for a ket to count as normalized
NORMALIZED_TOL = 1e-12


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value of a matrix (2-norm)."""
    return float(np.linalg.norm(a, 2))


def _as_complex_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128).reshape(-1).copy()
    arr.flags.writeable = False
    return arr


def _as_complex_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Ket:
    """Complex state vector.

    Parameters
    ----------
    amplitudes : array_like
        Probability amplitudes, flattened to one dimension.
    dim : int, optional
        Expected dimension; defaults to the amplitude count.
    """

    amplitudes: np.ndarray
    dim: int = 0

    def __post_init__(self):
        amps = _as_complex_vector(self.amplitudes)
        object.__setattr__(self, "amplitudes", amps)
        dim = self.dim or amps.size
        if dim < 1 or dim != amps.size:
            raise ValueError(f"dim {dim} does not match {amps.size} amplitudes")
        object.__setattr__(self, "dim", int(dim))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def normalized(self) -> bool:
        """True when the squared norm is within 1e-12 of one."""
        return abs(self.norm**2 - 1.0) <= NORMALIZED_TOL

    def require_normalized(self) -> "Ket":
        if not self.normalized:
            raise ValueError(f"ket is not normalized: |psi|^2 = {self.norm**2!r}")
        return self

    def unit(self) -> "Ket":
        """Return the normalized copy of this ket."""
        n = self.norm
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return Ket(self.amplitudes / n)


@dataclass(frozen=True)
class Operator:
    """Square complex matrix with tolerance-aware structure helpers."""

    entries: np.ndarray
    dim: int = 0

    def __post_init__(self):
        mat = _as_complex_matrix(self.entries)
        object.__setattr__(self, "entries", mat)
        dim = self.dim or mat.shape[0]
        if dim != mat.shape[0]:
            raise ValueError(f"dim {dim} does not match entry grid {mat.shape}")
        object.__setattr__(self, "dim", int(dim))

    @property
    def dag(self) -> "Operator":
        return Operator(self.entries.conj().T)

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return spectral_norm(self.entries - self.entries.conj().T) <= tol

    def is_unitary(self, tol: float = 1e-10) -> bool:
        d = self.entries.conj().T @ self.entries - np.eye(self.dim)
        return spectral_norm(d) <= tol

    def is_psd(self, tol: float = 1e-10) -> bool:
        if not self.is_hermitian(tol):
            return False
        w = np.linalg.eigvalsh(self.entries)
        return bool(w.min() >= -tol)

    def expectation(self, psi: Ket) -> complex:
        """<psi| A |psi> without normalizing psi."""
        v = psi.amplitudes
        return complex(np.vdot(v, self.entries @ v))


@dataclass(frozen=True)
class MeasurementChannel:
    """Labeled Kraus set {M_w} with a retained/discarded outcome split.

    The completeness residual ||sum M^+ M - 1|| (spectral norm) is computed
    at construction. A channel with residual at most 1e-10 is `exact`;
    collision-model channels carry a residual of order T*dt and are
    `approximate`.
    """

    kraus: tuple
    retained: frozenset
    completeness_residual: float = field(default=-1.0)

    def __post_init__(self):
        kraus = tuple((str(label), op) for label, op in self.kraus)
        if not kraus:
            raise ValueError("channel needs at least one Kraus operator")
        labels = [label for label, _ in kraus]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate outcome labels")
        dims = {op.dim for _, op in kraus}
        if len(dims) != 1:
            raise ValueError(f"Kraus operators disagree on dimension: {dims}")
        retained = frozenset(str(s) for s in self.retained)
        unknown = retained - set(labels)
        if unknown:
            raise ValueError(f"retained labels not in channel: {sorted(unknown)}")
        object.__setattr__(self, "kraus", kraus)
        object.__setattr__(self, "retained", retained)
        if self.completeness_residual < 0:
            acc = sum(op.entries.conj().T @ op.entries for _, op in kraus)
            res = spectral_norm(acc - np.eye(kraus[0][1].dim))
            object.__setattr__(self, "completeness_residual", res)

    @property
    def dim(self) -> int:
        return self.kraus[0][1].dim

    @property
    def labels(self) -> tuple:
        return tuple(label for label, _ in self.kraus)

    @property
    def discarded(self) -> frozenset:
        return frozenset(self.labels) - self.retained

    @property
    def kind(self) -> str:
        """Either `exact` or `approximate`, from the completeness residual."""
        return "exact" if self.completeness_residual <= EXACT_RESIDUAL_TOL else "approximate"

    def operator(self, label: str) -> Operator:
        for cand, op in self.kraus:
            if cand == label:
                return op
        raise KeyError(f"no outcome labeled {label!r}")


@dataclass(frozen=True)
class ChannelFamily:
    """Differentiable map x -> MeasurementChannel with stable labels.

    Parameters
    ----------
    eval : callable
        Maps a real x to the channel at x. Labels and the retained set
        must not change across x.
    derivative : callable, optional
        Analytic x -> ((label, dM/dx), ...) aligned with eval's labels.
        When absent, consumers fall back to central finite differences.
    fd_step : float, optional
        Preferred finite-difference step; None means the consumer default
        1e-5 * max(1, |x|).
    """

    eval: Callable[[float], MeasurementChannel]
    derivative: Optional[Callable[[float], tuple]] = None
    fd_step: Optional[float] = None


def tensor(a, b):
    """Kronecker product of two kets or two operators.

    Raises
    ------
    TypeError
        When the operands are not both kets or both operators.
    """
    if isinstance(a, Ket) and isinstance(b, Ket):
        return Ket(np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, Operator) and isinstance(b, Operator):
        return Operator(np.kron(a.entries, b.entries))
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def kraus_from_dilation(
    u_se: Operator,
    env_initial: Ket,
    env_basis: Sequence[Ket],
    retained=None,
    labels: Optional[Sequence[str]] = None,
) -> MeasurementChannel:
    """Extract the Kraus operators of a system-environment dilation.

    With the joint unitary acting on system (x) environment and the
    environment read out in `env_basis`, outcome w gets the operator
    M_w = <pi_w| U |phi_init>, contracted over the environment slot.

    Parameters
    ----------
    u_se : Operator
        Joint evolution on dim_S * dim_E.
    env_initial : Ket
        Environment start state |phi_init>.
    env_basis : sequence of Ket
        Orthonormal readout basis {|pi_w>}, spanning the environment.
    retained : iterable of str, optional
        Retained outcome labels; defaults to all outcomes.
    labels : sequence of str, optional
        Outcome labels; defaults to "0", "1", ...

    Raises
    ------
    ValueError
        Non-orthonormal basis, dimension mismatch, or a unitary dilation
        whose extracted channel misses completeness at 1e-9.
    """
    dim_e = env_initial.dim
    if len(env_basis) != dim_e:
        raise ValueError(f"need {dim_e} basis kets to span the environment, got {len(env_basis)}")
    if any(k.dim != dim_e for k in env_basis):
        raise ValueError("environment basis dimension mismatch")
    basis = np.stack([k.amplitudes for k in env_basis])
    gram = basis.conj() @ basis.T
    if spectral_norm(gram - np.eye(dim_e)) > 1e-10:
        raise ValueError("environment basis is not orthonormal within 1e-10")
    if u_se.dim % dim_e != 0:
        raise ValueError(f"joint dimension {u_se.dim} not divisible by environment dimension {dim_e}")
    dim_s = u_se.dim // dim_e
    u4 = u_se.entries.reshape(dim_s, dim_e, dim_s, dim_e)
    # M_w[a, b] = sum_{e, f} conj(pi_w[e]) U[a, e, b, f] phi[f]
    mats = np.einsum("we,aebf,f->wab", basis.conj(), u4, env_initial.amplitudes)
    if labels is None:
        labels = [str(i) for i in range(dim_e)]
    elif len(labels) != dim_e:
        raise ValueError("label count must match basis size")
    kraus = tuple((str(lbl), Operator(m)) for lbl, m in zip(labels, mats))
    channel = MeasurementChannel(
        kraus=kraus,
        retained=frozenset(str(lbl) for lbl in labels) if retained is None else frozenset(retained),
    )
    if u_se.is_unitary(1e-10) and channel.completeness_residual > 1e-9:
        raise ValueError(
            f"unitary dilation produced completeness residual {channel.completeness_residual:.3e} > 1e-9"
        )
    return channel


def apply_channel_outcome(m: Operator, psi: Ket):
    """Unnormalized conditional state and outcome probability.

    Returns
    -------
    (Ket, float)
        tilde_psi = M|psi> (unnormalized) and p = ||tilde_psi||^2. For an
        exact channel the probabilities over all outcomes sum to one; an
        approximate channel inflates them by its completeness residual.
    """
    psi.require_normalized()
    if m.dim != psi.dim:
        raise ValueError(f"operator dim {m.dim} does not match ket dim {psi.dim}")
    tilde = m.entries @ psi.amplitudes
    p = float(np.vdot(tilde, tilde).real)
    return Ket(tilde), p


def outcome_probabilities(channel: MeasurementChannel, psi: Ket):
    """All (label, probability) pairs of a channel applied to psi."""
    return [(label, apply_channel_outcome(op, psi)[1]) for label, op in channel.kraus]


def mixed_state(channel: MeasurementChannel, psi: Ket) -> Operator:
    """Decohered output state rho = sum_w M_w |psi><psi| M_w^+.

    The trace must land within completeness_residual + 1e-10 of one.
    """
    psi.require_normalized()
    if channel.dim != psi.dim:
        raise ValueError("channel and state dimension mismatch")
    rho = np.zeros((channel.dim, channel.dim), dtype=np.complex128)
    for _, op in channel.kraus:
        branch = op.entries @ psi.amplitudes
        rho += np.outer(branch, branch.conj())
    trace_err = abs(rho.trace().real - 1.0)
    budget = channel.completeness_residual + 1e-10
    if trace_err > budget:
        raise ValueError(f"mixed state trace off by {trace_err:.3e}, budget {budget:.3e}")
    return Operator(rho)


def hermitian_eig(a: Operator):
    """Eigendecomposition of a Hermitian operator, eigenvalues ascending.

    Returns
    -------
    (numpy.ndarray, Operator)
        Real eigenvalues w (ascending) and the unitary V of column
        eigenvectors with A = V diag(w) V^+.
    """
    herm_dev = spectral_norm(a.entries - a.entries.conj().T)
    if herm_dev > 1e-10:
        raise ValueError(f"operator is not Hermitian: ||A - A^+|| = {herm_dev:.3e}")
    w, v = np.linalg.eigh(a.entries)
    recon = spectral_norm(v @ np.diag(w) @ v.conj().T - a.entries)
    scale = spectral_norm(a.entries)
    if recon > 1e-10 * scale + 1e-30:
        raise ValueError(f"eigendecomposition reconstruction residual {recon:.3e}")
    return w, Operator(v)


def check_family_derivative(family: ChannelFamily, x: float, h: Optional[float] = None) -> float:
    """Worst entrywise gap between the analytic derivative and central FD.

    Used as the spot check that an analytic derivative is trustworthy:
    the gap should stay below max(1e-6, 1e3 * h^2).
    """
    if family.derivative is None:
        raise ValueError("family carries no analytic derivative to check")
    if h is None:
        h = family.fd_step or 1e-5 * max(1.0, abs(x))
    plus = family.eval(x + h)
    minus = family.eval(x - h)
    analytic = dict(family.derivative(x))
    worst = 0.0
    for label, op_plus in plus.kraus:
        fd = (op_plus.entries - minus.operator(label).entries) / (2.0 * h)
        gap = np.max(np.abs(fd - analytic[label].entries))
        worst = max(worst, float(gap))
    return worst
