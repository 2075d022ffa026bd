"""Core data model: kets, operators, channels, dilation, eigensolver."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import KET_0, PAULI, PLUS_X, haar_channel, haar_unitary, random_ket
from qfikit.quantum_core import (
    ChannelFamily,
    Ket,
    MeasurementChannel,
    Operator,
    apply_channel_outcome,
    check_family_derivative,
    hermitian_eig,
    kraus_from_dilation,
    mixed_state,
    outcome_probabilities,
    spectral_norm,
    tensor,
)

SEEDS = st.integers(min_value=0, max_value=10**6)


class TestKet:
    def test_normalized_flag_tight(self):
        assert Ket([1, 0]).normalized
        assert not Ket([1, 1]).normalized
        # boundary: norm^2 off by just over 1e-12
        eps = 3e-12
        assert not Ket([np.sqrt(1 + eps), 0]).normalized

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            Ket([1, 0], dim=3)

    def test_unit(self):
        k = Ket([3, 4]).unit()
        npt.assert_allclose(k.norm, 1.0, atol=1e-15)

    def test_immutable(self):
        k = Ket([1, 0])
        with pytest.raises(ValueError):
            k.amplitudes[0] = 2.0


class TestOperator:
    def test_structure_helpers(self):
        sz = Operator(PAULI["z"])
        assert sz.is_hermitian()
        assert sz.is_unitary()
        assert not sz.is_psd()
        proj = Operator([[1, 0], [0, 0]])
        assert proj.is_psd()

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            Operator(np.ones((2, 3)))

    def test_expectation(self):
        val = Operator(PAULI["z"]).expectation(PLUS_X)
        assert abs(val) < 1e-15


class TestTensor:
    def test_basis_kets(self):
        npt.assert_array_equal(tensor(KET_0, KET_0).amplitudes, [1, 0, 0, 0])

    def test_identity_operators(self):
        out = tensor(Operator(PAULI["i"]), Operator(PAULI["i"]))
        npt.assert_array_equal(out.entries, np.eye(4))

    def test_plus_x_pair(self):
        # hand expansion: (1,1)/sqrt2 (x) (1,1)/sqrt2 = (1,1,1,1)/2
        out = tensor(PLUS_X, PLUS_X)
        npt.assert_allclose(out.amplitudes, np.full(4, 0.5), atol=1e-15)

    def test_kind_mismatch(self):
        with pytest.raises(TypeError):
            tensor(KET_0, Operator(PAULI["i"]))

    @given(SEEDS)
    @settings(max_examples=25, deadline=None)
    def test_associative_on_dyadic_entries(self, seed):
        # entries drawn from exactly representable dyadics, where float
        # multiplication does not round, so associativity is bitwise
        rng = np.random.default_rng(seed)
        pool = np.array([0.0, 1.0, -1.0, 0.5, -0.5, 2.0, 0.25])
        mats = [
            Operator(rng.choice(pool, (2, 2)) + 1j * rng.choice(pool, (2, 2)))
            for _ in range(3)
        ]
        a, b, c = mats
        left = tensor(tensor(a, b), c).entries
        right = tensor(a, tensor(b, c)).entries
        npt.assert_array_equal(left, right)

    @given(SEEDS)
    @settings(max_examples=25, deadline=None)
    def test_associative_generic(self, seed):
        rng = np.random.default_rng(seed)
        kets = [random_ket(2, rng) for _ in range(3)]
        a, b, c = kets
        left = tensor(tensor(a, b), c).amplitudes
        right = tensor(a, tensor(b, c)).amplitudes
        npt.assert_allclose(left, right, rtol=1e-15, atol=1e-300)


class TestChannel:
    def test_duplicate_labels_rejected(self):
        op = Operator(PAULI["i"] / np.sqrt(2))
        with pytest.raises(ValueError):
            MeasurementChannel(kraus=(("a", op), ("a", op)), retained=frozenset("a"))

    def test_unknown_retained_rejected(self):
        op = Operator(PAULI["i"])
        with pytest.raises(ValueError):
            MeasurementChannel(kraus=(("a", op),), retained=frozenset({"b"}))

    def test_exactness_flag(self):
        dephase = MeasurementChannel(
            kraus=(("0", Operator([[1, 0], [0, 0]])), ("1", Operator([[0, 0], [0, 1]]))),
            retained=frozenset({"0", "1"}),
        )
        assert dephase.kind == "exact"
        assert dephase.completeness_residual <= 1e-15
        lossy = MeasurementChannel(
            kraus=(("0", Operator(PAULI["i"] * 0.5)),), retained=frozenset({"0"})
        )
        assert lossy.kind == "approximate"

    @given(SEEDS, st.integers(2, 4), st.integers(1, 4))
    @settings(max_examples=30, deadline=None)
    def test_probabilities_sum_to_one(self, seed, dim, n_outcomes):
        rng = np.random.default_rng(seed)
        chan = haar_channel(dim, n_outcomes, rng)
        psi = random_ket(dim, rng)
        total = sum(p for _, p in outcome_probabilities(chan, psi))
        assert abs(total - 1.0) <= chan.completeness_residual + 1e-10


class TestKrausFromDilation:
    def test_identity_dilation(self):
        u = Operator(np.eye(4))
        basis = [KET_0, Ket([0, 1])]
        chan = kraus_from_dilation(u, KET_0, basis)
        npt.assert_array_equal(chan.operator("0").entries, np.eye(2))
        npt.assert_array_equal(chan.operator("1").entries, np.zeros((2, 2)))

    @given(SEEDS)
    @settings(max_examples=20, deadline=None)
    def test_random_unitary_dilation_complete(self, seed):
        rng = np.random.default_rng(seed)
        u = Operator(haar_unitary(4, rng))
        v = haar_unitary(2, rng)
        basis = [Ket(v[:, 0]), Ket(v[:, 1])]
        env0 = random_ket(2, rng)
        chan = kraus_from_dilation(u, env0, basis)
        assert chan.completeness_residual <= 1e-10
        # independent contraction oracle, element loops instead of einsum
        u4 = u.entries.reshape(2, 2, 2, 2)
        for w, (_, op) in enumerate(chan.kraus):
            manual = np.zeros((2, 2), dtype=complex)
            for a in range(2):
                for b in range(2):
                    for e in range(2):
                        for f in range(2):
                            manual[a, b] += (
                                basis[w].amplitudes[e].conjugate()
                                * u4[a, e, b, f]
                                * env0.amplitudes[f]
                            )
            npt.assert_allclose(op.entries, manual, atol=1e-14)

    def test_non_orthonormal_basis_rejected(self):
        u = Operator(np.eye(4))
        with pytest.raises(ValueError):
            kraus_from_dilation(u, KET_0, [KET_0, Ket(np.array([1, 1e-3]) / np.sqrt(1 + 1e-6))])

    def test_dimension_mismatch_rejected(self):
        u = Operator(np.eye(6))
        with pytest.raises(ValueError):
            kraus_from_dilation(u, Ket([1, 0, 0, 0]), [Ket([1, 0, 0, 0])] * 4)


class TestApplyOutcome:
    def test_identity(self):
        tilde, p = apply_channel_outcome(Operator(PAULI["i"]), PLUS_X)
        assert p == pytest.approx(1.0, abs=1e-15)
        npt.assert_allclose(tilde.amplitudes, PLUS_X.amplitudes)

    def test_no_jump_survival_probability(self):
        # e^{-i x sz T} e^{-T/2} on |+x>, unit rate: survival e^{-T}
        T, x = 1.0, 0.3
        m = Operator(
            np.diag(np.exp(-1j * x * np.array([1.0, -1.0]) * T)) * np.exp(-T / 2.0)
        )
        _, p = apply_channel_outcome(m, PLUS_X)
        assert p == pytest.approx(np.exp(-T), rel=1e-12)

    @given(SEEDS)
    @settings(max_examples=30, deadline=None)
    def test_trace_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = Operator(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
        psi = random_ket(3, rng)
        _, p = apply_channel_outcome(m, psi)
        rho = np.outer(psi.amplitudes, psi.amplitudes.conj())
        expected = np.trace(m.entries.conj().T @ m.entries @ rho).real
        assert p == pytest.approx(expected, abs=1e-12)

    def test_unnormalized_input_rejected(self):
        with pytest.raises(ValueError):
            apply_channel_outcome(Operator(PAULI["i"]), Ket([1, 1]))


class TestMixedState:
    def test_unitary_kraus_stays_pure(self):
        chan = MeasurementChannel(
            kraus=(("u", Operator(PAULI["x"])),), retained=frozenset({"u"})
        )
        rho = mixed_state(chan, KET_0)
        purity = np.trace(rho.entries @ rho.entries).real
        assert purity == pytest.approx(1.0, abs=1e-14)

    def test_full_dephasing(self):
        chan = MeasurementChannel(
            kraus=(("0", Operator([[1, 0], [0, 0]])), ("1", Operator([[0, 0], [0, 1]]))),
            retained=frozenset({"0", "1"}),
        )
        rho = mixed_state(chan, PLUS_X)
        npt.assert_allclose(rho.entries, np.eye(2) / 2, atol=1e-15)

    @given(SEEDS)
    @settings(max_examples=25, deadline=None)
    def test_matches_direct_sum_oracle(self, seed):
        rng = np.random.default_rng(seed)
        chan = haar_channel(3, 3, rng)
        psi = random_ket(3, rng)
        rho = mixed_state(chan, psi)
        acc = np.zeros((3, 3), dtype=complex)
        proj = np.outer(psi.amplitudes, psi.amplitudes.conj())
        for _, op in chan.kraus:
            acc += op.entries @ proj @ op.entries.conj().T
        npt.assert_allclose(rho.entries, acc, atol=1e-13)
        assert rho.is_hermitian(1e-12)
        assert np.linalg.eigvalsh(rho.entries).min() >= -1e-10


class TestHermitianEig:
    def test_pauli_z(self):
        w, _ = hermitian_eig(Operator(PAULI["z"]))
        npt.assert_allclose(w, [-1.0, 1.0])

    def test_pauli_x_eigenvectors(self):
        w, v = hermitian_eig(Operator(PAULI["x"]))
        npt.assert_allclose(w, [-1.0, 1.0])
        # columns match |-x>, |+x> up to phase
        for col, ref in zip(v.entries.T, [np.array([1, -1]) / np.sqrt(2), np.array([1, 1]) / np.sqrt(2)]):
            overlap = abs(np.vdot(col, ref))
            assert overlap == pytest.approx(1.0, abs=1e-12)

    @given(SEEDS)
    @settings(max_examples=25, deadline=None)
    def test_random_hermitian_residual(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        a = Operator((g + g.conj().T) / 2)
        w, v = hermitian_eig(a)
        assert np.all(np.diff(w) >= 0)
        residual = spectral_norm(a.entries @ v.entries - v.entries @ np.diag(w))
        assert residual <= 1e-10 * max(1.0, spectral_norm(a.entries))

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError):
            hermitian_eig(Operator([[0, 1], [0, 0]]))


class TestChannelFamily:
    def test_analytic_matches_fd(self):
        sz = PAULI["z"]

        def at(x):
            from scipy.linalg import expm

            return MeasurementChannel(
                kraus=(("u", Operator(expm(-1j * x * sz))),), retained=frozenset({"u"})
            )

        def deriv(x):
            from scipy.linalg import expm

            return (("u", Operator(-1j * sz @ expm(-1j * x * sz))),)

        fam = ChannelFamily(eval=at, derivative=deriv)
        h = 1e-5
        gap = check_family_derivative(fam, 0.3, h=h)
        assert gap <= max(1e-6, 1e3 * h * h)
