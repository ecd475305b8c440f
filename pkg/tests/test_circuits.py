import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from echoqfi.circuits import (
    CircuitParams, Encoding, FreeEvolution, Pulse, PulseErrorModel, apply_pulse_errors,
    bb1_expand, compile_sequence, deviation_observable, echo_circuit, echo_sequence,
    encoding_unitary, engineering_sequence, engineering_unitary, generator, nmr_hamiltonian,
    perturb_sequence, reverse_sequence, reverse_unitary,
)
from echoqfi.errors import DomainError
from echoqfi.metrology import optimal_probe, qfi_deviation, random_params, star_optimal_qfi
from echoqfi.qstate import PAULI, DeviationState, SpinSystem, dagger, z_diagonal
from echoqfi.symmetric import block_to_dense

angles = st.lists(st.floats(-10, 10, allow_nan=False), min_size=6, max_size=6)
OPTIMAL = CircuitParams([0, np.pi / 2, 0, np.pi / 2, 0, np.pi / 2])


def unitarity_defect(u):
    u = block_to_dense(u) if hasattr(u, "blocks") else u
    return np.max(np.abs(u @ u.conj().T - np.eye(len(u))))


def echo_value(v, d0):
    return (v @ d0 @ dagger(v) @ d0).trace().real


class TestCircuitParams:
    def test_length(self):
        with pytest.raises(DomainError):
            CircuitParams([0.0] * 5)

    def test_finite(self):
        with pytest.raises(DomainError):
            CircuitParams([0, 0, 0, 0, 0, np.inf])

    def test_canonical_only_for_reporting(self):
        p = CircuitParams([7.0, -1.0, 0, 0, 0, 0])
        assert p.theta[0] == 7.0
        assert p.canonical()[0] == pytest.approx(7.0 - 2 * np.pi)
        assert p.canonical()[1] == pytest.approx(2 * np.pi - 1.0)


class TestEngineering:
    def test_zero_angles_free_evolution(self):
        s = SpinSystem(n_peripheral=3)
        f = expm(-1j * nmr_hamiltonian(s, "dense") * s.tau)
        np.testing.assert_allclose(engineering_unitary(CircuitParams([0] * 6), s, "dense"), f @ f, atol=1e-12)

    def test_explicit_layer_order(self):
        s = SpinSystem(n_peripheral=2)
        th = [0.3, 0.7, 1.1, 1.3, 1.7, 1.9]
        ry_c = lambda a: expm(-1j * a * np.kron(PAULI["Y"], np.eye(4)) / 2)
        jy = np.kron(np.eye(2), np.kron(PAULI["Y"], np.eye(2)) + np.kron(np.eye(2), PAULI["Y"]))
        ry_p = lambda b: expm(-1j * b * jy / 2)
        f = expm(-1j * nmr_hamiltonian(s, "dense") * s.tau)
        r = lambda a, b: ry_c(a) @ ry_p(b)
        expected = r(th[2], th[5]) @ f @ r(th[1], th[4]) @ f @ r(th[0], th[3])
        np.testing.assert_allclose(engineering_unitary(CircuitParams(th), s, "dense"), expected, atol=1e-12)

    def test_optimal_manifold(self):
        s = SpinSystem()
        u = engineering_unitary(OPTIMAL, s, "block")
        d0 = deviation_observable(s, "block")
        f = qfi_deviation(DeviationState(10, 1e-5, u @ d0 @ dagger(u)), generator(s, "block"))
        assert abs(f - star_optimal_qfi(s)) / star_optimal_qfi(s) <= 5e-3

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_block_matches_dense(self, rng, m):
        s = SpinSystem(n_peripheral=m)
        p = random_params(rng)
        sz = np.kron(PAULI["Z"], np.eye(2**m))
        dense = engineering_unitary(p, s, "dense")
        d0 = deviation_observable(s, "dense")
        block = block_to_dense(engineering_unitary(p, s, "block"))
        a = np.trace(dense @ d0 @ dense.conj().T @ sz).real
        b = np.trace(block @ d0 @ block.conj().T @ sz).real
        assert abs(a - b) <= 1e-9
        np.testing.assert_allclose(block, dense, atol=1e-10)

    @given(angles)
    def test_unitary(self, th):
        s = SpinSystem(n_peripheral=3)
        assert unitarity_defect(engineering_unitary(CircuitParams(th), s, "dense")) <= 1e-10
        assert unitarity_defect(engineering_unitary(CircuitParams(th), s, "block")) <= 1e-10

    def test_optimal_dominates_random(self):
        s = SpinSystem()
        g, d0 = generator(s, "block"), deviation_observable(s, "block")

        def qfi(p):
            u = engineering_unitary(p, s, "block")
            return qfi_deviation(DeviationState(10, 0.0, u @ d0 @ dagger(u)), g)

        best = qfi(OPTIMAL)
        r = np.random.default_rng(99)
        assert max(qfi(random_params(r)) for _ in range(10_000)) <= best * (1 + 1e-9)


class TestReverse:
    @given(angles)
    def test_inverse(self, th):
        s = SpinSystem(n_peripheral=3)
        p = CircuitParams(th)
        for rep in ("dense", "block"):
            prod = reverse_unitary(p, s, rep) @ engineering_unitary(p, s, rep)
            prod = block_to_dense(prod) if rep == "block" else prod
            assert np.max(np.abs(prod - np.eye(16))) <= 1e-10

    def test_equals_adjoint(self, rng):
        s = SpinSystem(n_peripheral=4)
        p = random_params(rng)
        u = engineering_unitary(p, s, "dense")
        np.testing.assert_allclose(reverse_unitary(p, s, "dense"), u.conj().T, atol=1e-12)

    def test_zero_angles(self):
        s = SpinSystem(n_peripheral=2)
        f = expm(-1j * nmr_hamiltonian(s, "dense") * s.tau)
        np.testing.assert_allclose(reverse_unitary(CircuitParams([0] * 6), s, "dense"),
                                   f.conj().T @ f.conj().T, atol=1e-12)

    def test_eigenphases_negated(self, rng):
        s = SpinSystem(n_peripheral=2)
        p = random_params(rng)
        fwd = np.sort(np.angle(np.linalg.eigvals(engineering_unitary(p, s, "dense"))))
        rev = np.sort(-np.angle(np.linalg.eigvals(reverse_unitary(p, s, "dense"))))
        # phases near +-pi can wrap; compare on the unit circle
        np.testing.assert_allclose(np.sort(np.exp(1j * fwd).real), np.sort(np.exp(1j * rev).real), atol=1e-9)

    def test_sequence_structure(self):
        s = SpinSystem()
        seq = reverse_sequence(engineering_sequence(CircuitParams([1, 2, 3, 4, 5, 6]), s))
        assert seq[0] == Pulse("peripheral", -6.0)
        assert isinstance(seq[2], FreeEvolution) and seq[2].duration == -s.tau

    def test_unknown_element(self):
        with pytest.raises(DomainError):
            reverse_sequence([object()])


class TestEncoding:
    def test_zero(self):
        np.testing.assert_allclose(encoding_unitary(0.0, SpinSystem(n_peripheral=2), "dense"), np.eye(8))

    def test_balanced_state_phase(self):
        u = encoding_unitary(1.234, SpinSystem(n_peripheral=3), "dense")
        assert u[0b0101, 0b0101] == pytest.approx(1.0)

    def test_all_zero_two_qubits(self):
        u = encoding_unitary(np.pi, SpinSystem(n_peripheral=1), "dense")
        assert u[0, 0] == pytest.approx(-1.0)

    @given(st.floats(-5, 5), st.integers(1, 4))
    def test_phases(self, angle, m):
        n = m + 1
        u = np.diag(encoding_unitary(angle, SpinSystem(n_peripheral=m), "dense"))
        ones = np.array([bin(k).count("1") for k in range(2**n)])
        np.testing.assert_allclose(u, np.exp(-1j * angle * (n - 2 * ones) / 2), atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(DomainError):
            encoding_unitary(np.nan, SpinSystem())

    def test_generator_dense(self):
        g = generator(SpinSystem(n_peripheral=2), "dense")
        np.testing.assert_allclose(np.diag(g).real, sum(z_diagonal(3, k) for k in range(3)) / 2)


class TestEcho:
    def test_zero_quench_identity(self, rng):
        s = SpinSystem(n_peripheral=3)
        v = echo_circuit(random_params(rng), 0.0, s, "dense")
        np.testing.assert_allclose(v, np.eye(16), atol=1e-10)

    def test_matches_direct(self):
        s = SpinSystem(n_peripheral=3)
        p = CircuitParams([0] * 6)
        rho = (np.eye(16) + 1e-3 * deviation_observable(s, "dense")) / 16
        u = engineering_unitary(p, s, "dense")
        enc = encoding_unitary(0.2, s, "dense")
        rho_f = u @ rho @ u.conj().T
        direct = np.trace(rho_f @ enc @ rho_f @ enc.conj().T).real
        v = echo_circuit(p, 0.2, s, "dense")
        via = np.trace(rho @ v @ rho @ v.conj().T).real
        assert abs(direct - via) <= 1e-12

    def test_group_property(self, rng):
        s = SpinSystem(n_peripheral=3)
        p = random_params(rng)
        prod = echo_circuit(p, 0.3, s, "dense") @ echo_circuit(p, -0.3, s, "dense")
        np.testing.assert_allclose(prod, np.eye(16), atol=1e-10)

    def test_block_dense(self, rng):
        s = SpinSystem(n_peripheral=3)
        p = random_params(rng)
        np.testing.assert_allclose(block_to_dense(echo_circuit(p, 0.2, s, "block")),
                                   echo_circuit(p, 0.2, s, "dense"), atol=1e-10)

    def test_bad_representation(self):
        with pytest.raises(DomainError):
            compile_sequence([], SpinSystem(), "sparse")


def rotation(angle, phase):
    axis = np.cos(phase) * PAULI["X"] + np.sin(phase) * PAULI["Y"]
    return expm(-1j * angle * axis / 2)


def composite(parts, scale=1.0):
    out = np.eye(2, dtype=complex)
    for a, p in parts:
        out = rotation(a * scale, p) @ out
    return out


class TestBB1:
    def test_phase(self):
        parts = bb1_expand(np.pi / 2, 0.0)
        assert parts[1][1] == pytest.approx(np.arccos(-1 / 8))
        assert parts[1][1] == pytest.approx(1.6961, abs=1e-4)
        assert [a for a, _ in parts] == [np.pi / 2, np.pi, 2 * np.pi, np.pi]

    @given(st.floats(-2 * np.pi, 2 * np.pi), st.floats(0, 2 * np.pi))
    def test_exact_without_error(self, theta, phase):
        assert np.max(np.abs(composite(bb1_expand(theta, phase)) - rotation(theta, phase))) <= 1e-12

    def test_zero_angle_identity(self):
        c = composite(bb1_expand(0.0, 0.3))
        assert abs(abs(np.trace(c)) / 2 - 1) <= 1e-12

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            bb1_expand(4 * np.pi + 0.1, 0.0)

    def test_suppresses_amplitude_error(self):
        r = np.random.default_rng(3)
        bare, bb1 = [], []
        for _ in range(100):
            theta, eta = r.uniform(0, 2 * np.pi), r.normal(0, 0.05)
            ideal = rotation(theta, np.pi / 2)
            bare.append(np.linalg.norm(rotation(theta * (1 + eta), np.pi / 2) - ideal))
            bb1.append(np.linalg.norm(composite(bb1_expand(theta, np.pi / 2), 1 + eta) - ideal))
        assert np.median(bb1) <= np.median(bare) / 20


class TestPulseErrors:
    def test_zero_sigma(self, rng):
        s = SpinSystem(n_peripheral=3)
        seq = echo_sequence(random_params(rng), 0.2, s)
        np.testing.assert_allclose(apply_pulse_errors(seq, s, PulseErrorModel(0.0), 1, "dense"),
                                   compile_sequence(seq, s, "dense"), atol=1e-14)

    def test_disabled(self, rng):
        seq = echo_sequence(random_params(rng), 0.2, SpinSystem())
        assert perturb_sequence(seq, PulseErrorModel(0.05, enabled=False), 1) == seq

    def test_deterministic(self, rng):
        s = SpinSystem(n_peripheral=3)
        seq = echo_sequence(random_params(rng), 0.2, s)
        a = apply_pulse_errors(seq, s, PulseErrorModel(), 42, "dense")
        b = apply_pulse_errors(seq, s, PulseErrorModel(), 42, "dense")
        np.testing.assert_array_equal(a, b)

    def test_scales_each_pulse(self):
        seq = [Pulse("central", 1.0), FreeEvolution(0.1), Pulse("peripheral", 2.0), Encoding(0.2)]
        out = perturb_sequence(seq, PulseErrorModel(0.05), 7)
        r = np.random.default_rng(7)
        e1, e2 = r.normal(0, 0.05), r.normal(0, 0.05)
        assert out[0].angle == pytest.approx(1 + e1) and out[2].angle == pytest.approx(2 * (1 + e2))
        assert out[1] == seq[1] and out[3] == seq[3]

    def test_bb1_subpulses_share_error(self):
        out = perturb_sequence([Pulse("central", 1.0)], PulseErrorModel(0.05, use_bb1=True), 7)
        scale = out[0].angle / 1.0
        assert [p.angle for p in out] == pytest.approx([scale, scale * np.pi, scale * 2 * np.pi, scale * np.pi])

    def test_negative_sigma(self):
        with pytest.raises(DomainError):
            PulseErrorModel(-0.1)

    def test_bare_error_band(self):
        s = SpinSystem()
        d0 = deviation_observable(s, "block")
        r = np.random.default_rng(5)
        errs = []
        for _ in range(100):
            seq = echo_sequence(random_params(r), 0.2, s)
            ideal = echo_value(compile_sequence(seq, s), d0)
            noisy = echo_value(compile_sequence(perturb_sequence(seq, PulseErrorModel(0.05), r), s), d0)
            errs.append(abs(noisy - ideal) / abs(ideal))
        assert 0.02 <= np.median(errs) <= 0.20
