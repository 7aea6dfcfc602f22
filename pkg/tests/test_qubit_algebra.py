import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sawteleport import qubit_algebra as qa

RNG = np.random.default_rng(20240817)

angles = st.floats(min_value=-2 * np.pi, max_value=2 * np.pi, allow_nan=False)


def random_state(rng=RNG):
    amp = rng.normal(size=(2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2))
    return amp / np.linalg.norm(amp)


def kron3(u3, u2, u1):
    """Dense 8x8 operator for brute-force cross-checks."""
    return np.kron(u3, np.kron(u2, u1))


def coupler_dense(pair, gamma):
    hi, lo = max(pair), min(pair)
    d = np.ones(8, dtype=complex)
    for i in range(8):
        bits = ((i >> 2) & 1, (i >> 1) & 1, i & 1)  # (x3, x2, x1)
        if bits[3 - hi] == 0 and bits[3 - lo] == 1:
            d[i] = np.exp(1j * gamma)
    return np.diag(d)


def assert_equal_up_to_phase(a, b, tol=1e-12):
    aligned = qa.align_phase(b, a)
    assert np.max(np.abs(aligned - b)) < tol


class TestGates:
    def test_rx_on_zero(self):
        v = qa.rx(np.pi / 2) @ np.array([1.0, 0.0])
        assert np.allclose(v, np.array([1.0, 1j]) / np.sqrt(2), atol=1e-12)

    def test_rx_zero_angle_is_identity(self):
        assert np.allclose(qa.rx(0.0), np.eye(2), atol=1e-12)

    def test_rx_pi_on_one(self):
        v = qa.rx(np.pi) @ np.array([0.0, 1.0])
        assert np.allclose(v, np.array([1j, 0.0]), atol=1e-12)

    def test_r_shift_wire0(self):
        v = qa.r_shift(0, np.pi) @ np.array([1.0, 0.0])
        assert np.allclose(v, np.array([-1.0, 0.0]), atol=1e-12)

    def test_r_shift_wire1_leaves_zero(self):
        v = qa.r_shift(1, 1.234) @ np.array([1.0, 0.0])
        assert np.allclose(v, np.array([1.0, 0.0]), atol=1e-12)

    def test_r_shift_zero_phase(self):
        assert np.allclose(qa.r_shift(0, 0.0), np.eye(2), atol=1e-12)

    @given(theta=angles, phi=angles)
    @settings(max_examples=50, deadline=None)
    def test_gates_unitary(self, theta, phi):
        assert qa.is_unitary(qa.rx(theta), tol=1e-12)
        assert qa.is_unitary(qa.r_shift(0, phi), tol=1e-12)
        assert qa.is_unitary(qa.r_shift(1, phi), tol=1e-12)


class TestApplySingle:
    def test_single_slot_action(self):
        out = qa.apply_single(qa.basis_state(1, 1, 1), 1, qa.rx(np.pi / 2))
        expected = np.zeros((2, 2, 2), dtype=complex)
        expected[1, 1, 0] = 1j / np.sqrt(2)
        expected[1, 1, 1] = 1.0 / np.sqrt(2)
        assert np.allclose(out, expected, atol=1e-12)

    def test_identity_gate(self):
        s = random_state()
        assert np.allclose(qa.apply_single(s, 2, np.eye(2)), s, atol=1e-15)

    def test_matches_dense_product_and_preserves_norm(self):
        # oracle: embed each gate into an 8x8 matrix via Kronecker products
        for _ in range(20):
            s = random_state()
            theta = RNG.uniform(-np.pi, np.pi)
            q = RNG.integers(1, 4)
            u = qa.rx(theta)
            mats = {1: np.eye(2), 2: np.eye(2), 3: np.eye(2)}
            mats[q] = u
            dense = kron3(mats[3], mats[2], mats[1]) @ s.ravel()
            out = qa.apply_single(s, int(q), u)
            assert np.allclose(out.ravel(), dense, atol=1e-12)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-12

    def test_rejects_non_unitary(self):
        with pytest.raises(qa.NonUnitaryError):
            qa.apply_single(random_state(), 1, np.array([[1.0, 0.0], [0.0, 2.0]]))


class TestCouplerPhase:
    def test_pi_negates_phased_ket(self):
        s = qa.basis_state(1, 0, 1)  # |1_3 0_2 1_1>
        out = qa.apply_coupler_phase(s, (2, 1), np.pi)
        assert np.allclose(out, -s, atol=1e-12)

    def test_other_kets_unchanged(self):
        s = qa.basis_state(1, 1, 1)
        out = qa.apply_coupler_phase(s, (2, 1), 2.17)
        assert np.allclose(out, s, atol=1e-15)

    def test_zero_gamma_identity(self):
        s = random_state()
        assert np.allclose(qa.apply_coupler_phase(s, (3, 2), 0.0), s, atol=1e-15)

    def test_rejects_non_adjacent(self):
        with pytest.raises(qa.NonAdjacentPairError):
            qa.apply_coupler_phase(random_state(), (1, 3), np.pi)

    def test_matches_dense_diagonal(self):
        s = random_state()
        for pair in [(2, 1), (3, 2)]:
            g = RNG.uniform(0, 2 * np.pi)
            out = qa.apply_coupler_phase(s, pair, g)
            assert np.allclose(out.ravel(), coupler_dense(pair, g) @ s.ravel(), atol=1e-12)

    def test_commutes_with_gate_on_spectator_qubit(self):
        for _ in range(10):
            s = random_state()
            u = qa.rx(RNG.uniform(-np.pi, np.pi))
            a = qa.apply_single(qa.apply_coupler_phase(s, (2, 1), 1.3), 3, u)
            b = qa.apply_coupler_phase(qa.apply_single(s, 3, u), (2, 1), 1.3)
            assert np.allclose(a, b, atol=1e-13)


class TestBellPrepare:
    def test_singlet_at_pi(self):
        out = qa.bell_prepare(np.pi)
        target = np.zeros((2, 2, 2), dtype=complex)
        target[1, 0, 1] = 1.0 / np.sqrt(2)
        target[1, 1, 0] = -1.0 / np.sqrt(2)
        assert_equal_up_to_phase(out, target)

    def test_concurrence_one_at_pi(self):
        assert abs(qa.concurrence_pair(qa.bell_prepare(np.pi)) - 1.0) < 1e-12

    def test_separable_at_zero(self):
        assert qa.concurrence_pair(qa.bell_prepare(0.0)) < 1e-12

    def test_leakage_amplitude_at_088pi(self):
        g = 0.88 * np.pi
        out = qa.bell_prepare(g)
        expected = np.abs(-1.0 - np.exp(1j * g)) / (2.0 * np.sqrt(2.0))
        assert abs(np.abs(out[1, 0, 0]) - expected) < 1e-12
        assert abs(expected - 0.1324985982) < 1e-9  # probability ~ 0.018


class TestSpPrepare:
    def test_paper_state(self):
        v = qa.sp_prepare(2 * np.pi / 3, np.pi / 2)
        assert_equal_up_to_phase(v, np.array([0.5, 1j * np.sqrt(3) / 2]))

    def test_phi1_zero(self):
        assert_equal_up_to_phase(qa.sp_prepare(0.0, np.pi / 2), np.array([1.0, 0.0]))

    def test_phi1_pi(self):
        assert_equal_up_to_phase(qa.sp_prepare(np.pi, 0.37), np.array([0.0, 1.0]))

    @given(phi1=angles)
    @settings(max_examples=40, deadline=None)
    def test_matches_coefficient_convention(self, phi1):
        v = qa.sp_prepare(phi1, np.pi / 2)
        s, t = qa.sp_coefficients(phi1)
        assert_equal_up_to_phase(v, np.array([s, t]), tol=1e-10)


class TestBellRotation:
    def pipeline(self, phi1, phi2, g_prep, g_rot):
        state = qa.bell_prepare(g_prep)
        for _, gate in qa.sp_gates(phi1, phi2):
            state = qa.apply_single(state, 3, gate)
        return qa.bell_rotation(state, g_rot)

    def test_reproduces_output_equation(self):
        out = self.pipeline(2 * np.pi / 3, np.pi / 2, np.pi, np.pi)
        expected = qa.expected_output_state(0.5, 1j * np.sqrt(3) / 2)
        assert_equal_up_to_phase(out, expected)

    def test_quarter_probabilities(self):
        out = self.pipeline(2 * np.pi / 3, np.pi / 2, np.pi, np.pi)
        for o in qa.measure(out):
            assert abs(o.probability - 0.25) < 1e-12

    def test_088pi_matches_dense_oracle(self):
        # brute-force 8-dim matrix product of the whole gate sequence
        g = 0.88 * np.pi
        phi1, phi2 = 0.7, np.pi / 2
        eye = np.eye(2)
        mat = kron3(eye, qa.rx(np.pi / 2), eye) @ kron3(eye, eye, qa.rx(np.pi / 2))
        mat = coupler_dense((2, 1), g) @ mat
        mat = kron3(eye, eye, qa.rx(np.pi / 2)) @ mat
        for _, gate in qa.sp_gates(phi1, phi2):
            mat = kron3(gate, eye, eye) @ mat
        mat = kron3(eye, qa.rx(np.pi / 2), eye) @ mat
        mat = coupler_dense((3, 2), g) @ mat
        mat = kron3(eye, qa.rx(-np.pi / 2), eye) @ mat
        mat = kron3(qa.rx(-np.pi / 2), eye, eye) @ mat
        dense = mat @ qa.basis_state(1, 1, 1).ravel()
        out = self.pipeline(phi1, phi2, g, g)
        assert np.allclose(out.ravel(), dense, atol=1e-12)


class TestMeasure:
    def test_equation_state_probabilities(self):
        out = qa.expected_output_state(0.6, 0.8j)
        probs = [o.probability for o in qa.measure(out)]
        assert np.allclose(probs, 0.25, atol=1e-12)

    def test_product_state_deterministic(self):
        psi = np.zeros((2, 2, 2), dtype=complex)
        psi[0, 0] = np.array([0.6, 0.8j])
        outs = qa.measure(psi)
        assert abs(outs[0].probability - 1.0) < 1e-12
        assert all(o.probability < 1e-12 for o in outs[1:])
        assert all(o.conditional_bob is None for o in outs[1:])

    def test_probabilities_sum_to_one(self):
        for _ in range(20):
            outs = qa.measure(random_state())
            assert abs(sum(o.probability for o in outs) - 1.0) < 1e-12


class TestFeedForward:
    def test_11_no_barriers(self):
        names = [n for n, _ in qa.feed_forward((1, 1))]
        assert names == ["rx", "rx"]
        net = qa.feed_forward_net((1, 1))
        assert np.allclose(net, 1j * np.array([[0, 1], [1, 0]]), atol=1e-12)

    def test_00_net_proportional_to_identity(self):
        # direct 2x2 product gives exactly +identity
        net = qa.feed_forward_net((0, 0))
        assert np.allclose(net, np.eye(2), atol=1e-12)
        names = [n for n, _ in qa.feed_forward((0, 0))]
        assert names == ["rx", "R0A", "rx", "R0B"]

    def test_01_net_proportional_to_zx(self):
        net = qa.feed_forward_net((0, 1))
        zx = np.array([[0, 1], [-1, 0]], dtype=complex)
        phase = net[0, 1] / zx[0, 1]
        assert abs(abs(phase) - 1.0) < 1e-12
        assert np.allclose(net, phase * zx, atol=1e-12)

    def test_restores_all_four_branches(self):
        # correction completeness over random input states
        rng = np.random.default_rng(7)
        for _ in range(100):
            v = rng.normal(size=2) + 1j * rng.normal(size=2)
            s, t = v / np.linalg.norm(v)
            target = np.array([s, t])
            pre = {
                (0, 0): -0.5 * np.array([s, t]),
                (0, 1): 0.5 * np.array([t, -s]),
                (1, 0): -0.5j * np.array([-s, t]),
                (1, 1): 0.5j * np.array([t, s]),
            }
            for outcome, block in pre.items():
                bob = qa.feed_forward_net(outcome) @ (block / np.linalg.norm(block))
                assert_equal_up_to_phase(bob, target, tol=1e-12)


class TestFidelity:
    def test_global_phase(self):
        v = np.array([0.6, 0.8j])
        assert abs(qa.fidelity(v, np.exp(1j * 0.3) * v) - 1.0) < 1e-12

    def test_orthogonal(self):
        assert qa.fidelity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_symmetric(self):
        for _ in range(10):
            a = random_state().ravel()[:2]
            b = random_state().ravel()[:2]
            a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
            assert abs(qa.fidelity(a, b) - qa.fidelity(b, a)) < 1e-14


class TestIdealTeleport:
    def test_unit_fidelity_every_branch(self):
        res = qa.ideal_teleport(1.1, 0.4)
        for row in res.outcomes:
            assert abs(row.fidelity - 1.0) < 1e-12
        assert abs(res.mean_fidelity - 1.0) < 1e-12

    def test_paper_bob_state(self):
        res = qa.ideal_teleport(2 * np.pi / 3, np.pi / 2)
        target = np.array([0.5, 1j * np.sqrt(3) / 2])
        for row in res.outcomes:
            assert_equal_up_to_phase(row.bob, target)

    def test_unit_fidelity_for_random_angles(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            phi1, phi2 = rng.uniform(0, 2 * np.pi, size=2)
            res = qa.ideal_teleport(phi1, phi2)
            assert abs(res.mean_fidelity - 1.0) < 1e-12

    def test_hybrid_sweep_matches_reported_range(self):
        g = 0.88 * np.pi
        fs = [
            qa.ideal_teleport(p, np.pi / 2, g, g).mean_fidelity
            for p in np.linspace(0.0, np.pi, 33)
        ]
        assert min(fs) >= 0.89
        assert max(fs) <= 1.0 + 1e-9
        assert qa.ideal_teleport(3 * np.pi / 4, np.pi / 2, g, g).mean_fidelity >= 0.97

    def test_measurement_weights_mean(self):
        res = qa.ideal_teleport(0.9, 1.7, 0.8 * np.pi, 0.9 * np.pi)
        mean = sum(r.probability * r.fidelity for r in res.outcomes)
        assert abs(mean - res.mean_fidelity) < 1e-14
        assert abs(sum(res.probabilities) - 1.0) < 1e-12
