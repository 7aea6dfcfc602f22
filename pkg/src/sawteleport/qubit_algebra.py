"""Exact dual-rail gate algebra for the three-qubit teleportation network.

States live in the 8-dimensional space spanned by |x3 x2 x1> where each
bit selects one of the two wires of a qubit (bit 1 = upper wire, the
injection wire).  Qubit 3 carries the state to teleport, qubits 2 and 1
form the entangled pair, qubit 1 is Bob's.  Everything here is plain
complex linear algebra with no spatial degrees of freedom; the module
doubles as the exact oracle against which the wavepacket engine is
checked.

Amplitude arrays have shape (2, 2, 2) with axes ordered (x3, x2, x1),
x3 most significant.  This index contract is shared with the grid-state
containers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNITARY_TOL = 1e-10

QUBITS = (1, 2, 3)
# adjacent qubit pairs that may share a Coulomb coupler, as (high, low)
ADJACENT_PAIRS = ((2, 1), (3, 2))


class NonUnitaryError(ValueError):
    """A gate matrix failed the unitarity check."""


class NonAdjacentPairError(ValueError):
    """Coupler requested on qubits 1 and 3 (interaction negligible)."""


def _axis(q: int) -> int:
    if q not in QUBITS:
        raise ValueError(f"qubit index must be 1, 2 or 3, got {q}")
    return 3 - q


def rx(theta: float) -> np.ndarray:
    """Beam-splitter rotation: |0> -> cos(t/2)|0> + i sin(t/2)|1>."""
    c = np.cos(theta / 2.0)
    s = 1j * np.sin(theta / 2.0)
    return np.array([[c, s], [s, c]], dtype=complex)


def r_shift(wire: int, phi: float) -> np.ndarray:
    """Phase shifter on one wire: diag(e^{i phi}, 1) for wire 0."""
    if wire not in (0, 1):
        raise ValueError(f"wire must be 0 or 1, got {wire}")
    if wire == 0:
        return np.diag([np.exp(1j * phi), 1.0]).astype(complex)
    return np.diag([1.0, np.exp(1j * phi)]).astype(complex)


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    u = np.asarray(u, dtype=complex)
    return u.shape == (2, 2) and np.max(np.abs(u.conj().T @ u - np.eye(2))) < tol


def basis_state(x3: int, x2: int, x1: int) -> np.ndarray:
    amp = np.zeros((2, 2, 2), dtype=complex)
    amp[x3, x2, x1] = 1.0
    return amp


def apply_single(state: np.ndarray, q: int, u: np.ndarray) -> np.ndarray:
    """Apply a one-qubit gate on qubit q of a three-qubit state."""
    if not is_unitary(u):
        raise NonUnitaryError(f"gate on qubit {q} is not unitary within {UNITARY_TOL}")
    ax = _axis(q)
    out = np.tensordot(u, state, axes=([1], [ax]))
    return np.moveaxis(out, 0, ax)


def apply_coupler_phase(state: np.ndarray, pair: tuple[int, int], gamma: float) -> np.ndarray:
    """Conditional coupler phase: multiplies the |0_hi 1_lo> amplitudes by e^{i gamma}.

    The phased ket has the higher-numbered qubit of the pair in wire 0 and
    the lower one in wire 1; the three other two-qubit states are untouched.
    """
    hi, lo = max(pair), min(pair)
    if (hi, lo) not in ADJACENT_PAIRS:
        raise NonAdjacentPairError(f"coupler pair {pair} is not adjacent")
    out = state.copy()
    idx = [slice(None)] * 3
    idx[_axis(hi)] = 0
    idx[_axis(lo)] = 1
    out[tuple(idx)] *= np.exp(1j * gamma)
    return out


def bell_prepare(gamma: float) -> np.ndarray:
    """Entangling block on qubits 2 and 1 starting from |1_3 1_2 1_1>.

    Two splitters, the T(12) coupler, and a second splitter on qubit 1.
    For gamma = pi the (2, 1) pair is the singlet (|01> - |10>)/sqrt(2)
    up to a global phase.
    """
    state = basis_state(1, 1, 1)
    state = apply_single(state, 1, rx(np.pi / 2))
    state = apply_single(state, 2, rx(np.pi / 2))
    state = apply_coupler_phase(state, (2, 1), gamma)
    state = apply_single(state, 1, rx(np.pi / 2))
    return state


def sp_gates(phi1: float, phi2: float) -> list[tuple[str, np.ndarray]]:
    """Gate sequence of the state-preparation block, in application order.

    Splitter, upper-wire shifter carrying -phi1, splitter, lower-wire
    shifter carrying phi2.  Applied to |1> the block yields
    e^{i phi2} cos(phi1/2)|0> - sin(phi1/2)|1> up to a global phase, so
    with phi2 = pi/2 the prepared state is cos(phi1/2)|0> + i sin(phi1/2)|1>.
    The shifter sign makes the block land on that coefficient convention;
    the +phi1 variant produces the complex conjugate amplitudes instead.
    """
    return [
        ("rx", rx(np.pi / 2)),
        ("r1", r_shift(1, -phi1)),
        ("rx", rx(np.pi / 2)),
        ("r0", r_shift(0, phi2)),
    ]


def sp_prepare(phi1: float, phi2: float) -> np.ndarray:
    """Prepare the input qubit state from |1> via the SP block."""
    v = np.array([0.0, 1.0], dtype=complex)
    for _, g in sp_gates(phi1, phi2):
        v = g @ v
    return v


def sp_coefficients(phi1: float) -> tuple[complex, complex]:
    """Nominal (s_i, t_i) at phi2 = pi/2: cos(phi1/2) and i sin(phi1/2)."""
    return complex(np.cos(phi1 / 2.0)), 1j * np.sin(phi1 / 2.0)


def bell_rotation(state: np.ndarray, gamma: float) -> np.ndarray:
    """Rotate the (3, 2) Bell basis into the computational basis.

    Splitter on qubit 2, T(23) coupler, inverse splitters on qubits 2 and 3.
    """
    state = apply_single(state, 2, rx(np.pi / 2))
    state = apply_coupler_phase(state, (3, 2), gamma)
    state = apply_single(state, 2, rx(-np.pi / 2))
    state = apply_single(state, 3, rx(-np.pi / 2))
    return state


def expected_output_state(s: complex, t: complex) -> np.ndarray:
    """Post-rotation three-qubit state for input s|0> + t|1> (ideal couplers).

    The four (x3, x2) blocks carry the conditional Bob states
    (s|0>+t|1>), (t|0>-s|1>), (-s|0>+t|1>), (t|0>+s|1>) with weights
    -1/2, 1/2, -i/2, i/2 respectively.
    """
    out = np.zeros((2, 2, 2), dtype=complex)
    out[0, 0] = -0.5 * np.array([s, t])
    out[0, 1] = 0.5 * np.array([t, -s])
    out[1, 0] = -0.5j * np.array([-s, t])
    out[1, 1] = 0.5j * np.array([t, s])
    return out


@dataclass
class MeasurementOutcome:
    """One projective outcome on qubits 3 and 2."""

    q3: int
    q2: int
    probability: float
    conditional_bob: np.ndarray | None  # normalized, None when probability ~ 0


def measure(state: np.ndarray) -> list[MeasurementOutcome]:
    """Enumerate the four (q3, q2) outcomes with conditional Bob states.

    Deterministic: no sampling, all four branches retained.  A branch of
    essentially zero probability gets conditional_bob = None rather than a
    fabricated state.
    """
    outcomes = []
    for q3 in (0, 1):
        for q2 in (0, 1):
            block = state[q3, q2, :]
            p = float(np.sum(np.abs(block) ** 2))
            bob = block / np.sqrt(p) if p > 1e-300 else None
            outcomes.append(MeasurementOutcome(q3, q2, p, bob))
    return outcomes


def feed_forward(outcome: tuple[int, int]) -> list[tuple[str, np.ndarray]]:
    """Bob's reconstruction sequence for a measured (q3, q2), in order.

    Always two splitters; the R0A barrier (between the splitters) is on iff
    q2 = 0 and the R0B barrier (after the second splitter) is on iff q3 = 0.
    """
    q3, q2 = outcome
    gates = [("rx", rx(np.pi / 2))]
    if q2 == 0:
        gates.append(("R0A", r_shift(0, np.pi)))
    gates.append(("rx", rx(np.pi / 2)))
    if q3 == 0:
        gates.append(("R0B", r_shift(0, np.pi)))
    return gates


def feed_forward_net(outcome: tuple[int, int]) -> np.ndarray:
    """Net 2x2 correction operator for an outcome."""
    net = np.eye(2, dtype=complex)
    for _, g in feed_forward(outcome):
        net = g @ net
    return net


def fidelity(psi_i: np.ndarray, psi_f: np.ndarray) -> float:
    """|<psi_i|psi_f>|^2 for normalized single-qubit states."""
    return float(np.abs(np.vdot(psi_i, psi_f)) ** 2)


def align_phase(reference: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Rotate state by the global phase maximizing overlap with reference."""
    ov = np.vdot(reference, state)
    if np.abs(ov) == 0.0:
        return state
    return state * (np.conj(ov) / np.abs(ov))


def concurrence_pair(state: np.ndarray, q3_value: int = 1) -> float:
    """Concurrence of the (2, 1) pair conditioned on qubit 3's wire."""
    block = state[q3_value]
    n = np.sqrt(np.sum(np.abs(block) ** 2))
    a, b, c, d = (block / n).ravel()
    return float(2.0 * np.abs(a * d - b * c))


@dataclass
class OutcomeRow:
    """Per-outcome record of a full protocol run."""

    q3: int
    q2: int
    probability: float
    bob: np.ndarray | None  # corrected, normalized qubit amplitudes
    fidelity: float


@dataclass
class ProtocolResult:
    """Outcome table and fidelity summary of one protocol execution."""

    phi1: float
    phi2: float
    gamma_prep: float
    gamma_rot: float
    s_i: complex
    t_i: complex
    outcomes: list[OutcomeRow]
    mean_fidelity: float
    fidelity_profile: list[tuple[float, float, float]] | None = None
    sampled_outcome: tuple[int, int] | None = None
    extras: dict = field(default_factory=dict)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([row.probability for row in self.outcomes])

    def sf2_tf2(self) -> tuple[float, float]:
        """Probability-weighted |s_f|^2 and |t_f|^2 of the corrected states."""
        sf2 = sum(
            row.probability * float(np.abs(row.bob[0]) ** 2)
            for row in self.outcomes
            if row.bob is not None
        )
        tf2 = sum(
            row.probability * float(np.abs(row.bob[1]) ** 2)
            for row in self.outcomes
            if row.bob is not None
        )
        return sf2, tf2


def ideal_teleport(
    phi1: float,
    phi2: float,
    gamma_prep: float = np.pi,
    gamma_rot: float = np.pi,
) -> ProtocolResult:
    """Run the whole protocol in the exact algebra.

    Bell preparation, SP on qubit 3, Bell rotation, enumeration of the four
    outcomes, feed-forward correction and fidelity against the prepared
    input state.  The mean fidelity is the probability-weighted average.
    """
    state = bell_prepare(gamma_prep)
    for _, g in sp_gates(phi1, phi2):
        state = apply_single(state, 3, g)
    psi_in = sp_prepare(phi1, phi2)
    state = bell_rotation(state, gamma_rot)

    rows = []
    mean_f = 0.0
    for out in measure(state):
        if out.conditional_bob is None:
            rows.append(OutcomeRow(out.q3, out.q2, out.probability, None, 0.0))
            continue
        bob = feed_forward_net((out.q3, out.q2)) @ out.conditional_bob
        f = fidelity(psi_in, bob)
        rows.append(OutcomeRow(out.q3, out.q2, out.probability, bob, f))
        mean_f += out.probability * f

    s_i, t_i = sp_coefficients(phi1)
    return ProtocolResult(
        phi1=phi1,
        phi2=phi2,
        gamma_prep=gamma_prep,
        gamma_rot=gamma_rot,
        s_i=s_i,
        t_i=t_i,
        outcomes=rows,
        mean_fidelity=mean_f,
    )
