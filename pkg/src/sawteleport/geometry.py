"""Wire-network geometry and potential evaluation.

The device holds three qubits, each a pair of parallel wires running
along y.  A transverse coordinate X orders the six wires bottom to top
as q1w0, q1w1, q2w0, q2w1, q3w0, q3w1; wire 1 is the upper (injection)
wire of each qubit.  Coulomb couplers bend the two facing wires of an
adjacent qubit pair toward each other with linear ramps around a
constant-separation plateau, which is why the coupler between qubits
(hi, lo) acts on the |0_hi 1_lo> branch.

All potentials are in eV, lengths in nm, times in fs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .units import COULOMB_CONSTANT

# ramp length (nm) of the shipped coupler geometry; chosen together with
# the 150 nm plateau and 5 nm separation so the dynamically extracted
# coupler phase lands at 0.88 pi at the desk-scale step (dy = 1 nm,
# dt = 1 fs; see protocol.calibrate_coupler)
DEFAULT_RAMP_LENGTH = 96.672


@dataclass(frozen=True)
class PhysicalParams:
    """SAW drive, material and screening constants (GaAs defaults)."""

    saw_amplitude: float = 0.020          # eV
    saw_wavelength: float = 200.0         # nm
    sound_speed: float = 3.3e-3           # nm/fs
    screening_length: float = 5.0         # nm
    relative_permittivity: float = 12.9
    effective_mass_ratio: float = 0.067
    coulomb_constant: float = COULOMB_CONSTANT  # eV nm
    coulomb_r_min: float = 0.5            # nm, short-range regularization

    def __post_init__(self):
        for name in (
            "saw_amplitude",
            "saw_wavelength",
            "sound_speed",
            "screening_length",
            "relative_permittivity",
            "effective_mass_ratio",
            "coulomb_constant",
            "coulomb_r_min",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class SplitterElement:
    qubit: int
    y: float
    theta: float
    role: str = ""

    @property
    def interval(self):
        return (self.y, self.y)


@dataclass(frozen=True)
class BarrierElement:
    """Phase shifter on one wire.

    mode "phase" injects diag(e^{i value}, .) as a matrix; mode "height"
    is a real rectangular potential of value eV over y_length used for
    dynamical transits.
    """

    qubit: int
    wire: int
    y_start: float
    y_length: float
    value: float
    mode: str = "phase"
    role: str = ""

    @property
    def interval(self):
        return (self.y_start, self.y_start + self.y_length)


@dataclass(frozen=True)
class CouplerElement:
    qubits: tuple[int, int]  # (hi, lo)
    y_start: float
    ramp_length: float
    plateau_length: float
    plateau_separation: float
    role: str = ""

    @property
    def y_end(self) -> float:
        return self.y_start + 2.0 * self.ramp_length + self.plateau_length

    @property
    def interval(self):
        return (self.y_start, self.y_end)

    @property
    def plateau_interval(self):
        a = self.y_start + self.ramp_length
        return (a, a + self.plateau_length)


Element = SplitterElement | BarrierElement | CouplerElement


@dataclass
class DeviceBlueprint:
    """Six wire paths plus the ordered gate-element schedule."""

    elements: list[Element]
    wire_pitch_far: float = 60.0   # facing-wire separation outside couplers
    intra_qubit_pitch: float = 60.0
    injection_center: float = -50.0  # SAW minimum holding the packets at t=0

    def couplers(self) -> list[CouplerElement]:
        return [e for e in self.elements if isinstance(e, CouplerElement)]

    def by_role(self, role: str) -> Element:
        for e in self.elements:
            if e.role == role:
                return e
        raise KeyError(f"blueprint has no element with role {role!r}")

    def has_role(self, role: str) -> bool:
        return any(e.role == role for e in self.elements)

    def base_offset(self, qubit: int, wire: int) -> float:
        """Transverse position of a straight wire, bottom to top."""
        step = self.intra_qubit_pitch + self.wire_pitch_far
        return (qubit - 1) * step + wire * self.intra_qubit_pitch

    def lateral_offset(self, qubit: int, wire: int, y) -> np.ndarray:
        """Piecewise-linear X(y) of a wire including coupler deflections."""
        y = np.asarray(y, dtype=float)
        x = np.full(y.shape, self.base_offset(qubit, wire), dtype=float)
        for c in self.couplers():
            hi, lo = c.qubits
            if (qubit, wire) == (hi, 0):
                sign = -1.0  # upper qubit's lower wire bends down
            elif (qubit, wire) == (lo, 1):
                sign = +1.0
            else:
                continue
            depth = 0.5 * (self.wire_pitch_far - c.plateau_separation)
            a, b = c.y_start, c.y_end
            r = c.ramp_length
            frac = np.clip((y - a) / r, 0.0, 1.0) - np.clip((y - (b - r)) / r, 0.0, 1.0)
            x += sign * depth * frac
        return x

    def wire_breakpoints(self, qubit: int, wire: int) -> np.ndarray:
        ys = {self.injection_center}
        for e in self.elements:
            lo, hi = e.interval
            ys.update((lo, hi))
            if isinstance(e, CouplerElement):
                ys.update(e.plateau_interval)
        return np.array(sorted(ys))


def saw_potential(y, t: float, p: PhysicalParams):
    """Traveling sinusoidal drive A sin(2 pi (y - v_s t) / lambda)."""
    y = np.asarray(y, dtype=float)
    k = 2.0 * np.pi / p.saw_wavelength
    return p.saw_amplitude * np.sin(k * (y - p.sound_speed * t))


def saw_minimum_position(index: int, t: float, p: PhysicalParams) -> float:
    """Center of the index-th SAW minimum at time t."""
    return p.sound_speed * t + p.saw_wavelength * (index - 0.25)


def screened_coulomb(r, p: PhysicalParams):
    """Exponentially damped Coulomb energy between two electrons.

    The permittivity divides the bare constant; r is clamped below at
    coulomb_r_min, which never triggers for physically separated wires.
    """
    r = np.maximum(np.asarray(r, dtype=float), p.coulomb_r_min)
    return (p.coulomb_constant / (p.relative_permittivity * r)) * np.exp(
        -r / p.screening_length
    )


def pair_distance(bp: DeviceBlueprint, a: tuple[int, int, float], b: tuple[int, int, float]):
    """Euclidean distance between two electrons on their wires.

    a and b are (qubit, wire, y) triples; same-qubit pairs are rejected
    because intra-qubit distances never enter the model (no tunneling).
    """
    qa_, wa, ya = a
    qb, wb, yb = b
    if qa_ == qb:
        raise ValueError("intra-qubit pair distance is not defined")
    ya = np.asarray(ya, dtype=float)
    yb = np.asarray(yb, dtype=float)
    xa = bp.lateral_offset(qa_, wa, ya)
    xb = bp.lateral_offset(qb, wb, yb)
    return np.sqrt((ya - yb) ** 2 + (xa - xb) ** 2)


def barrier_potential(bp: DeviceBlueprint, qubit: int, wire: int, y):
    """Sum of height-mode rectangular barriers covering (qubit, wire, y)."""
    y = np.asarray(y, dtype=float)
    v = np.zeros(y.shape, dtype=float)
    for e in bp.elements:
        if isinstance(e, BarrierElement) and e.mode == "height":
            if e.qubit == qubit and e.wire == wire:
                lo, hi = e.interval
                v += e.value * ((y >= lo) & (y < hi))
    return v


def coupler_for_pair(bp: DeviceBlueprint, pair: tuple[int, int]) -> CouplerElement | None:
    key = (max(pair), min(pair))
    for c in bp.couplers():
        if c.qubits == key:
            return c
    return None


def pair_coulomb(
    bp: DeviceBlueprint,
    p: PhysicalParams,
    pair: tuple[int, int],
    bits: tuple[int, int],
    y_i,
    y_j,
):
    """Screened interaction of one qubit pair, gated to the coupler extent.

    bits are the wire indices of (hi, lo); outside the coupler's y-extent
    the interaction is dropped, matching its negligible magnitude at the
    far wire pitch.
    """
    hi, lo = max(pair), min(pair)
    c = coupler_for_pair(bp, (hi, lo))
    y_i = np.asarray(y_i, dtype=float)
    y_j = np.asarray(y_j, dtype=float)
    if c is None:
        return np.zeros(np.broadcast(y_i, y_j).shape)
    r = pair_distance(bp, (hi, bits[0], y_i), (lo, bits[1], y_j))
    v = screened_coulomb(r, p)
    inside = (
        (y_i >= c.y_start) & (y_i <= c.y_end) & (y_j >= c.y_start) & (y_j <= c.y_end)
    )
    return np.where(inside, v, 0.0)


def total_pair_potential(
    bp: DeviceBlueprint,
    p: PhysicalParams,
    pair: tuple[int, int],
    bits: tuple[int, int],
    y_i,
    y_j,
    t: float,
):
    """Full two-particle potential for one component of an adjacent pair.

    SAW drive for both particles, height-mode barriers on their wires and
    the screened Coulomb term inside the coupler extent.
    """
    hi, lo = max(pair), min(pair)
    if (hi, lo) not in ((2, 1), (3, 2)):
        raise ValueError(f"pair {pair} is not adjacent")
    v = saw_potential(y_i, t, p) + saw_potential(y_j, t, p)
    v = v + barrier_potential(bp, hi, bits[0], y_i) + barrier_potential(bp, lo, bits[1], y_j)
    return v + pair_coulomb(bp, p, pair, bits, y_i, y_j)


def validate_blueprint(bp: DeviceBlueprint, p: PhysicalParams | None = None) -> list[dict]:
    """Machine-readable diagnostics; an empty error list means a sane device."""
    issues = []
    per_qubit: dict[int, list[tuple[float, float, str]]] = {}
    for e in bp.elements:
        qubits = e.qubits if isinstance(e, CouplerElement) else (e.qubit,)
        lo, hi = e.interval
        for q in qubits:
            per_qubit.setdefault(q, []).append((lo, hi, e.role or type(e).__name__))
    for q, spans in per_qubit.items():
        spans.sort()
        for (lo1, hi1, r1), (lo2, hi2, r2) in zip(spans, spans[1:]):
            if lo2 < hi1:
                issues.append(
                    {
                        "code": "overlap",
                        "severity": "error",
                        "message": f"elements {r1} and {r2} overlap on qubit {q}",
                    }
                )
    for c in bp.couplers():
        if c.qubits not in ((2, 1), (3, 2)):
            issues.append(
                {
                    "code": "non-adjacent",
                    "severity": "error",
                    "message": f"coupler on non-adjacent qubits {c.qubits}",
                }
            )
        if c.plateau_separation >= bp.wire_pitch_far:
            issues.append(
                {
                    "code": "separation",
                    "severity": "error",
                    "message": "coupler plateau separation is not below the far pitch",
                }
            )
        mid = 0.5 * (c.plateau_interval[0] + c.plateau_interval[1])
        try:
            hi, lo = c.qubits
            d = float(pair_distance(bp, (hi, 0, mid), (lo, 1, mid)))
            issues.append(
                {
                    "code": "approach",
                    "severity": "info",
                    "message": f"coupler {c.role or c.qubits}: minimum approach {d:.3f} nm",
                }
            )
        except ValueError:
            pass
    return issues


def blueprint_errors(issues: list[dict]) -> list[dict]:
    return [i for i in issues if i["severity"] == "error"]


@dataclass(frozen=True)
class CouplerGeometry:
    """Free knobs of one coupler: everything the paper leaves to tuning."""

    plateau_length: float = 150.0
    plateau_separation: float = 5.0
    ramp_length: float = DEFAULT_RAMP_LENGTH


def default_blueprint(
    phi1: float = 2.0 * np.pi / 3.0,
    phi2: float = np.pi / 2.0,
    coupler12: CouplerGeometry | None = None,
    coupler23: CouplerGeometry | None = None,
    wire_pitch_far: float = 60.0,
    params: PhysicalParams | None = None,
) -> DeviceBlueprint:
    """Compact realization of the teleportation network.

    Packets are injected in the SAW minimum at -lambda/4; both couplers use
    the 150 nm / 5 nm paper geometry by default.  The SP shifter on the
    upper wire carries -phi1 so the prepared state follows the
    cos(phi1/2), i sin(phi1/2) coefficient convention at phi2 = pi/2.
    """
    params = params or PhysicalParams()
    c12 = coupler12 or CouplerGeometry()
    c23 = coupler23 or CouplerGeometry()
    y0 = -params.saw_wavelength / 4.0
    half = np.pi / 2

    t12_start = 20.0
    t12 = CouplerElement((2, 1), t12_start, c12.ramp_length, c12.plateau_length,
                         c12.plateau_separation, role="bell_coupler")
    y = t12.y_end
    rx1b_y = y + 20.0
    # the gap leaves room for two 50 nm evolution pads plus slack
    t23_start = y + 140.0
    rx2b_y = t23_start - 40.0
    t23 = CouplerElement((3, 2), t23_start, c23.ramp_length, c23.plateau_length,
                         c23.plateau_separation, role="meas_coupler")
    z = t23.y_end

    elements: list[Element] = [
        SplitterElement(1, 0.0, half, role="bell_rx1"),
        SplitterElement(2, 0.0, half, role="bell_rx2"),
        t12,
        SplitterElement(1, rx1b_y, half, role="bell_rx1b"),
        # SP block runs on qubit 3 in parallel with the Bell preparation
        SplitterElement(3, 40.0, half, role="sp_rx_a"),
        BarrierElement(3, 1, 80.0, 40.0, -phi1, mode="phase", role="sp_r1"),
        SplitterElement(3, 140.0, half, role="sp_rx_b"),
        BarrierElement(3, 0, 180.0, 40.0, phi2, mode="phase", role="sp_r0"),
        SplitterElement(2, rx2b_y, half, role="meas_rx2"),
        t23,
        SplitterElement(2, z + 20.0, -half, role="meas_rx2_inv"),
        SplitterElement(3, z + 20.0, -half, role="meas_rx3_inv"),
        # Bob's reconstruction stage; barriers switched per outcome
        SplitterElement(1, z + 60.0, half, role="ff_rx_a"),
        BarrierElement(1, 0, z + 80.0, 20.0, np.pi, mode="phase", role="ff_r0a"),
        SplitterElement(1, z + 120.0, half, role="ff_rx_b"),
        BarrierElement(1, 0, z + 140.0, 20.0, np.pi, mode="phase", role="ff_r0b"),
    ]
    return DeviceBlueprint(
        elements=elements,
        wire_pitch_far=wire_pitch_far,
        intra_qubit_pitch=wire_pitch_far,
        injection_center=y0,
    )


def compact_blueprint(
    phi1: float = 2.0 * np.pi / 3.0,
    phi2: float = np.pi / 2.0,
    ramp_length: float = 12.0,
    plateau_length: float = 20.0,
    plateau_separation: float = 5.0,
    params: PhysicalParams | None = None,
) -> DeviceBlueprint:
    """Short-coupler variant of the network for coarse-grid validation.

    Same element schedule as the production device, squeezed so that the
    full three-particle oracle stays affordable.  The coupler phase is
    whatever the short geometry produces; validation runs only compare
    the factorized and dense evolutions of the same device.
    """
    params = params or PhysicalParams()
    y0 = -params.saw_wavelength / 4.0
    half = np.pi / 2
    t12 = CouplerElement((2, 1), 10.0, ramp_length, plateau_length,
                         plateau_separation, role="bell_coupler")
    a = t12.y_end
    # gap sized for two 24 nm pads plus slack so the padded coupler
    # segments never overlap
    t23 = CouplerElement((3, 2), a + 56.0, ramp_length, plateau_length,
                         plateau_separation, role="meas_coupler")
    z = t23.y_end
    elements: list[Element] = [
        SplitterElement(1, -20.0, half, role="bell_rx1"),
        SplitterElement(2, -20.0, half, role="bell_rx2"),
        t12,
        SplitterElement(1, a + 8.0, half, role="bell_rx1b"),
        SplitterElement(3, -45.0, half, role="sp_rx_a"),
        BarrierElement(3, 1, -40.0, 5.0, -phi1, mode="phase", role="sp_r1"),
        SplitterElement(3, -30.0, half, role="sp_rx_b"),
        BarrierElement(3, 0, -25.0, 5.0, phi2, mode="phase", role="sp_r0"),
        SplitterElement(2, a + 46.0, half, role="meas_rx2"),
        t23,
        SplitterElement(2, z + 8.0, -half, role="meas_rx2_inv"),
        SplitterElement(3, z + 8.0, -half, role="meas_rx3_inv"),
        SplitterElement(1, z + 36.0, half, role="ff_rx_a"),
        BarrierElement(1, 0, z + 44.0, 6.0, np.pi, mode="phase", role="ff_r0a"),
        SplitterElement(1, z + 56.0, half, role="ff_rx_b"),
        BarrierElement(1, 0, z + 64.0, 6.0, np.pi, mode="phase", role="ff_r0b"),
    ]
    return DeviceBlueprint(elements=elements, injection_center=y0)
