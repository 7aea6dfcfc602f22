"""Multi-component wavefunctions on uniform 1-D grids.

A ComponentWavefunction holds the complex field of up to three particles,
one spatial axis per particle, with a leading wire-index axis of length 2
per particle.  Axis order follows the qubit labels in descending order so
that a (3, 2, 1) state indexes as amps[x3, x2, x1, iy3, iy2, iy1],
matching the qubit-algebra amplitude contract.

Integrals are plain Riemann sums: grids are uniform and all fields vanish
at the window edges, so the sums are exact to the working tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .units import kinetic_coefficient


class GridMismatchError(ValueError):
    """Operands live on different grids."""


class PacketPlacementError(ValueError):
    """Requested packet center sits too close to a window edge."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid: positions are origin + k * spacing, k in [0, count)."""

    origin: float
    spacing: float
    count: int

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        if self.count < 8:
            raise ValueError("grid needs at least 8 points")

    @property
    def positions(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.count)

    @property
    def end(self) -> float:
        return self.origin + self.spacing * (self.count - 1)

    def shifted(self, cells: int) -> "Grid1D":
        return replace(self, origin=self.origin + cells * self.spacing)


def hbar_omega(params) -> float:
    """Harmonic level spacing of a SAW minimum in eV.

    From the quadratic expansion of the sinusoidal potential around a
    minimum: hw = sqrt(2 * (hbar^2/2m) * A * (2 pi / lambda)^2).
    """
    c = kinetic_coefficient(params.effective_mass_ratio)
    k = 2.0 * np.pi / params.saw_wavelength
    return float(np.sqrt(2.0 * c * params.saw_amplitude * k * k))


def sigma_x(params) -> float:
    """Ground-state position spread of the SAW minimum in nm."""
    c = kinetic_coefficient(params.effective_mass_ratio)
    return float(np.sqrt(c / hbar_omega(params)))


def ground_state_packet(grid: Grid1D, minimum_position: float, params) -> np.ndarray:
    """Normalized harmonic ground state centered on a SAW minimum.

    Returns the bare spatial profile; lift it onto a wire with
    single_wire_state.  The center must stay at least 4 sigma away from
    the window edges.
    """
    sig = sigma_x(params)
    if (minimum_position - grid.origin) < 4 * sig or (grid.end - minimum_position) < 4 * sig:
        raise PacketPlacementError(
            f"packet at {minimum_position} nm is closer than 4 sigma "
            f"({4 * sig:.1f} nm) to the window [{grid.origin}, {grid.end}]"
        )
    y = grid.positions
    psi = np.exp(-((y - minimum_position) ** 2) / (4.0 * sig * sig)).astype(complex)
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.spacing)
    return psi


@dataclass
class ComponentWavefunction:
    """N-particle field with one wire bit per particle.

    labels gives the qubit number of each particle slot, descending
    (e.g. (3, 2, 1) or (2, 1)).  amps has shape (2,)*n + (count,)*n with
    the wire-index axes leading, ordered like labels.
    """

    labels: tuple[int, ...]
    grids: tuple[Grid1D, ...]
    amps: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = len(self.labels)
        if n < 1 or n > 3:
            raise ValueError("supported particle counts are 1, 2 and 3")
        if len(self.grids) != n:
            raise ValueError("need one grid per particle")
        expected = (2,) * n + tuple(g.count for g in self.grids)
        if self.amps.shape != expected:
            raise ValueError(f"amps shape {self.amps.shape} != {expected}")

    @property
    def particle_count(self) -> int:
        return len(self.labels)

    @property
    def cell_volume(self) -> float:
        v = 1.0
        for g in self.grids:
            v *= g.spacing
        return v

    def component(self, bits: tuple[int, ...]) -> np.ndarray:
        return self.amps[bits]

    def copy(self) -> "ComponentWavefunction":
        return ComponentWavefunction(self.labels, self.grids, self.amps.copy(), self.time)

    def slot_of(self, qubit: int) -> int:
        return self.labels.index(qubit)

    def component_keys(self):
        n = self.particle_count
        return [tuple((i >> (n - 1 - k)) & 1 for k in range(n)) for i in range(2**n)]


def single_wire_state(
    qubit: int, wire: int, grid: Grid1D, psi: np.ndarray, time: float = 0.0
) -> ComponentWavefunction:
    """One particle occupying a single wire with spatial profile psi."""
    amps = np.zeros((2, grid.count), dtype=complex)
    amps[wire] = psi
    return ComponentWavefunction((qubit,), (grid,), amps, time)


def norm2(state: ComponentWavefunction) -> float:
    """Total squared norm, summed over components and grid cells."""
    return float(np.sum(np.abs(state.amps) ** 2) * state.cell_volume)


def normalized(state: ComponentWavefunction) -> ComponentWavefunction:
    n2 = norm2(state)
    if n2 <= 0:
        raise ValueError("cannot normalize a zero state")
    return ComponentWavefunction(state.labels, state.grids, state.amps / np.sqrt(n2), state.time)


def _check_same_layout(a: ComponentWavefunction, b: ComponentWavefunction):
    if a.labels != b.labels or a.amps.shape != b.amps.shape:
        raise GridMismatchError("states have different particles or shapes")
    for ga, gb in zip(a.grids, b.grids):
        if (ga.origin, ga.spacing, ga.count) != (gb.origin, gb.spacing, gb.count):
            raise GridMismatchError("states live on different grids")


def overlap(a: ComponentWavefunction, b: ComponentWavefunction) -> complex:
    """<a|b>, conjugate-linear in the first argument."""
    _check_same_layout(a, b)
    return complex(np.sum(np.conj(a.amps) * b.amps) * a.cell_volume)


def particle_density(state: ComponentWavefunction, slot: int) -> np.ndarray:
    """Marginal probability density of one particle (per nm)."""
    n = state.particle_count
    prob = np.abs(state.amps) ** 2
    axes = tuple(range(n)) + tuple(n + k for k in range(n) if k != slot)
    dens = prob.sum(axis=axes)
    other = state.cell_volume / state.grids[slot].spacing
    return dens * other


def localization_probability(
    state: ComponentWavefunction, slot: int, interval: tuple[float, float]
) -> float:
    """Probability of finding the given particle inside [lo, hi).

    Grid cells are attributed by their center, so a partition of the
    window sums exactly to the total norm.
    """
    lo, hi = interval
    g = state.grids[slot]
    y = g.positions
    mask = (y >= lo) & (y < hi)
    dens = particle_density(state, slot)
    return float(np.sum(dens[mask]) * g.spacing)


def tensor_product(a: ComponentWavefunction, b: ComponentWavefunction) -> ComponentWavefunction:
    """Product state with concatenated labels (a's particles first)."""
    n = a.particle_count + b.particle_count
    if n > 3:
        raise ValueError("tensor product would exceed three particles")
    na, nb = a.particle_count, b.particle_count
    amps = np.multiply.outer(a.amps, b.amps)
    # outer gives (wa, ya, wb, yb); interleave to (wa, wb, ya, yb)
    perm = (
        list(range(na))
        + [2 * na + k for k in range(nb)]
        + [na + k for k in range(na)]
        + [2 * na + nb + k for k in range(nb)]
    )
    amps = np.transpose(amps, perm)
    return ComponentWavefunction(a.labels + b.labels, a.grids + b.grids, amps, a.time)


@dataclass
class Branch:
    """One term of a Schmidt decomposition across the particle bipartition."""

    coefficient: complex
    left: ComponentWavefunction
    right: ComponentWavefunction


@dataclass
class BranchDecomposition:
    branches: list[Branch]
    discarded_weight: float

    def __len__(self):
        return len(self.branches)

    def reconstruct(self) -> ComponentWavefunction:
        total = None
        for br in self.branches:
            term = tensor_product(br.left, br.right)
            term.amps *= br.coefficient
            total = term if total is None else ComponentWavefunction(
                term.labels, term.grids, total.amps + term.amps, term.time
            )
        return total


def branch_decompose(state: ComponentWavefunction, tolerance: float = 1e-10) -> BranchDecomposition:
    """Schmidt decomposition of a two-particle state.

    SVD across the (wire_left x y_left | wire_right x y_right) bipartition,
    truncated at the smallest rank whose relative reconstruction error is
    below tolerance.  Branches come back sorted by descending singular
    value; their spatial factors are unit-normalized so the coefficients
    carry the full weight.
    """
    if state.particle_count != 2:
        raise ValueError("branch_decompose expects a two-particle state")
    nL, nR = state.grids[0].count, state.grids[1].count
    mat = np.transpose(state.amps, (0, 2, 1, 3)).reshape(2 * nL, 2 * nR)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    total = float(np.sum(s**2))
    if total == 0.0:
        raise ValueError("cannot decompose a zero state")
    rank = len(s)
    for r in range(1, len(s) + 1):
        tail = float(np.sum(s[r:] ** 2))
        if np.sqrt(tail / total) < tolerance:
            rank = r
            break
    dL, dR = np.sqrt(state.grids[0].spacing), np.sqrt(state.grids[1].spacing)
    branches = []
    for k in range(rank):
        left = ComponentWavefunction(
            (state.labels[0],), (state.grids[0],), u[:, k].reshape(2, nL) / dL, state.time
        )
        right = ComponentWavefunction(
            (state.labels[1],), (state.grids[1],), vh[k, :].reshape(2, nR) / dR, state.time
        )
        branches.append(Branch(complex(s[k] * dL * dR), left, right))
    discarded = float(np.sqrt(np.sum(s[rank:] ** 2) / total))
    return BranchDecomposition(branches, discarded)


def diagonal_slice(state: ComponentWavefunction) -> tuple[np.ndarray, np.ndarray]:
    """Equal-position slice Phi(y, y, ..., y) for every component.

    Returns (positions, fields) with fields shaped (2**n, count).  All
    particle grids must coincide.
    """
    g0 = state.grids[0]
    for g in state.grids[1:]:
        if (g.origin, g.spacing, g.count) != (g0.origin, g0.spacing, g0.count):
            raise GridMismatchError("diagonal slice needs identical particle grids")
    n = state.particle_count
    count = g0.count
    flat = state.amps.reshape((2**n,) + (count,) * n)
    if n == 1:
        diag = flat
    elif n == 2:
        diag = flat[:, np.arange(count), np.arange(count)]
    else:
        idx = np.arange(count)
        diag = flat[:, idx, idx, idx]
    return g0.positions, diag


def component_label(bits: tuple[int, ...]) -> str:
    return "".join(str(b) for b in bits)


def snapshot_rows(state: ComponentWavefunction):
    """Rows (y, component_label, re, im, abs2) for CSV export.

    One-particle states export the full field; multi-particle states
    export the equal-position diagonal slice.
    """
    y, diag = diagonal_slice(state)
    rows = []
    for i, bits in enumerate(state.component_keys()):
        lab = component_label(bits)
        for j in range(len(y)):
            v = diag[i, j]
            rows.append((float(y[j]), lab, float(v.real), float(v.imag), float(abs(v) ** 2)))
    return rows
