"""Unitary time evolution of multi-component wavefunctions.

Each step is a Strang split: half-step multiplication by the potential
phase, one Cayley-form Crank-Nicolson kinetic step per spatial dimension,
and a second potential half-step.  The time-dependent potential is
evaluated at the step midpoint for both half-steps.  The Cayley transform
(1 + i H dt / 2 hbar)^{-1} (1 - i H dt / 2 hbar) is exactly unitary, so
norm drift stays at rounding level no matter the step size.

The kinetic step is a direct tridiagonal (Thomas) solve per grid line
with the numerator multiply fused into the forward sweep; a numba build
of the kernel carries the hot loops, with a LAPACK fallback.  A moving
simulation window follows the SAW minima by integer cell shifts; vacated
cells are zeroed and the probability piled up at the window edges is
monitored so a packet can never silently leak out.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from . import geometry as geo
from .grid_state import ComponentWavefunction, norm2
from .units import HBAR, kinetic_coefficient

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep of the env
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def deco(f):
            return f

        return deco


class NumericalAbort(RuntimeError):
    """Base class for aborts that map to CLI exit code 1."""


class BoundaryOverflowError(NumericalAbort):
    """A packet reached the edge of its moving window."""


class ZeroPivotError(NumericalAbort):
    """Tridiagonal elimination hit a vanishing pivot."""


@dataclass(frozen=True)
class NumericsParams:
    """Grid and stepping policy.

    dt defaults to the reference 0.01 fs; desk-scale runs raise it (up to
    1 fs) and must justify the choice with convergence_check.
    """

    dy: float = 1.0                     # nm
    dt: float = 0.01                    # fs
    window_width: float = 200.0         # nm, one SAW wavelength
    window_margin_sigma: float = 4.0
    convergence_refinement: float = 2.0
    boundary_density_limit: float = 1e-10
    coupler_pad: float = 50.0           # nm evolved before/after a coupler

    def __post_init__(self):
        if self.dy <= 0 or self.dt <= 0:
            raise ValueError("dy and dt must be positive")
        if self.window_width < 8 * self.dy:
            raise ValueError("window too narrow for its grid spacing")

    def with_dt(self, dt: float) -> "NumericsParams":
        return NumericsParams(
            dy=self.dy,
            dt=dt,
            window_width=self.window_width,
            window_margin_sigma=self.window_margin_sigma,
            convergence_refinement=self.convergence_refinement,
            boundary_density_limit=self.boundary_density_limit,
            coupler_pad=self.coupler_pad,
        )


@dataclass
class EvolutionReport:
    steps: int
    norm_drift: float
    max_boundary_density: float
    wall_time: float

    def merged(self, other: "EvolutionReport") -> "EvolutionReport":
        return EvolutionReport(
            steps=self.steps + other.steps,
            norm_drift=self.norm_drift + other.norm_drift,
            max_boundary_density=max(self.max_boundary_density, other.max_boundary_density),
            wall_time=self.wall_time + other.wall_time,
        )


def tridiagonal_solve(lower, diag, upper, rhs):
    """Thomas elimination for a complex tridiagonal system.

    lower and upper have length n-1.  Diagonal dominance (guaranteed by
    the Crank-Nicolson form) keeps the elimination stable without
    pivoting; a vanishing pivot raises.
    """
    a = np.asarray(lower, dtype=complex)
    b = np.asarray(diag, dtype=complex)
    c = np.asarray(upper, dtype=complex)
    d = np.asarray(rhs, dtype=complex).copy()
    n = b.size
    if a.size != n - 1 or c.size != n - 1 or d.size != n:
        raise ValueError("inconsistent tridiagonal system sizes")
    cp = np.empty(n - 1, dtype=complex)
    bp = b.copy()
    for i in range(n - 1):
        if bp[i] == 0:
            raise ZeroPivotError(f"zero pivot at row {i}")
        cp[i] = c[i] / bp[i]
        d[i] = d[i] / bp[i]
        bp[i + 1] = bp[i + 1] - a[i] * cp[i]
        d[i + 1] = d[i + 1] - a[i] * d[i]
    if bp[-1] == 0:
        raise ZeroPivotError("zero pivot at last row")
    d[-1] = d[-1] / bp[-1]
    for i in range(n - 2, -1, -1):
        d[i] = d[i] - cp[i] * d[i + 1]
    return d


@_njit(cache=True)
def _cn_rows_kernel(x, cp, invden, a, c1, ia):  # pragma: no cover - jitted
    rows, n = x.shape
    for r in range(rows):
        prev = 0.0 + 0.0j
        yprev = 0.0 + 0.0j
        for i in range(n):
            cur = x[r, i]
            nxt = x[r, i + 1] if i < n - 1 else 0.0 + 0.0j
            rhs = c1 * cur + ia * (prev + nxt)
            y = (rhs - a * yprev) * invden[i]
            x[r, i] = y
            prev = cur
            yprev = y
        for i in range(n - 2, -1, -1):
            x[r, i] = x[r, i] - cp[i] * x[r, i + 1]


@_njit(cache=True)
def _cn_cols_kernel(x, cp, invden, a, c1, ia, prevrow, yrow):  # pragma: no cover
    lead, n, cols = x.shape
    for k in range(lead):
        for j in range(cols):
            prevrow[j] = 0.0 + 0.0j
            yrow[j] = 0.0 + 0.0j
        for i in range(n):
            for j in range(cols):
                cur = x[k, i, j]
                nxt = x[k, i + 1, j] if i < n - 1 else 0.0 + 0.0j
                rhs = c1 * cur + ia * (prevrow[j] + nxt)
                y = (rhs - a * yrow[j]) * invden[i]
                x[k, i, j] = y
                prevrow[j] = cur
                yrow[j] = y
        for i in range(n - 2, -1, -1):
            for j in range(cols):
                x[k, i, j] = x[k, i, j] - cp[i] * x[k, i + 1, j]


# Thomas elimination coefficients of the Cayley denominator, by (n, alpha)
_CN_CACHE: dict[tuple[int, float], tuple] = {}


def _cn_factors(n: int, alpha: float):
    key = (n, float(alpha))
    fac = _CN_CACHE.get(key)
    if fac is None:
        a = -1j * alpha
        b = 1.0 + 2j * alpha
        denom = np.empty(n, dtype=complex)
        cp = np.empty(n, dtype=complex)
        denom[0] = b
        cp[0] = a / denom[0]
        for i in range(1, n):
            denom[i] = b - a * cp[i - 1]
            cp[i] = a / denom[i]
        if np.any(denom == 0):
            raise ZeroPivotError("zero pivot in CN factorization")
        fac = (cp, 1.0 / denom, a, 1.0 - 2j * alpha, 1j * alpha)
        if len(_CN_CACHE) > 64:
            _CN_CACHE.clear()
        _CN_CACHE[key] = fac
    return fac


def _cayley_alpha(dt: float, dy: float, kinetic_coeff: float) -> float:
    return kinetic_coeff * dt / (2.0 * HBAR * dy * dy)


def _cn_block_lapack(flat: np.ndarray, n: int, alpha: float):
    off = np.full(n - 1, -1j * alpha, dtype=complex)
    d = np.full(n, 1.0 + 2j * alpha, dtype=complex)
    dl, dd, du, du2, ipiv, info = lapack.zgttrf(off, d, off.copy())
    if info != 0:
        raise ZeroPivotError(f"zgttrf failed with info={info}")
    rhs = (1.0 - 2j * alpha) * flat
    rhs[:, 1:] += 1j * alpha * flat[:, :-1]
    rhs[:, :-1] += 1j * alpha * flat[:, 1:]
    x, info = lapack.zgttrs(dl, dd, du, du2, ipiv, rhs.T, overwrite_b=1)
    if info != 0:
        raise ZeroPivotError(f"zgttrs failed with info={info}")
    np.copyto(flat, x.T)


def _cn_sweep_axis(comp: np.ndarray, axis: int, alpha: float):
    """In-place CN kinetic step along one spatial axis of a component."""
    n = comp.shape[axis]
    cp, invden, a, c1, ia = _cn_factors(n, alpha)
    nd = comp.ndim
    if not _HAVE_NUMBA:  # pragma: no cover - exercised only without numba
        moved = np.moveaxis(comp, axis, -1)
        flat = np.ascontiguousarray(moved).reshape(-1, n)
        _cn_block_lapack(flat, n, alpha)
        np.copyto(moved, flat.reshape(moved.shape))
        return
    if axis == nd - 1:
        _cn_rows_kernel(comp.reshape(-1, n), cp, invden, a, c1, ia)
        return
    lead = 1
    for s in comp.shape[:axis]:
        lead *= s
    cols = 1
    for s in comp.shape[axis + 1:]:
        cols *= s
    view = comp.reshape(lead, n, cols)
    prevrow = np.empty(cols, dtype=complex)
    yrow = np.empty(cols, dtype=complex)
    _cn_cols_kernel(view, cp, invden, a, c1, ia, prevrow, yrow)


def cn_kinetic_step(line: np.ndarray, dt: float, dy: float, kinetic_coeff: float) -> np.ndarray:
    """One Cayley CN step of the free 3-point-Laplacian Hamiltonian.

    Hard-wall boundaries: the field is implicitly zero outside the line.
    """
    out = np.array(line, dtype=complex, copy=True)
    _cn_sweep_axis(out, 0, _cayley_alpha(dt, dy, kinetic_coeff))
    return out


def cayley_phase(k: float, dt: float, dy: float, kinetic_coeff: float) -> float:
    """Exact per-step phase advance of a discrete plane wave under CN."""
    energy = kinetic_coeff * (2.0 - 2.0 * np.cos(k * dy)) / (dy * dy)
    return -2.0 * np.arctan(energy * dt / (2.0 * HBAR))


def boundary_density(state: ComponentWavefunction, cells: int = 2) -> float:
    """Largest probability held in the outermost cells of any axis."""
    n = state.particle_count
    prob = np.abs(state.amps) ** 2
    worst = 0.0
    for slot in range(n):
        axes = tuple(range(n)) + tuple(n + k for k in range(n) if k != slot)
        marg = prob.sum(axis=axes) * (state.cell_volume / state.grids[slot].spacing)
        dy = state.grids[slot].spacing
        worst = max(worst, float(marg[:cells].sum() * dy), float(marg[-cells:].sum() * dy))
    return worst


def _active_components(state: ComponentWavefunction) -> list[tuple[int, ...]]:
    return [bits for bits in state.component_keys() if np.any(state.amps[bits])]


def _pair_slots(labels: tuple[int, ...]):
    """Adjacent qubit pairs present in the state, as ((hi, lo), (slot_hi, slot_lo))."""
    pairs = []
    for hi, lo in ((3, 2), (2, 1)):
        if hi in labels and lo in labels:
            pairs.append(((hi, lo), (labels.index(hi), labels.index(lo))))
    return pairs


class _CoulombPhases:
    """Per-component Coulomb phase factors, rebuilt when the window moves."""

    def __init__(self, bp, params, labels):
        self.bp = bp
        self.params = params
        self.labels = labels
        self.pairs = _pair_slots(labels)
        self._key = None
        self._tables: dict = {}

    def tables(self, grids, dt):
        key = tuple(g.origin for g in grids) + (dt,)
        if key != self._key:
            self._key = key
            self._tables = {}
            for (pair, slots) in self.pairs:
                c = geo.coupler_for_pair(self.bp, pair)
                if c is None:
                    continue
                yi = grids[slots[0]].positions
                yj = grids[slots[1]].positions
                for bi in (0, 1):
                    for bj in (0, 1):
                        v = geo.pair_coulomb(
                            self.bp, self.params, pair, (bi, bj), yi[:, None], yj[None, :]
                        )
                        if np.max(v) <= 0.0:
                            continue
                        phase = np.exp(-1j * v * dt / (2.0 * HBAR))
                        self._tables[(slots, bi, bj)] = phase
        return self._tables


def _component_phase(n_spatial, lines, ctables, bits):
    """Fused potential half-step phase for one component."""
    if n_spatial == 1:
        ph = lines[0][bits[0]].copy()
    elif n_spatial == 2:
        ph = np.multiply.outer(lines[0][bits[0]], lines[1][bits[1]])
    else:
        ph = np.multiply.outer(
            np.multiply.outer(lines[0][bits[0]], lines[1][bits[1]]), lines[2][bits[2]]
        )
    for (slots, bi, bj), table in ctables.items():
        if bits[slots[0]] == bi and bits[slots[1]] == bj:
            sh = [1] * n_spatial
            sh[slots[0]] = table.shape[0]
            sh[slots[1]] = table.shape[1]
            ph *= table.reshape(sh)
    return ph


def evolve(
    state: ComponentWavefunction,
    bp: geo.DeviceBlueprint,
    params: geo.PhysicalParams,
    numerics: NumericsParams,
    t0: float,
    t1: float,
    *,
    track_window: bool = True,
    coulomb: bool = True,
    on_sample=None,
    sample_every: int = 0,
    axis_order: tuple[int, ...] | None = None,
    boundary_weight: float = 1.0,
) -> tuple[ComponentWavefunction, EvolutionReport]:
    """Propagate a wavefunction from t0 to t1 under the device potentials.

    boundary_weight scales the edge-probability test: a normalized
    Schmidt factor that enters the final state with weight w only needs
    w * (its edge probability) below the limit.

    Per step: potential phase half-step (SAW drive, height barriers and
    the coupler-gated Coulomb term), CN kinetic step along each spatial
    dimension in turn, second potential half-step.  The window tracks the
    SAW at v_s by integer cell shifts when track_window is set.  on_sample
    is called as on_sample(t, state) every sample_every steps.

    t1 < t0 runs the same splitting backwards (potentials at mirrored
    midpoints), which inverts the forward evolution exactly; window
    tracking must be off for reversed runs.

    Raises BoundaryOverflowError when the edge probability exceeds the
    configured limit.  Norm drift is recorded, never silently repaired.
    """
    if t1 < t0 and track_window:
        raise ValueError("reversed evolution requires track_window=False")
    wall0 = _time.perf_counter()
    st = state.copy()
    st.time = t0
    n_spatial = st.particle_count
    c_kin = kinetic_coefficient(params.effective_mass_ratio)
    dy = st.grids[0].spacing
    for g in st.grids:
        if g.spacing != dy:
            raise ValueError("all particle grids must share one spacing")

    total = t1 - t0
    sign = 1.0 if total >= 0 else -1.0
    n_full = int(np.floor(abs(total) / numerics.dt + 1e-9))
    steps = [sign * numerics.dt] * n_full
    rem = abs(total) - n_full * numerics.dt
    if rem > 1e-9 * max(1.0, numerics.dt):
        steps.append(sign * rem)
    sweep_axes = list(axis_order) if axis_order is not None else list(range(n_spatial))
    if sorted(sweep_axes) != list(range(n_spatial)):
        raise ValueError("axis_order must be a permutation of the spatial axes")

    active = _active_components(st)
    height_barriers = {
        q: any(
            isinstance(e, geo.BarrierElement) and e.mode == "height" and e.qubit == q
            for e in bp.elements
        )
        for q in st.labels
    }
    cphases = _CoulombPhases(bp, params, st.labels) if coulomb else None

    norm_start = norm2(st)
    edge_limit = numerics.boundary_density_limit / max(boundary_weight, 1e-300)
    max_edge = boundary_density(st)
    if max_edge > edge_limit:
        raise BoundaryOverflowError(
            f"initial edge probability {max_edge:.3e} exceeds limit {edge_limit:.1e}"
        )
    # window shifts follow an absolute schedule (cell n moves at
    # t = n dy / v_s) so states evolved through different call chains
    # land on identical grids at identical times
    k_window = int(np.floor(params.sound_speed * t0 / dy + 1e-9))
    t = t0

    for i_step, dt in enumerate(steps):
        t_mid = t + 0.5 * dt
        alpha = _cayley_alpha(dt, dy, c_kin)

        # per-axis phase lines for both wire bits: SAW plus height barriers
        lines = []
        for slot in range(n_spatial):
            y = st.grids[slot].positions
            saw = np.exp(-1j * geo.saw_potential(y, t_mid, params) * dt / (2.0 * HBAR))
            per_bit = [saw, saw]
            if height_barriers.get(st.labels[slot], False):
                for w in (0, 1):
                    v = geo.barrier_potential(bp, st.labels[slot], w, y)
                    if np.any(v):
                        per_bit[w] = saw * np.exp(-1j * v * dt / (2.0 * HBAR))
            lines.append(per_bit)
        ctables = cphases.tables(st.grids, dt) if cphases is not None else {}
        phases = {bits: _component_phase(n_spatial, lines, ctables, bits) for bits in active}

        for bits in active:
            comp = st.amps[bits]
            np.multiply(comp, phases[bits], out=comp)
            for axis in sweep_axes:
                _cn_sweep_axis(comp, axis, alpha)
            np.multiply(comp, phases[bits], out=comp)

        t += dt
        st.time = t

        if track_window:
            k_now = int(np.floor(params.sound_speed * t / dy + 1e-9))
            if k_now > k_window:
                max_edge = max(max_edge, boundary_density(st))
                if max_edge > edge_limit:
                    raise BoundaryOverflowError(
                        f"edge probability {max_edge:.3e} exceeded limit at t={t:.1f} fs"
                    )
                _shift_window(st, k_now - k_window)
                k_window = k_now
        if on_sample is not None and sample_every > 0 and (i_step + 1) % sample_every == 0:
            on_sample(t, st)

    max_edge = max(max_edge, boundary_density(st))
    if max_edge > edge_limit:
        raise BoundaryOverflowError(
            f"final edge probability {max_edge:.3e} exceeds limit"
        )
    report = EvolutionReport(
        steps=len(steps),
        norm_drift=abs(norm2(st) - norm_start),
        max_boundary_density=max_edge,
        wall_time=_time.perf_counter() - wall0,
    )
    return st, report


def _shift_window(st: ComponentWavefunction, cells: int):
    n = st.particle_count
    for slot in range(n):
        axis = n + slot
        moved = np.moveaxis(st.amps, axis, -1)
        moved[..., :-cells] = moved[..., cells:].copy()
        moved[..., -cells:] = 0.0
    st.grids = tuple(g.shifted(cells) for g in st.grids)


def apply_gate_matrix(state: ComponentWavefunction, qubit: int, u: np.ndarray) -> ComponentWavefunction:
    """Pointwise one-qubit gate: mixes the two wire components of a qubit.

    The mixing is identical at every grid point; spatial profiles are
    untouched.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2) or np.max(np.abs(u.conj().T @ u - np.eye(2))) > 1e-10:
        raise ValueError("gate matrix must be 2x2 unitary")
    slot = state.slot_of(qubit)
    out = state.copy()
    sl0 = [slice(None)] * state.particle_count
    sl1 = list(sl0)
    sl0[slot], sl1[slot] = 0, 1
    a0 = state.amps[tuple(sl0)]
    a1 = state.amps[tuple(sl1)]
    out.amps[tuple(sl0)] = u[0, 0] * a0 + u[0, 1] * a1
    out.amps[tuple(sl1)] = u[1, 0] * a0 + u[1, 1] * a1
    return out


def convergence_check(run, numerics: NumericsParams, factor: float | None = None) -> dict:
    """Self-consistency of a run against a refined time step.

    run(numerics) must return the final ComponentWavefunction.  Returns
    the overlap deviation 1 - |<psi_dt | psi_dt/f>| together with the
    relative phase between the two solutions, which matters whenever the
    run feeds a phase calibration.
    """
    factor = factor or numerics.convergence_refinement
    coarse = run(numerics)
    if factor == 1.0:
        return {"factor": 1.0, "deviation": 0.0, "phase_difference": 0.0}
    fine = run(numerics.with_dt(numerics.dt / factor))
    from .grid_state import overlap as _ov

    ov = _ov(coarse, fine) / np.sqrt(norm2(coarse) * norm2(fine))
    return {
        "factor": factor,
        "deviation": float(1.0 - abs(ov)),
        "phase_difference": float(np.angle(ov)),
    }
