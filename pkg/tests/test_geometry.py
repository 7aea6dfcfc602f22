import numpy as np
import pytest

from sawteleport import geometry as geo

P = geo.PhysicalParams()
BP = geo.default_blueprint()


class TestSawPotential:
    def test_zero_at_wave_origin(self):
        assert abs(geo.saw_potential(P.sound_speed * 123.0, 123.0, P)) < 1e-15

    def test_crest_quarter_wavelength_ahead(self):
        t = 5000.0
        y = P.sound_speed * t + P.saw_wavelength / 4.0
        assert abs(geo.saw_potential(y, t, P) - 0.020) < 1e-15

    def test_periods(self):
        y, t = 37.0, 911.0
        v0 = geo.saw_potential(y, t, P)
        assert abs(geo.saw_potential(y + P.saw_wavelength, t, P) - v0) < 1e-12
        t_period = P.saw_wavelength / P.sound_speed
        assert abs(t_period - 200.0 / 3.3e-3) < 1e-6  # ~60606 fs
        assert abs(geo.saw_potential(y, t + t_period, P) - v0) < 1e-12

    def test_minimum_position(self):
        t = 777.0
        y = geo.saw_minimum_position(0, t, P)
        assert abs(geo.saw_potential(y, t, P) + P.saw_amplitude) < 1e-12


class TestPairDistance:
    def test_plateau_separation(self):
        c = BP.by_role("bell_coupler")
        mid = 0.5 * sum(c.plateau_interval)
        d = geo.pair_distance(BP, (2, 0, mid), (1, 1, mid))
        assert abs(float(d) - 5.0) < 1e-9

    def test_symmetric(self):
        a, b = (2, 0, 140.0), (1, 1, 160.0)
        assert float(geo.pair_distance(BP, a, b)) == pytest.approx(
            float(geo.pair_distance(BP, b, a))
        )

    def test_far_region_pitch(self):
        d = geo.pair_distance(BP, (2, 0, -40.0), (1, 1, -40.0))
        assert abs(float(d) - BP.wire_pitch_far) < 1e-9

    def test_lower_bound(self):
        for ya, yb in [(-40.0, -10.0), (100.0, 180.0)]:
            d = float(geo.pair_distance(BP, (3, 0, ya), (2, 1, yb)))
            assert d >= abs(ya - yb) - 1e-12

    def test_same_qubit_rejected(self):
        with pytest.raises(ValueError):
            geo.pair_distance(BP, (2, 0, 0.0), (2, 1, 0.0))


class TestScreenedCoulomb:
    def test_plateau_value(self):
        expected = P.coulomb_constant / (P.relative_permittivity * 5.0) * np.exp(-1.0)
        got = float(geo.screened_coulomb(5.0, P))
        assert got == pytest.approx(expected, rel=1e-12)
        assert abs(got - 8.2e-3) < 2e-4

    def test_screening_length_definition(self):
        bare = P.coulomb_constant / (P.relative_permittivity * P.screening_length)
        got = float(geo.screened_coulomb(P.screening_length, P))
        assert got == pytest.approx(bare * np.exp(-1.0), rel=1e-12)

    def test_monotone_decreasing(self):
        r = np.linspace(1.0, 100.0, 400)
        v = geo.screened_coulomb(r, P)
        assert np.all(np.diff(v) < 0)

    def test_screened_product_constant(self):
        r = np.linspace(1.0, 60.0, 50)
        prod = geo.screened_coulomb(r, P) * r * np.exp(r / P.screening_length)
        assert np.allclose(prod, P.coulomb_constant / P.relative_permittivity, rtol=1e-12)


class TestBarrierPotential:
    def test_zero_outside(self):
        bp = geo.DeviceBlueprint(
            elements=[geo.BarrierElement(1, 0, 10.0, 20.0, 5e-4, mode="height")]
        )
        assert float(geo.barrier_potential(bp, 1, 0, 5.0)) == 0.0
        assert float(geo.barrier_potential(bp, 1, 0, 40.0)) == 0.0
        assert float(geo.barrier_potential(bp, 1, 1, 15.0)) == 0.0

    def test_height_inside(self):
        bp = geo.DeviceBlueprint(
            elements=[geo.BarrierElement(1, 0, 10.0, 20.0, 5e-4, mode="height")]
        )
        assert float(geo.barrier_potential(bp, 1, 0, 15.0)) == pytest.approx(5e-4)

    def test_phase_mode_contributes_no_potential(self):
        v = geo.barrier_potential(BP, 3, 1, 100.0)  # sp_r1 is phase mode
        assert float(v) == 0.0


class TestTotalPairPotential:
    def test_pure_saw_far_from_elements(self):
        y = -45.0
        v = geo.total_pair_potential(BP, P, (2, 1), (1, 1), y, y, 0.0)
        expected = 2.0 * geo.saw_potential(y, 0.0, P)
        assert float(v) == pytest.approx(float(expected), abs=1e-15)

    def test_plateau_adds_coulomb(self):
        c = BP.by_role("bell_coupler")
        mid = 0.5 * sum(c.plateau_interval)
        t = (mid - BP.injection_center) / P.sound_speed
        v = geo.total_pair_potential(BP, P, (2, 1), (0, 1), mid, mid, t)
        expected = 2.0 * geo.saw_potential(mid, t, P) + geo.screened_coulomb(5.0, P)
        assert float(v) == pytest.approx(float(expected), rel=1e-12)

    def test_only_facing_branch_feels_coupler(self):
        c = BP.by_role("bell_coupler")
        mid = 0.5 * sum(c.plateau_interval)
        saw2 = 2.0 * geo.saw_potential(mid, 0.0, P)
        facing = float(geo.total_pair_potential(BP, P, (2, 1), (0, 1), mid, mid, 0.0)) - saw2
        assert facing == pytest.approx(float(geo.screened_coulomb(5.0, P)), rel=1e-9)
        for bits in [(0, 0), (1, 0), (1, 1)]:
            rest = float(geo.total_pair_potential(BP, P, (2, 1), bits, mid, mid, 0.0)) - saw2
            assert rest < 1e-6

    def test_rejects_non_adjacent(self):
        with pytest.raises(ValueError):
            geo.total_pair_potential(BP, P, (3, 1), (0, 1), 0.0, 0.0, 0.0)


class TestValidate:
    def test_default_blueprint_clean(self):
        issues = geo.validate_blueprint(BP, P)
        assert geo.blueprint_errors(issues) == []

    def test_overlapping_barriers_flagged(self):
        bp = geo.DeviceBlueprint(
            elements=[
                geo.BarrierElement(1, 0, 0.0, 30.0, 1e-4, mode="height", role="a"),
                geo.BarrierElement(1, 1, 20.0, 30.0, 1e-4, mode="height", role="b"),
            ]
        )
        codes = [i["code"] for i in geo.blueprint_errors(geo.validate_blueprint(bp))]
        assert "overlap" in codes

    def test_non_adjacent_coupler_flagged(self):
        bp = geo.DeviceBlueprint(
            elements=[geo.CouplerElement((3, 1), 0.0, 50.0, 100.0, 5.0, role="bad")]
        )
        codes = [i["code"] for i in geo.blueprint_errors(geo.validate_blueprint(bp))]
        assert "non-adjacent" in codes


class TestWirePaths:
    def test_offsets_continuous(self):
        y = np.linspace(-100.0, 900.0, 5000)
        for q in (1, 2, 3):
            for w in (0, 1):
                x = BP.lateral_offset(q, w, y)
                assert np.max(np.abs(np.diff(x))) < 0.5  # bounded slope, no jumps

    def test_deflection_reaches_plateau(self):
        c = BP.by_role("bell_coupler")
        mid = 0.5 * sum(c.plateau_interval)
        depth = 0.5 * (BP.wire_pitch_far - c.plateau_separation)
        x21 = BP.lateral_offset(2, 0, mid)
        assert float(x21) == pytest.approx(BP.base_offset(2, 0) - depth)
