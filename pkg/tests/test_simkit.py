"""Simulator tests: RK4 contracts, cyclotron analytics, noise, datasets."""

import math

import numpy as np
import pytest

from spiralcluster import simkit
from spiralcluster.errors import ContractError, NumericError
from spiralcluster.simkit import (
    CARBON_MASS_MEV,
    ELEMENTARY_CHARGE,
    KG_PER_MEV_C2,
    PROTON_MASS_MEV,
    EventCloud,
    FieldConfig,
    NoiseConfig,
    ParticleSpec,
    SimDatasetConfig,
    cyclotron_period,
    generate_dataset,
    initial_speed,
    inject_noise,
    rk4_step,
    simulate_track,
)


def circumradius(p1, p2, p3):
    """Radius of the circle through three 2-D points (geometry oracle)."""
    a = np.hypot(*(p2 - p3))
    b = np.hypot(*(p1 - p3))
    c = np.hypot(*(p1 - p2))
    area = abs(
        (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p2[1] - p1[1])
    ) / 2.0
    return a * b * c / (4.0 * area)


class TestRk4Step:
    def test_force_free_linear_motion_exact(self):
        state = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        out = rk4_step(state, 1.0, lambda s: np.zeros(3))
        assert out.tolist() == [1.0, 0.0, 0.0, 1.0, 0.0, 0.0]

    def test_magnetic_field_preserves_speed(self):
        # Magnetic force does no work: |v| conserved to integrator accuracy.
        field = FieldConfig(b_field=2.0, drag_coefficient=0.0)
        dyn = simkit.lorentz_drag_dynamics(field, 1.0, PROTON_MASS_MEV)
        v0 = initial_speed(PROTON_MASS_MEV, 4.0)
        period = cyclotron_period(PROTON_MASS_MEV, 1.0, 2.0)
        state = np.array([0.0, 0.0, 0.0, 0.0, v0, 0.0])
        dt = period / 1000.0
        for _ in range(1000):
            state = rk4_step(state, dt, dyn)
        speed = np.linalg.norm(state[3:])
        assert abs(speed - v0) / v0 < 1e-6

    def test_cyclotron_radius_matches_analytic(self):
        # Analytic oracle: r = p_perp / (qB) for a circular orbit.
        b = 2.0
        field = FieldConfig(b_field=b, drag_coefficient=0.0)
        dyn = simkit.lorentz_drag_dynamics(field, 1.0, PROTON_MASS_MEV)
        v0 = initial_speed(PROTON_MASS_MEV, 5.0)
        mass_kg = PROTON_MASS_MEV * KG_PER_MEV_C2
        r_analytic = mass_kg * v0 / (ELEMENTARY_CHARGE * b)
        period = cyclotron_period(PROTON_MASS_MEV, 1.0, b)

        # Launch along +y from the origin; positive charge curves toward +x,
        # so the orbit center sits at (r, 0).
        center = np.array([r_analytic, 0.0])
        state = np.array([0.0, 0.0, 0.0, 0.0, v0, 0.0])
        dt = period / 1000.0
        worst = 0.0
        for _ in range(1000):
            state = rk4_step(state, dt, dyn)
            r = np.hypot(*(state[:2] - center))
            worst = max(worst, abs(r - r_analytic) / r_analytic)
        assert worst < 1e-3

    def test_drag_monotone_energy(self):
        field = FieldConfig(b_field=2.0, drag_coefficient=4e7)
        dyn = simkit.lorentz_drag_dynamics(field, 1.0, PROTON_MASS_MEV)
        v0 = initial_speed(PROTON_MASS_MEV, 4.0)
        state = np.array([0.0, 0.0, 0.0, v0 / 2, v0 / 2, v0 / 4])
        dt = cyclotron_period(PROTON_MASS_MEV, 1.0, 2.0) / 300.0
        prev = np.linalg.norm(state[3:])
        for _ in range(2000):
            state = rk4_step(state, dt, dyn)
            speed = np.linalg.norm(state[3:])
            assert speed < prev
            prev = speed

    def test_nonfinite_state_rejected(self):
        state = np.array([0.0, 0.0, 0.0, np.nan, 0.0, 0.0])
        with pytest.raises(NumericError):
            rk4_step(state, 1.0, lambda s: np.zeros(3))

    def test_bad_dt_rejected(self):
        with pytest.raises(ContractError):
            rk4_step(np.zeros(6), 0.0, lambda s: np.zeros(3))


class TestSimulateTrack:
    def proton_spec(self):
        return ParticleSpec(
            mass=PROTON_MASS_MEV,
            charge=1.0,
            initial_energy=4.0,
            polar_angle=math.pi / 2,
            azimuthal_angle=0.3,
            vertex=(0.0, 0.0, 500.0),
        )

    def test_spiral_radius_non_increasing(self):
        detector = SimDatasetConfig()
        field = FieldConfig(b_field=2.0, drag_coefficient=4e7)
        cloud = simulate_track(
            self.proton_spec(), field, detector, np.random.default_rng(0)
        )
        vel = cloud.meta["velocities"]
        assert len(vel) > 100
        # Instantaneous bending radius is proportional to transverse speed.
        v_perp = np.hypot(vel[:, 0], vel[:, 1])
        assert np.all(np.diff(v_perp) < 0)

    def test_deterministic_given_seed(self):
        detector = SimDatasetConfig()
        field = FieldConfig()
        a = simulate_track(self.proton_spec(), field, detector, np.random.default_rng(42))
        b = simulate_track(self.proton_spec(), field, detector, np.random.default_rng(42))
        assert a.points.tobytes() == b.points.tobytes()
        assert a.label == b.label == "proton"

    def test_carbon_bending_radius_one_sixth_at_equal_momentum(self):
        # r = p/(qB): at equal momentum the ratio is the inverse charge ratio.
        detector = SimDatasetConfig()
        field = FieldConfig(b_field=2.0, drag_coefficient=1e6)  # gentle drag
        e_p = 4.0
        p_mom = math.sqrt(2.0 * PROTON_MASS_MEV * e_p)  # MeV/c
        e_c = p_mom**2 / (2.0 * CARBON_MASS_MEV)
        proton = self.proton_spec()
        carbon = ParticleSpec(
            mass=CARBON_MASS_MEV,
            charge=6.0,
            initial_energy=e_c,
            polar_angle=math.pi / 2,
            azimuthal_angle=0.3,
            vertex=(0.0, 0.0, 500.0),
        )
        radii = {}
        for name, spec in [("p", proton), ("c", carbon)]:
            cloud = simulate_track(spec, field, detector, np.random.default_rng(1))
            pts = cloud.points[:, :2]
            radii[name] = circumradius(pts[0], pts[10], pts[20])
        assert radii["c"] / radii["p"] == pytest.approx(1.0 / 6.0, rel=0.01)

    def test_track_stays_inside_detector(self):
        detector = SimDatasetConfig()
        cloud = simulate_track(
            self.proton_spec(), FieldConfig(), detector, np.random.default_rng(3)
        )
        r = np.hypot(cloud.points[:, 0], cloud.points[:, 1])
        assert np.all(r <= detector.detector_radius)
        assert np.all(cloud.points[:, 2] >= 0)
        assert np.all(cloud.points[:, 2] <= detector.detector_length)

    def test_zero_field_zero_drag_terminates(self):
        # Straight line: exits the volume in bounded steps, no truncation.
        detector = SimDatasetConfig()
        spec = ParticleSpec(PROTON_MASS_MEV, 1.0, 4.0, math.pi / 2, 0.0, (0.0, 0.0, 500.0))
        field = FieldConfig(b_field=0.0, drag_coefficient=0.0)
        cloud = simulate_track(spec, field, detector, np.random.default_rng(0))
        assert not cloud.meta["truncated"]
        assert cloud.meta["steps"] < simkit.MAX_STEPS

    def test_non_stopping_closed_orbit_hits_step_cap(self):
        # Drag-free orbit that never leaves the detector: the step cap
        # terminates it and reports truncation.  1 MeV keeps the full
        # orbit diameter inside the detector radius.
        detector = SimDatasetConfig()
        spec = ParticleSpec(PROTON_MASS_MEV, 1.0, 1.0, math.pi / 2, 0.0, (0.0, 0.0, 500.0))
        field = FieldConfig(b_field=2.0, drag_coefficient=0.0)
        cloud = simulate_track(spec, field, detector, np.random.default_rng(0))
        assert cloud.meta["truncated"]
        assert cloud.meta["steps"] == simkit.MAX_STEPS


class TestInjectNoise:
    def small_cloud(self):
        rng = np.random.default_rng(5)
        pts = np.column_stack(
            [
                rng.uniform(-50, 50, 10),
                rng.uniform(-50, 50, 10),
                rng.uniform(100, 900, 10),
                rng.uniform(0.5, 1.5, 10),
            ]
        )
        return EventCloud("ev", pts, label="proton")

    def test_zero_config_is_identity(self):
        cloud = self.small_cloud()
        out = inject_noise(cloud, NoiseConfig(), np.random.default_rng(0))
        assert np.array_equal(out.points, cloud.points)
        assert out.label == cloud.label

    def test_append_semantics(self):
        cloud = self.small_cloud()
        out = inject_noise(
            cloud, NoiseConfig(uniform_count=50), np.random.default_rng(0)
        )
        assert len(out.points) == 60
        assert np.array_equal(out.points[:10, :3], cloud.points[:, :3])

    def test_uniform_points_inside_cylinder(self):
        detector = SimDatasetConfig()
        cloud = EventCloud("ev", np.empty((0, 4)))
        out = inject_noise(
            cloud, NoiseConfig(uniform_count=1000), np.random.default_rng(7), detector
        )
        r = np.hypot(out.points[:, 0], out.points[:, 1])
        assert np.all(r <= detector.detector_radius)
        assert np.all((out.points[:, 2] >= 0) & (out.points[:, 2] <= detector.detector_length))

    def test_charge_jitter_keeps_charges_nonnegative(self):
        cloud = self.small_cloud()
        out = inject_noise(
            cloud, NoiseConfig(charge_jitter=2.0), np.random.default_rng(11)
        )
        assert np.all(out.points[:, 3] >= 0)
        assert np.array_equal(out.points[:, :3], cloud.points[:, :3])


class TestGenerateDataset:
    def test_exact_class_counts(self):
        config = SimDatasetConfig(counts={"proton": 5, "carbon": 5, "other": 0}, rng_seed=1)
        events = generate_dataset(config, FieldConfig(), NoiseConfig())
        assert len(events) == 10
        labels = [e.label for e in events]
        assert labels.count("proton") == 5
        assert labels.count("carbon") == 5

    def test_full_scale_config_accepted(self):
        # Training-set shape at full scale: 80000 events, even two-class split.
        config = SimDatasetConfig(counts={"proton": 40000, "carbon": 40000})
        assert sum(config.counts.values()) == 80000
        assert config.counts["proton"] == config.counts["carbon"]

    def test_deterministic(self):
        config = SimDatasetConfig(
            counts={"proton": 3, "carbon": 2, "other": 2}, rng_seed=9
        )
        noise = NoiseConfig(uniform_count=20, structured_arc_count=1, charge_jitter=0.1)
        a = generate_dataset(config, FieldConfig(), noise)
        b = generate_dataset(config, FieldConfig(), noise)
        assert [e.label for e in a] == [e.label for e in b]
        for ea, eb in zip(a, b):
            assert ea.points.tobytes() == eb.points.tobytes()

    def test_empty_dataset_valid(self):
        config = SimDatasetConfig(counts={}, rng_seed=0)
        assert generate_dataset(config, FieldConfig(), NoiseConfig()) == []

    def test_energy_monotone_along_all_tracks(self):
        config = SimDatasetConfig(counts={"proton": 3, "carbon": 3}, rng_seed=2)
        for event in generate_dataset(config, FieldConfig(), NoiseConfig()):
            vel = event.meta["velocities"]
            speed = np.linalg.norm(vel, axis=1)
            assert np.all(np.diff(speed) < 0)


class TestEventsFile:
    def test_round_trip(self, tmp_path):
        config = SimDatasetConfig(counts={"proton": 2, "other": 1}, rng_seed=4)
        events = generate_dataset(config, FieldConfig(), NoiseConfig(uniform_count=5))
        path = tmp_path / "events.jsonl"
        simkit.write_events(path, events)
        loaded = simkit.read_events(path)
        assert [e.id for e in loaded] == [e.id for e in events]
        assert [e.label for e in loaded] == [e.label for e in events]
        for a, b in zip(loaded, events):
            assert np.array_equal(a.points, b.points)

    def test_validation_rejects_negative_charge(self):
        with pytest.raises(ContractError):
            EventCloud("bad", np.array([[0.0, 0.0, 0.0, -1.0]]))
