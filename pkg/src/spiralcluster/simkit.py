"""Synthetic spiral-track event generation.

Charged particles are integrated through an axial magnetic field with a
speed-dependent drag that stands in for energy loss in the detector
gas, producing the characteristic shrinking spirals.  Events are point
clouds of (x, y, z, charge) in millimeters, with charge proportional to
the energy deposited between samples.  Dedicated noise injection adds
uncorrelated uniform points and structured circular-arc chains.

Internally the integrator works in SI units (meters, seconds, kg, C);
all public interfaces speak mm / MeV / Tesla / elementary charges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, NumericError
from .fileio import atomic_write_text
from .seeding import rng_for

# Unit conversions (CODATA).
C_LIGHT = 299792458.0               # m/s
MEV_TO_J = 1.602176634e-13
KG_PER_MEV_C2 = 1.78266192e-30
ELEMENTARY_CHARGE = 1.602176634e-19  # C

PROTON_MASS_MEV = 938.27208816
CARBON_MASS_MEV = 11177.93          # 12C

# Integration policy.
STEPS_PER_PERIOD = 300       # RK4 steps per cyclotron period
SAMPLE_EVERY = 2             # emit one point every this many steps
MAX_STEPS = 100_000          # guards the zero-field, zero-drag pathology
STOP_SPEED_FRACTION = 1e-3   # terminate once speed drops below this x v0
DEPOSIT_JITTER = 0.05        # relative gain fluctuation on deposited charge

# Default drag: for drag_exponent = 1 the coefficient has units 1/s.
# 4e7 stops a few-MeV proton in ~5 cyclotron turns at 2 Tesla.
DEFAULT_DRAG = 4.0e7
# Heavier ionization for carbon: shorter, stubbier tracks.
CARBON_DRAG_SCALE = 8.0

# Per-class kinematic sampling ranges used by generate_dataset.
PROTON_ENERGY_MEV = (2.0, 6.0)
CARBON_ENERGY_MEV = (1.0, 4.0)
TRACK_POLAR_RANGE = (0.35 * math.pi, 0.65 * math.pi)

LABELS = ("proton", "carbon", "other")


@dataclass
class ParticleSpec:
    """One particle's launch conditions."""

    mass: float              # MeV/c^2
    charge: float            # elementary-charge units
    initial_energy: float    # MeV, kinetic
    polar_angle: float       # radians from +z
    azimuthal_angle: float   # radians
    vertex: tuple[float, float, float] = (0.0, 0.0, 500.0)  # mm

    def __post_init__(self):
        if self.mass <= 0:
            raise ContractError(f"mass must be > 0, got {self.mass}")
        if self.charge == 0:
            raise ContractError("charge must be nonzero")
        if self.initial_energy <= 0:
            raise ContractError(f"initial_energy must be > 0, got {self.initial_energy}")
        if not 0 <= self.polar_angle <= math.pi:
            raise ContractError(f"polar_angle must be in [0, pi], got {self.polar_angle}")


@dataclass
class FieldConfig:
    """Axial magnetic field plus the drag model a = -k |v|^n v_hat."""

    b_field: float = 2.0            # Tesla, along +z
    drag_coefficient: float = DEFAULT_DRAG
    drag_exponent: float = 1.0

    def __post_init__(self):
        if self.b_field < 0:
            raise ContractError(f"b_field must be >= 0, got {self.b_field}")
        if self.drag_coefficient < 0:
            raise ContractError("drag_coefficient must be >= 0")


@dataclass
class EventCloud:
    """One event: charge-weighted 3-D points plus an optional class tag."""

    id: str
    points: np.ndarray                    # (n, 4) columns x, y, z [mm], charge
    label: str | None = None
    meta: dict = field(default_factory=dict)  # diagnostics, not serialized

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(self.points)):
            raise ContractError(f"event {self.id}: non-finite point coordinates")
        if self.points.shape[0] and np.any(self.points[:, 3] < 0):
            raise ContractError(f"event {self.id}: negative charge")


@dataclass
class NoiseConfig:
    uniform_count: int = 0
    structured_arc_count: int = 0
    charge_jitter: float = 0.0    # relative std-dev, multiplicative

    def __post_init__(self):
        if self.uniform_count < 0 or self.structured_arc_count < 0:
            raise ContractError("noise counts must be >= 0")
        if self.charge_jitter < 0:
            raise ContractError("charge_jitter must be >= 0")


@dataclass
class SimDatasetConfig:
    counts: dict[str, int] = field(default_factory=dict)  # per-class event counts
    detector_radius: float = 275.0   # mm
    detector_length: float = 1000.0  # mm
    time_buckets: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        if self.detector_radius <= 0 or self.detector_length <= 0:
            raise ContractError("detector dimensions must be > 0")
        if self.time_buckets <= 0:
            raise ContractError("time_buckets must be > 0")
        for name, count in self.counts.items():
            if name not in LABELS:
                raise ContractError(f"unknown class {name!r}, expected one of {LABELS}")
            if count < 0:
                raise ContractError(f"count for {name!r} must be >= 0")


def rk4_step(state: np.ndarray, dt: float, dynamics) -> np.ndarray:
    """Classical 4th-order Runge-Kutta update of a (pos, vel) 6-vector.

    ``dynamics(state) -> acceleration`` supplies the force model; the
    derivative is assembled as (velocity, acceleration).
    """
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (6,):
        raise ContractError(f"state must be a 6-vector, got shape {state.shape}")
    if not np.all(np.isfinite(state)):
        raise NumericError("non-finite state entering rk4_step")
    if dt <= 0:
        raise ContractError(f"dt must be > 0, got {dt}")

    def deriv(s):
        acc = np.asarray(dynamics(s), dtype=np.float64)
        if not np.all(np.isfinite(acc)):
            raise NumericError("dynamics returned non-finite acceleration")
        return np.concatenate((s[3:], acc))

    k1 = deriv(state)
    k2 = deriv(state + 0.5 * dt * k1)
    k3 = deriv(state + 0.5 * dt * k2)
    k4 = deriv(state + dt * k3)
    return state + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def lorentz_drag_dynamics(field: FieldConfig, charge_e: float, mass_mev: float):
    """Acceleration closure for a B-ez field plus speed-power drag."""
    q_over_m = (charge_e * ELEMENTARY_CHARGE) / (mass_mev * KG_PER_MEV_C2)
    qmb = q_over_m * field.b_field
    k = field.drag_coefficient
    n = field.drag_exponent

    def dynamics(state):
        vx, vy, vz = state[3], state[4], state[5]
        ax = qmb * vy
        ay = -qmb * vx
        az = 0.0
        if k > 0.0:
            speed = math.sqrt(vx * vx + vy * vy + vz * vz)
            if speed > 0.0:
                f = k * speed ** (n - 1.0)
                ax -= f * vx
                ay -= f * vy
                az -= f * vz
        return np.array((ax, ay, az))

    return dynamics


def cyclotron_period(mass_mev: float, charge_e: float, b_field: float) -> float:
    """Non-relativistic cyclotron period in seconds."""
    return (
        2.0 * math.pi * mass_mev * KG_PER_MEV_C2
        / (abs(charge_e) * ELEMENTARY_CHARGE * b_field)
    )


def initial_speed(mass_mev: float, energy_mev: float) -> float:
    """Speed in m/s from non-relativistic kinetic energy."""
    return math.sqrt(2.0 * energy_mev * MEV_TO_J / (mass_mev * KG_PER_MEV_C2))


def classify_species(mass_mev: float, charge_e: float) -> str | None:
    if abs(charge_e) == 1 and abs(mass_mev - PROTON_MASS_MEV) / PROTON_MASS_MEV < 0.05:
        return "proton"
    if abs(charge_e) == 6 and abs(mass_mev - CARBON_MASS_MEV) / CARBON_MASS_MEV < 0.05:
        return "carbon"
    return None


def _quantize_z(z_mm: np.ndarray, detector: SimDatasetConfig) -> np.ndarray:
    """Snap z to time-bucket centers, mimicking the discretized drift axis."""
    width = detector.detector_length / detector.time_buckets
    bucket = np.clip(np.floor(z_mm / width), 0, detector.time_buckets - 1)
    return (bucket + 0.5) * width


def simulate_track(
    particle: ParticleSpec,
    field: FieldConfig,
    detector: SimDatasetConfig,
    rng: np.random.Generator,
    event_id: str = "track",
) -> EventCloud:
    """Integrate one particle until it stops or leaves the detector.

    Emits a point every ``SAMPLE_EVERY`` steps with charge proportional
    to the energy deposited since the previous sample (small multiplicative
    gain fluctuation from ``rng``), z snapped to time-bucket centers.
    """
    mass_kg = particle.mass * KG_PER_MEV_C2
    v0 = initial_speed(particle.mass, particle.initial_energy)
    st, ct = math.sin(particle.polar_angle), math.cos(particle.polar_angle)
    state = np.array(
        [
            particle.vertex[0] * 1e-3,
            particle.vertex[1] * 1e-3,
            particle.vertex[2] * 1e-3,
            v0 * st * math.cos(particle.azimuthal_angle),
            v0 * st * math.sin(particle.azimuthal_angle),
            v0 * ct,
        ]
    )
    dynamics = lorentz_drag_dynamics(field, particle.charge, particle.mass)

    if field.b_field > 0:
        dt = cyclotron_period(particle.mass, particle.charge, field.b_field) / STEPS_PER_PERIOD
    elif field.drag_coefficient > 0:
        # Drag time scale 1 / (k v^(n-1)) at launch speed.
        dt = 1.0 / (field.drag_coefficient * v0 ** (field.drag_exponent - 1.0)) / STEPS_PER_PERIOD
    else:
        dt = (detector.detector_radius * 1e-3) / v0 / 200.0

    r_max = detector.detector_radius * 1e-3
    z_max = detector.detector_length * 1e-3
    stop_speed = STOP_SPEED_FRACTION * v0

    def kinetic_mev(s):
        v2 = s[3] ** 2 + s[4] ** 2 + s[5] ** 2
        return 0.5 * mass_kg * v2 / MEV_TO_J

    positions: list[tuple[float, float, float]] = []
    charges: list[float] = []
    velocities: list[tuple[float, float, float]] = []
    energy_at_last_sample = kinetic_mev(state)
    truncated = False

    step = 0
    while True:
        if step >= MAX_STEPS:
            truncated = True
            break
        state = rk4_step(state, dt, dynamics)
        step += 1
        x, y, z = state[0], state[1], state[2]
        if x * x + y * y > r_max * r_max or z < 0.0 or z > z_max:
            break
        speed = math.sqrt(state[3] ** 2 + state[4] ** 2 + state[5] ** 2)
        if step % SAMPLE_EVERY == 0:
            energy_now = kinetic_mev(state)
            deposit = max(0.0, energy_at_last_sample - energy_now)
            gain = max(0.0, 1.0 + DEPOSIT_JITTER * rng.standard_normal())
            positions.append((x * 1e3, y * 1e3, z * 1e3))
            charges.append(deposit * gain)
            velocities.append((state[3], state[4], state[5]))
            energy_at_last_sample = energy_now
        if speed < stop_speed:
            break

    if positions:
        pts = np.asarray(positions, dtype=np.float64)
        pts[:, 2] = _quantize_z(pts[:, 2], detector)
        points = np.column_stack([pts, np.asarray(charges, dtype=np.float64)])
    else:
        points = np.empty((0, 4), dtype=np.float64)

    return EventCloud(
        id=event_id,
        points=points,
        label=classify_species(particle.mass, particle.charge),
        meta={
            "velocities": np.asarray(velocities, dtype=np.float64).reshape(-1, 3),
            "steps": step,
            "truncated": truncated,
            "dt": dt,
        },
    )


def _uniform_cylinder_points(
    rng: np.random.Generator, count: int, detector: SimDatasetConfig, charge_scale: float
) -> np.ndarray:
    r = detector.detector_radius * np.sqrt(rng.uniform(size=count))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
    z = rng.uniform(0.0, detector.detector_length, size=count)
    charge = rng.uniform(0.1, 1.0, size=count) * charge_scale
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z, charge])


def _arc_points(
    rng: np.random.Generator, detector: SimDatasetConfig, charge_scale: float
) -> np.ndarray:
    """One structured-noise chain: points along a random circular arc."""
    count = int(rng.integers(20, 45))
    rad = rng.uniform(0.1, 0.5) * detector.detector_radius
    c_r = rng.uniform(0.0, 0.6) * detector.detector_radius
    c_t = rng.uniform(0.0, 2.0 * math.pi)
    cx, cy = c_r * math.cos(c_t), c_r * math.sin(c_t)
    start = rng.uniform(0.0, 2.0 * math.pi)
    span = rng.uniform(math.pi / 3.0, 1.5 * math.pi)
    z = rng.uniform(0.0, detector.detector_length)
    angles = start + np.linspace(0.0, span, count)
    scatter = rng.normal(0.0, 1.0, size=(count, 2))  # mm jitter off the arc
    x = cx + rad * np.cos(angles) + scatter[:, 0]
    y = cy + rad * np.sin(angles) + scatter[:, 1]
    # Clip into the detector disc.
    rr = np.hypot(x, y)
    keep = rr <= detector.detector_radius
    charge = rng.uniform(0.1, 1.0, size=count) * charge_scale
    return np.column_stack([x, y, np.full(count, z), charge])[keep]


def inject_noise(
    cloud: EventCloud,
    noise: NoiseConfig,
    rng: np.random.Generator,
    detector: SimDatasetConfig | None = None,
) -> EventCloud:
    """Append uncorrelated and structured noise; original points stay first.

    A zero config is the identity.  Charge jitter, when nonzero, applies
    multiplicatively to every point (clamped at zero).
    """
    if (
        noise.uniform_count == 0
        and noise.structured_arc_count == 0
        and noise.charge_jitter == 0.0
    ):
        return EventCloud(cloud.id, cloud.points.copy(), cloud.label, dict(cloud.meta))
    detector = detector or SimDatasetConfig()

    base = cloud.points
    positive = base[base[:, 3] > 0, 3]
    charge_scale = float(np.median(positive)) if positive.size else 1.0

    parts = [base]
    if noise.uniform_count:
        parts.append(_uniform_cylinder_points(rng, noise.uniform_count, detector, charge_scale))
    for _ in range(noise.structured_arc_count):
        parts.append(_arc_points(rng, detector, charge_scale))
    points = np.concatenate(parts, axis=0) if len(parts) > 1 else base.copy()

    if noise.charge_jitter > 0:
        factor = 1.0 + noise.charge_jitter * rng.standard_normal(len(points))
        points = points.copy()
        points[:, 3] = np.maximum(0.0, points[:, 3] * factor)

    return EventCloud(cloud.id, points, cloud.label, dict(cloud.meta))


def _sample_track_spec(
    rng: np.random.Generator, label: str, detector: SimDatasetConfig
) -> ParticleSpec:
    if label == "proton":
        mass, charge, erange = PROTON_MASS_MEV, 1.0, PROTON_ENERGY_MEV
    else:
        mass, charge, erange = CARBON_MASS_MEV, 6.0, CARBON_ENERGY_MEV
    energy = rng.uniform(*erange)
    polar = rng.uniform(*TRACK_POLAR_RANGE)
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    vertex = (
        rng.normal(0.0, 3.0),
        rng.normal(0.0, 3.0),
        rng.uniform(0.25, 0.75) * detector.detector_length,
    )
    return ParticleSpec(mass, charge, energy, polar, azimuth, vertex)


def generate_dataset(
    config: SimDatasetConfig,
    field_cfg: FieldConfig,
    noise: NoiseConfig,
    seed: int | None = None,
) -> list[EventCloud]:
    """Generate the configured class multiset of labeled events.

    Each event is a pure function of (config, per-event sub-seed), so
    the dataset is reproducible and order-stable.  The "other" class is
    pure noise: uniform points plus a few structured arcs, no track.
    """
    base_seed = config.rng_seed if seed is None else seed
    events: list[EventCloud] = []
    for class_idx, label in enumerate(LABELS):
        for i in range(config.counts.get(label, 0)):
            rng = rng_for(base_seed, "simkit.event", class_idx, i)
            event_id = f"{label}-{i:06d}"
            if label == "other":
                # Amorphous event: uniform points plus arcs, charges on the
                # same scale as typical track deposits.
                scale = 0.05
                parts = [_uniform_cylinder_points(rng, int(rng.integers(150, 400)), config, scale)]
                for _ in range(int(rng.integers(1, 4))):
                    parts.append(_arc_points(rng, config, scale))
                cloud = EventCloud(event_id, np.concatenate(parts, axis=0), label="other")
                if noise.charge_jitter > 0:
                    cloud = inject_noise(
                        cloud, NoiseConfig(charge_jitter=noise.charge_jitter), rng, config
                    )
            else:
                eff_field = field_cfg
                if label == "carbon":
                    eff_field = replace(
                        field_cfg,
                        drag_coefficient=field_cfg.drag_coefficient * CARBON_DRAG_SCALE,
                    )
                spec = _sample_track_spec(rng, label, config)
                cloud = simulate_track(spec, eff_field, config, rng, event_id)
                cloud = inject_noise(cloud, noise, rng, config)
            events.append(cloud)
    return events


def write_events(path, events: list[EventCloud]) -> None:
    """JSON-lines event file: {"id", "label", "points": [[x,y,z,q], ...]}."""
    lines = []
    for ev in events:
        lines.append(
            json.dumps(
                {"id": ev.id, "label": ev.label, "points": ev.points.tolist()},
                sort_keys=True,
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_events(path) -> list[EventCloud]:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            events.append(
                EventCloud(
                    id=str(obj["id"]),
                    points=np.asarray(obj["points"], dtype=np.float64).reshape(-1, 4),
                    label=obj.get("label"),
                )
            )
    return events


def events_config_from_dict(doc: dict) -> tuple[SimDatasetConfig, FieldConfig, NoiseConfig]:
    """Parse the single-JSON simulation config mirroring the dataclass fields."""
    sim = SimDatasetConfig(
        counts={k: int(v) for k, v in doc.get("counts", {}).items()},
        detector_radius=float(doc.get("detector_radius", 275.0)),
        detector_length=float(doc.get("detector_length", 1000.0)),
        time_buckets=int(doc.get("time_buckets", 512)),
        rng_seed=int(doc.get("rng_seed", 0)),
    )
    fdoc = doc.get("field", {})
    field_cfg = FieldConfig(
        b_field=float(fdoc.get("b_field", 2.0)),
        drag_coefficient=float(fdoc.get("drag_coefficient", DEFAULT_DRAG)),
        drag_exponent=float(fdoc.get("drag_exponent", 1.0)),
    )
    ndoc = doc.get("noise", {})
    noise = NoiseConfig(
        uniform_count=int(ndoc.get("uniform_count", 0)),
        structured_arc_count=int(ndoc.get("structured_arc_count", 0)),
        charge_jitter=float(ndoc.get("charge_jitter", 0.0)),
    )
    return sim, field_cfg, noise
