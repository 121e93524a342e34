"""Deterministic walking-scenario simulator.

Produces the two sensor streams a live deployment would provide: radar point
clouds from a fixed imaging radar, and per-client IMU samples. Everything is a
pure function of (config, seed, time), so equal configs reproduce byte-identical
streams.

Geometry: paths, clutter and the radar pose live in a shared world frame.
Point clouds are reported in the radar frame, which is the world frame
translated so the radar sits at the origin (axes stay aligned; the radar pose
carries no rotation).

Radar returns come from the sensor-facing half of a body cylinder: yaw angles
are sampled on the semicircular arc facing the radar, heights inside a torso
band. This reproduces the centroid drift toward the radar that a real
surface-only return exhibits; the downstream tracker has to deal with it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .imu import GRAVITY_MPS2, ImuSample

# body model for clients and walkers
BODY_Z_MIN_M = 0.8
BODY_Z_MAX_M = 1.4

# static clutter objects scatter their points once within this radius
CLUTTER_SPREAD_M = 0.25

# IMU noise scales off noise_sigma_m so a noiseless config has noiseless sensors.
# The gyro figure models a window-averaged consumer MEMS rate (noise density
# shrinks with averaging), the accel figure a raw torso-mounted accelerometer.
IMU_ACCEL_NOISE_PER_SIGMA = 0.4  # (m/s^2) per meter of noise_sigma_m
IMU_GYRO_NOISE_PER_SIGMA = 0.002  # (rad/s) per meter of noise_sigma_m

# substream ids for per-purpose RNG derivation
_STREAM_CLUTTER = 0
_STREAM_CLOUD = 1
_STREAM_IMU = 2


def _wrap_pi(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class PathSpec:
    """Piecewise-linear waypoint path walked at constant speed after a hold."""

    waypoints: tuple[tuple[float, float], ...]
    speed_mps: float
    initial_hold_s: float = 0.0

    def validate(self, name: str) -> None:
        if len(self.waypoints) < 2:
            raise ValidationError(f"{name}.waypoints needs at least 2 waypoints")
        for k in range(len(self.waypoints) - 1):
            a, b = self.waypoints[k], self.waypoints[k + 1]
            if math.hypot(b[0] - a[0], b[1] - a[1]) == 0.0:
                raise ValidationError(f"{name}.waypoints[{k}] and [{k + 1}] coincide")
        if self.speed_mps < 0:
            raise ValidationError(f"{name}.speed_mps must be >= 0")
        if self.initial_hold_s < 0:
            raise ValidationError(f"{name}.initial_hold_s must be >= 0")


@dataclass(frozen=True)
class ClutterSpec:
    """A static scatterer: a point count scattered around a fixed 3-D position."""

    position: tuple[float, float, float]
    point_count: int


@dataclass
class ScenarioConfig:
    frame_time_s: float = 0.5
    duration_s: float = 10.0
    radar_pose: tuple[float, float, float] = (0.0, 0.0, 1.0)
    clients: tuple[PathSpec, ...] = ()
    clutter: tuple[ClutterSpec, ...] = ()
    distractors: tuple[PathSpec, ...] = ()
    noise_sigma_m: float = 0.05
    body_radius_m: float = 0.25
    points_per_client_per_frame: int = 400
    seed: int = 0
    radar_rate_hz: float = 10.0

    def validate(self) -> None:
        if self.frame_time_s <= 0:
            raise ValidationError("frame_time_s must be > 0")
        if self.duration_s < self.frame_time_s:
            raise ValidationError("duration_s must be >= frame_time_s")
        if len(self.radar_pose) != 3:
            raise ValidationError("radar_pose must be (x, y, z)")
        if self.noise_sigma_m < 0:
            raise ValidationError("noise_sigma_m must be >= 0")
        if self.body_radius_m < 0:
            raise ValidationError("body_radius_m must be >= 0")
        if self.points_per_client_per_frame < 1:
            raise ValidationError("points_per_client_per_frame must be >= 1")
        if self.radar_rate_hz <= 0:
            raise ValidationError("radar_rate_hz must be > 0")
        if round(self.frame_time_s * self.radar_rate_hz) < 2:
            raise ValidationError(
                "radar_rate_hz too low: need at least 2 radar instants per frame_time_s"
            )
        for i, c in enumerate(self.clients):
            c.validate(f"clients[{i}]")
        for i, d in enumerate(self.distractors):
            d.validate(f"distractors[{i}]")
        for i, cl in enumerate(self.clutter):
            if len(cl.position) != 3:
                raise ValidationError(f"clutter[{i}].position must be (x, y, z)")
            if cl.point_count < 1:
                raise ValidationError(f"clutter[{i}].point_count must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config key: {sorted(unknown)[0]!r}")

        def _path(entry: dict, name: str) -> PathSpec:
            extra = set(entry) - {"waypoints", "speed_mps", "initial_hold_s"}
            if extra:
                raise ValidationError(f"unknown config key in {name}: {sorted(extra)[0]!r}")
            try:
                wps = tuple((float(x), float(y)) for x, y in entry["waypoints"])
            except (KeyError, TypeError, ValueError) as e:
                raise ValidationError(f"{name}.waypoints must be a list of [x, y] pairs") from e
            if "speed_mps" not in entry:
                raise ValidationError(f"{name}.speed_mps is required")
            return PathSpec(
                waypoints=wps,
                speed_mps=float(entry["speed_mps"]),
                initial_hold_s=float(entry.get("initial_hold_s", 0.0)),
            )

        def _clutter(entry: dict, name: str) -> ClutterSpec:
            extra = set(entry) - {"position", "point_count"}
            if extra:
                raise ValidationError(f"unknown config key in {name}: {sorted(extra)[0]!r}")
            pos = entry.get("position")
            if pos is None or len(pos) != 3:
                raise ValidationError(f"{name}.position must be [x, y, z]")
            return ClutterSpec(
                position=(float(pos[0]), float(pos[1]), float(pos[2])),
                point_count=int(entry.get("point_count", 0)),
            )

        kwargs: dict = {}
        for key, value in data.items():
            if key == "clients":
                kwargs[key] = tuple(_path(v, f"clients[{i}]") for i, v in enumerate(value))
            elif key == "distractors":
                kwargs[key] = tuple(_path(v, f"distractors[{i}]") for i, v in enumerate(value))
            elif key == "clutter":
                kwargs[key] = tuple(_clutter(v, f"clutter[{i}]") for i, v in enumerate(value))
            elif key == "radar_pose":
                kwargs[key] = tuple(float(v) for v in value)
            elif key in ("points_per_client_per_frame", "seed"):
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValidationError(f"config file is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ValidationError("config file must contain a JSON object")
        return cls.from_dict(data)


@dataclass
class GroundTruthPose:
    client_id: int
    position_m: np.ndarray  # (2,) world frame
    velocity_mps: np.ndarray  # (2,) world frame
    heading_rad: float  # world frame, walk direction


@dataclass
class PointCloudFrame:
    """One radar measurement instant: rows are (x, y, z, doppler_mps), radar frame."""

    frame_index: int
    timestamp_s: float
    points: np.ndarray  # (n, 4) float64


def _pose_on_path(path: PathSpec, t: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Position, velocity and heading along a path at time t.

    Heading holds the upcoming segment direction during the initial hold and
    the last segment direction after the path ends.
    """
    wps = np.asarray(path.waypoints, dtype=float)
    seg = np.diff(wps, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    dirs = seg / seg_len[:, None]
    if path.speed_mps == 0.0 or t <= path.initial_hold_s:
        return wps[0].copy(), np.zeros(2), math.atan2(dirs[0, 1], dirs[0, 0])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = (t - path.initial_hold_s) * path.speed_mps
    if s >= cum[-1]:
        return wps[-1].copy(), np.zeros(2), math.atan2(dirs[-1, 1], dirs[-1, 0])
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(i, len(seg) - 1)
    pos = wps[i] + dirs[i] * (s - cum[i])
    vel = dirs[i] * path.speed_mps
    return pos, vel, math.atan2(dirs[i, 1], dirs[i, 0])


class Scenario:
    """A validated, immutable world that can be sampled at any instant."""

    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self._paths = list(config.clients) + list(config.distractors)
        self._radar = np.asarray(config.radar_pose, dtype=float)
        self._clutter_points = self._build_clutter()

    def _build_clutter(self) -> np.ndarray:
        """Scatter clutter once; static objects return the same points every frame."""
        rows = []
        rng = np.random.default_rng([self.config.seed, _STREAM_CLUTTER])
        for spec in self.config.clutter:
            center = np.asarray(spec.position, dtype=float)
            offsets = rng.normal(0.0, CLUTTER_SPREAD_M, size=(spec.point_count, 3))
            pts = center + offsets
            rows.append(np.column_stack([pts - self._radar, np.zeros(spec.point_count)]))
        if not rows:
            return np.empty((0, 4))
        return np.vstack(rows)

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.config.duration_s / self.config.frame_time_s + 1e-9))

    def _check_time(self, t: float) -> None:
        if not (0.0 <= t <= self.config.duration_s):
            raise ValueError(f"t={t} outside scenario range [0, {self.config.duration_s}]")

    def ground_truth(self, t: float) -> list[GroundTruthPose]:
        """True pose of every client (world frame) at time t."""
        self._check_time(t)
        out = []
        for cid, path in enumerate(self.config.clients):
            pos, vel, heading = _pose_on_path(path, t)
            out.append(GroundTruthPose(cid, pos, vel, heading))
        return out

    def sample_point_cloud(self, frame_index: int) -> PointCloudFrame:
        """Radar return for measurement instant frame_index (radar_rate_hz cadence)."""
        if frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {frame_index}")
        t = frame_index / self.config.radar_rate_hz
        self._check_time(t)
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, _STREAM_CLOUD, frame_index])
        n = cfg.points_per_client_per_frame
        blocks = []
        for path in self._paths:
            pos, vel, _ = _pose_on_path(path, t)
            if cfg.body_radius_m > 0.0:
                # sample the radar-facing arc of the body circle
                to_radar = math.atan2(self._radar[1] - pos[1], self._radar[0] - pos[0])
                theta = to_radar + rng.uniform(-math.pi / 2.0, math.pi / 2.0, n)
                xy = pos + cfg.body_radius_m * np.column_stack([np.cos(theta), np.sin(theta)])
            else:
                xy = np.tile(pos, (n, 1))
            z = rng.uniform(BODY_Z_MIN_M, BODY_Z_MAX_M, n)
            xyz = np.column_stack([xy, z])
            if cfg.noise_sigma_m > 0.0:
                xyz = xyz + rng.normal(0.0, cfg.noise_sigma_m, size=(n, 3))
            rel = xyz - self._radar
            rng_norm = np.linalg.norm(rel, axis=1)
            rng_norm[rng_norm == 0.0] = 1.0
            v3 = np.array([vel[0], vel[1], 0.0])
            doppler = (rel @ v3) / rng_norm
            if cfg.noise_sigma_m > 0.0:
                doppler = doppler + rng.normal(0.0, cfg.noise_sigma_m, n)
            blocks.append(np.column_stack([rel, doppler]))
        blocks.append(self._clutter_points)
        points = np.vstack(blocks) if blocks else np.empty((0, 4))
        return PointCloudFrame(frame_index=frame_index, timestamp_s=t, points=points)

    def sample_imu(self, client_id: int, t: float, dt: float = 0.01, seq: int = 0) -> ImuSample:
        """Inertial reading for one client at time t.

        Acceleration and angular rate are backward differences of the true
        velocity and heading profiles over dt, expressed in the body frame with
        gravity added, so integrating a regular sample train recovers the true
        motion exactly (the sums telescope). dt is the sensor's report
        interval: 0.01 for a 100 Hz device, or one pipeline frame for
        frame-cadence feeds.
        """
        if not (0 <= client_id < len(self.config.clients)):
            raise KeyError(f"unknown client_id {client_id}")
        self._check_time(t)
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        path = self.config.clients[client_id]
        pos, vel, heading = _pose_on_path(path, t)
        _, vel0, heading0 = _pose_on_path(path, max(0.0, t - dt))

        a_global = np.array([(vel[0] - vel0[0]) / dt, (vel[1] - vel0[1]) / dt, 0.0])
        yaw_rate = _wrap_pi(heading - heading0) / dt

        # world -> body rotation about z
        c, s = math.cos(-heading), math.sin(-heading)
        a_body = np.array(
            [
                c * a_global[0] - s * a_global[1],
                s * a_global[0] + c * a_global[1],
                a_global[2] + GRAVITY_MPS2,
            ]
        )
        gyro = np.array([0.0, 0.0, yaw_rate])

        sigma = self.config.noise_sigma_m
        if sigma > 0.0:
            rng = np.random.default_rng(
                [self.config.seed, _STREAM_IMU, client_id, int(round(t * 1e6))]
            )
            a_body = a_body + rng.normal(0.0, IMU_ACCEL_NOISE_PER_SIGMA * sigma, 3)
            gyro = gyro + rng.normal(0.0, IMU_GYRO_NOISE_PER_SIGMA * sigma, 3)
        return ImuSample(
            client_id=client_id,
            seq=seq,
            timestamp_s=t,
            accel_mps2=a_body,
            gyro_radps=gyro,
        )


def build_scenario(config: ScenarioConfig) -> Scenario:
    return Scenario(config)


def default_config(seed: int = 0) -> ScenarioConfig:
    """Demo scenario: two mirrored P-shaped walks, one background walker, desks.

    The holds are staggered so the two clients have distinct velocities while
    bindings are being established.
    """
    p_left = PathSpec(
        waypoints=((0.8, 0.5), (0.8, 3.5), (1.6, 3.5), (1.6, 2.0), (0.8, 2.0)),
        speed_mps=0.5,
        initial_hold_s=1.0,
    )
    p_right = PathSpec(
        waypoints=((4.2, 0.5), (4.2, 3.5), (3.4, 3.5), (3.4, 2.0), (4.2, 2.0)),
        speed_mps=0.5,
        initial_hold_s=2.5,
    )
    walker = PathSpec(waypoints=((0.0, 5.0), (5.0, 5.0)), speed_mps=0.4, initial_hold_s=0.0)
    return ScenarioConfig(
        frame_time_s=0.5,
        duration_s=18.0,
        radar_pose=(2.5, -2.0, 1.0),
        clients=(p_left, p_right),
        clutter=(
            ClutterSpec(position=(0.0, -0.8, 0.7), point_count=150),
            ClutterSpec(position=(5.0, -0.8, 0.7), point_count=150),
        ),
        distractors=(walker,),
        noise_sigma_m=0.05,
        body_radius_m=0.25,
        points_per_client_per_frame=800,
        seed=seed,
        radar_rate_hz=10.0,
    )
