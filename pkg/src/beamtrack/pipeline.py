"""Frame pipeline: sensors in, tracked positions and beam sectors out.

Each frame covers one wall-clock window of ``frame_time_s``. The pipeline
consumes the window's IMU samples per client and one radar point cloud taken
at the window's penultimate radar instant, then:

1. advances each client's orientation/velocity state sample by sample,
2. clusters the cloud and drops zero-doppler background,
3. carries track labels across frames by min-cost core-point matching,
4. binds clusters to clients by velocity agreement (early window or on error),
5. filters each bound client's position with a constant-velocity Kalman
   filter, gating implausible measurements,
6. converts the two filtered positions into a peer bearing and beam sector.

Fused quantities (velocity, heading) are snapshotted at the radar measurement
instant so estimate-versus-truth comparisons are contemporaneous.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .beams import (
    BeamDecision,
    SectorTable,
    angle_to_sector,
    beam_angle,
    beam_scan_baseline,
    in_beamspace,
    simulate_gain,
)
from .clustering import Cluster, DbscanParams, dbscan, filter_background
from .errors import DatagramError, IdentificationError, ValidationError
from .identification import (
    ClientBinding,
    IdentificationGate,
    identify_clients,
    should_identify,
)
from .imu import (
    CalibrationProfile,
    ClientMotion,
    ImuSample,
    calibrate,
    gravity_compensate,
    integrate_velocity,
    madgwick_update,
    quat_from_yaw,
    yaw_from_quat,
)
from .kalman import KalmanConfig, KalmanState, kf_init, kf_reacquire, kf_step
from .telemetry import decode_imu_datagram, encode_imu_datagram, quantize_imu
from .tracking import ClusterFrame, ThresholdParams, displacement_threshold, update_clusters
from .world import GroundTruthPose, PointCloudFrame, Scenario, ScenarioConfig, build_scenario

# centroid of points sampled uniformly on the sensor-facing half of a circle
# sits 2/pi of the radius toward the sensor
SURFACE_BIAS_FACTOR = 2.0 / math.pi

# simulated client devices report inertial data at this rate
INLINE_IMU_RATE_HZ = 100.0

# rest-window calibration: clamp the window to [0.1 s, 1 s] of device samples
MIN_CALIBRATION_WINDOW_S = 0.1
MAX_CALIBRATION_WINDOW_S = 1.0

# scanning baseline: probe group size and per-probe gain noise
SCAN_GROUP_SIZE = 8
SCAN_NOISE_SIGMA = 10.0
_STREAM_SCAN = 90

TAG_CLOUD = 1
TAG_IMU = 2
_RECORD_HEADER = struct.Struct("<IB")
_CLOUD_HEADER = struct.Struct("<IdI")
_POINT_BYTES = 32  # 4 little-endian f64 per point


def surface_bias_m(body_radius_m: float) -> float:
    """Expected centroid shift toward the radar for an arc-sampled body."""
    return SURFACE_BIAS_FACTOR * body_radius_m


def debias_core(core_xy_radar: np.ndarray, body_radius_m: float) -> np.ndarray:
    """Push a radar-frame core point away from the radar by the surface bias."""
    core = np.asarray(core_xy_radar, dtype=float)
    r = float(np.hypot(core[0], core[1]))
    if r < 1e-9:
        return core.copy()
    return core * (1.0 + surface_bias_m(body_radius_m) / r)


@dataclass
class PipelineParams:
    frame_time_s: float = 0.5
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    threshold: ThresholdParams = field(
        default_factory=lambda: ThresholdParams(v_mean_mps=1.4, v_std_mps=0.4)
    )
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    sectors: SectorTable = field(default_factory=SectorTable)
    doppler_zero_tol_mps: float = 1e-3
    body_radius_m: float = 0.25
    radar_xy: tuple[float, float] = (0.0, 0.0)
    surface_bias_correction: bool = True
    endpoints_only: bool = False
    reacquire_limit: int = 3
    gate_sigma: float = 3.0
    madgwick_beta: float = 0.1

    @classmethod
    def for_config(cls, config: ScenarioConfig) -> "PipelineParams":
        """Parameters matched to a scenario.

        The filter is tuned to the noise the pipeline actually sees: cluster
        centroids average hundreds of returns, so the measurement sigma is far
        below a single return's, and the process noise is sized so a walking
        turn stays inside the reacquisition gate.
        """
        return cls(
            frame_time_s=config.frame_time_s,
            kalman=KalmanConfig(
                sigma_accel_mps2=2.0, sigma_meas_m=0.02, dt_nominal_s=config.frame_time_s
            ),
            body_radius_m=config.body_radius_m,
            radar_xy=(config.radar_pose[0], config.radar_pose[1]),
        )


@dataclass
class ClientTrack:
    """Mutable per-client pipeline state."""

    client_id: int
    motion: ClientMotion
    calibration: CalibrationProfile
    prev_accel_global: np.ndarray  # (3,) for the trapezoidal velocity update
    fused_velocity: np.ndarray  # (2,) latest velocity at the measurement instant
    fused_heading: float  # latest yaw at the measurement instant
    binding: ClientBinding | None = None
    kf: KalmanState | None = None
    reacquire_count: int = 0
    coasting: bool = False
    measurement: np.ndarray | None = None
    fresh_bind: bool = False


@dataclass
class ClientFrameState:
    client_id: int
    bound_label: int | None
    measurement_m: np.ndarray | None  # (2,) world frame, bias-corrected
    kf_position_m: np.ndarray | None
    kf_velocity_mps: np.ndarray | None
    imu_velocity_mps: np.ndarray  # (2,)
    heading_rad: float
    coasting: bool
    beam: BeamDecision | None


@dataclass
class FrameReport:
    frame_index: int
    timestamp_s: float  # frame window end
    measurement_time_s: float  # radar instant the state refers to
    n_points: int
    n_clusters_raw: int
    clusters: list[Cluster]  # tracked, world-frame cores
    clients: list[ClientFrameState]
    error_flag: bool
    identified: bool
    events: list[str]


class Pipeline:
    """Stateful two-client tracking and beam-steering pipeline."""

    def __init__(
        self,
        params: PipelineParams,
        initial_heading_rad: dict[int, float],
        calibrations: dict[int, CalibrationProfile] | None = None,
        client_ids: tuple[int, int] = (0, 1),
    ) -> None:
        if len(client_ids) != 2:
            raise ValidationError("the pipeline tracks exactly two clients")
        self.params = params
        self.client_ids = tuple(client_ids)
        self._radar_xy = np.asarray(params.radar_xy, dtype=float)
        self._threshold_m = displacement_threshold(params.threshold, params.frame_time_s)
        self.error_flag = False
        self._frame: ClusterFrame | None = None
        self._next_label = 0
        self.tracks: dict[int, ClientTrack] = {}
        for cid in self.client_ids:
            heading = float(initial_heading_rad.get(cid, 0.0))
            cal = (calibrations or {}).get(cid)
            if cal is None:
                cal = CalibrationProfile(accel_bias=np.zeros(3), gyro_bias=np.zeros(3))
            self.tracks[cid] = ClientTrack(
                client_id=cid,
                motion=ClientMotion(client_id=cid, orientation=quat_from_yaw(heading)),
                calibration=cal,
                prev_accel_global=np.zeros(3),
                fused_velocity=np.zeros(2),
                fused_heading=heading,
            )

    def _inertial_update(self, track: ClientTrack, sample: ImuSample, fuse_until_s: float) -> None:
        dt = sample.timestamp_s - track.motion.last_update_s
        if dt <= 0:
            return  # stale or duplicate reading
        cal = track.calibration
        corrected = ImuSample(
            client_id=sample.client_id,
            seq=sample.seq,
            timestamp_s=sample.timestamp_s,
            accel_mps2=np.asarray(sample.accel_mps2, dtype=float) - cal.accel_bias,
            gyro_radps=np.asarray(sample.gyro_radps, dtype=float) - cal.gyro_bias,
        )
        motion = madgwick_update(track.motion, corrected, dt, self.params.madgwick_beta)
        a_global = gravity_compensate(corrected.accel_mps2, motion.orientation)
        motion.velocity_mps = integrate_velocity(
            track.motion.velocity_mps, track.prev_accel_global, a_global, dt
        )
        track.prev_accel_global = a_global
        track.motion = motion
        if sample.timestamp_s <= fuse_until_s + 1e-12:
            track.fused_velocity = motion.velocity_mps[:2].copy()
            track.fused_heading = yaw_from_quat(motion.orientation)

    def _to_world(self, cluster: Cluster) -> Cluster:
        core = cluster.core_point
        if self.params.surface_bias_correction:
            core = debias_core(core, self.params.body_radius_m)
        return replace(cluster, core_point=core + self._radar_xy)

    def process_frame(
        self,
        frame_index: int,
        timestamp_s: float,
        points: np.ndarray,
        imu_batches: dict[int, list[ImuSample]],
        measurement_time_s: float | None = None,
    ) -> FrameReport:
        p = self.params
        if measurement_time_s is None:
            measurement_time_s = timestamp_s
        events: list[str] = []

        # inertial tier: per-sample orientation and velocity integration
        for cid in self.client_ids:
            track = self.tracks[cid]
            for sample in sorted(
                imu_batches.get(cid, ()), key=lambda s: (s.timestamp_s, s.seq)
            ):
                self._inertial_update(track, sample, measurement_time_s)

        # radar tier: cluster, drop static background, correct surface bias
        raw_clusters, _ = dbscan(points, p.dbscan)
        moving = filter_background(raw_clusters, points, p.doppler_zero_tol_mps)
        measured = [self._to_world(c) for c in moving]
        self._frame, self._next_label = update_clusters(
            self._frame, measured, self._threshold_m, p.frame_time_s, self._next_label, frame_index
        )
        by_label = self._frame.by_label()

        # a bound cluster that disappeared invalidates the binding
        for cid in self.client_ids:
            track = self.tracks[cid]
            if track.binding is not None and track.binding.cluster_label not in by_label:
                events.append(f"client {cid} binding to cluster {track.binding.cluster_label} lost")
                track.binding = None
                self.error_flag = True

        # identification: velocity matching inside the early window or on error
        identified = False
        need = self.error_flag or any(self.tracks[c].binding is None for c in self.client_ids)
        gate = IdentificationGate(frame_index=frame_index, error_flag=self.error_flag)
        if need and should_identify(gate, p.endpoints_only):
            cluster_velocities = [
                (c.label, c.velocity_mps)
                for c in self._frame.clusters
                if c.velocity_mps is not None
            ]
            client_velocities = [self.tracks[c].fused_velocity for c in self.client_ids]
            try:
                bindings = identify_clients(cluster_velocities, client_velocities, frame_index)
            except IdentificationError as exc:
                events.append(f"identification unavailable: {exc}")
            else:
                identified = True
                for cid, binding in zip(self.client_ids, bindings):
                    track = self.tracks[cid]
                    rebound = (
                        track.binding is None
                        or track.binding.cluster_label != binding.cluster_label
                    )
                    track.binding = binding
                    if rebound or track.kf is None:
                        c = by_label[binding.cluster_label]
                        vel = c.velocity_mps if c.velocity_mps is not None else np.zeros(2)
                        track.kf = kf_init(c.core_point, vel, p.kalman)
                        track.fresh_bind = True
                    track.reacquire_count = 0
                    events.append(f"client {cid} bound to cluster {binding.cluster_label}")
                self.error_flag = False

        # filtering tier
        for cid in self.client_ids:
            track = self.tracks[cid]
            track.coasting = False
            track.measurement = None
            if track.binding is None:
                if track.kf is not None:
                    track.kf = kf_step(track.kf, None, p.frame_time_s, p.kalman)
                    track.coasting = True
                continue
            cluster = by_label[track.binding.cluster_label]
            z = cluster.core_point
            track.measurement = z
            if track.fresh_bind:
                # the filter was just initialized from this measurement
                track.fresh_bind = False
                continue
            if kf_reacquire(track.kf, z, p.frame_time_s, p.kalman, p.gate_sigma):
                track.kf = kf_step(track.kf, None, p.frame_time_s, p.kalman)
                track.coasting = True
                track.reacquire_count += 1
                events.append(f"client {cid} gated measurement from cluster {cluster.label}")
                if track.reacquire_count >= p.reacquire_limit and not self.error_flag:
                    self.error_flag = True
                    events.append(f"client {cid} reacquire limit reached")
            else:
                track.kf = kf_step(track.kf, z, p.frame_time_s, p.kalman)
                track.reacquire_count = 0

        # beam tier: bearing to the peer's filtered position, own heading
        decisions: dict[int, BeamDecision | None] = {}
        for cid in self.client_ids:
            peer = self.client_ids[1] if cid == self.client_ids[0] else self.client_ids[0]
            own, other = self.tracks[cid], self.tracks[peer]
            if own.kf is None or other.kf is None:
                decisions[cid] = None
                continue
            try:
                bearing = beam_angle(own.kf.x[:2], own.fused_heading, other.kf.x[:2])
            except ValueError:
                decisions[cid] = None
                continue
            reachable = in_beamspace(bearing)
            sector: int | None = None
            clamped = False
            if reachable:
                sector, clamped = angle_to_sector(bearing, 0.0, p.sectors)
            decisions[cid] = BeamDecision(
                client_id=cid,
                bearing_deg=bearing,
                elevation_deg=0.0,
                sector=sector,
                in_beamspace=reachable,
                clamped=clamped,
            )

        clients = []
        for cid in self.client_ids:
            track = self.tracks[cid]
            clients.append(
                ClientFrameState(
                    client_id=cid,
                    bound_label=track.binding.cluster_label if track.binding else None,
                    measurement_m=None if track.measurement is None else track.measurement.copy(),
                    kf_position_m=None if track.kf is None else track.kf.x[:2].copy(),
                    kf_velocity_mps=None if track.kf is None else track.kf.x[2:].copy(),
                    imu_velocity_mps=track.fused_velocity.copy(),
                    heading_rad=track.fused_heading,
                    coasting=track.coasting,
                    beam=decisions[cid],
                )
            )
        return FrameReport(
            frame_index=frame_index,
            timestamp_s=timestamp_s,
            measurement_time_s=measurement_time_s,
            n_points=int(len(points)),
            n_clusters_raw=len(raw_clusters),
            clusters=list(self._frame.clusters),
            clients=clients,
            error_flag=self.error_flag,
            identified=identified,
            events=events,
        )


# --------------------------------------------------------------------------
# scoring helpers


def path_distances(points: np.ndarray, waypoints) -> np.ndarray:
    """Distance from each 2-D point to the nearest segment of a polyline."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    wps = np.asarray(waypoints, dtype=float)
    if len(wps) < 2:
        raise ValidationError("need at least 2 waypoints")
    a, b = wps[:-1], wps[1:]
    d = b - a
    len2 = np.sum(d * d, axis=1)
    len2 = np.where(len2 == 0.0, 1.0, len2)
    diff = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(diff * d[None, :, :], axis=2) / len2[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
    return np.min(np.linalg.norm(pts[:, None, :] - proj, axis=2), axis=1)


def compute_rms(points: np.ndarray, waypoints) -> float:
    """RMS distance from estimated positions to the walked polyline."""
    dists = path_distances(points, waypoints)
    if dists.size == 0:
        raise ValidationError("no points to score")
    return float(np.sqrt(np.mean(dists * dists)))


# --------------------------------------------------------------------------
# capture files: [u32 length][u8 tag][payload] records, IMU records then one
# point-cloud record per frame


class CaptureWriter:
    """Write the exact sensor streams a run consumed, for later replay."""

    def __init__(self, path: str | Path) -> None:
        self._fh = open(path, "wb")

    def write_imu(self, sample: ImuSample) -> None:
        payload = encode_imu_datagram(sample)
        self._fh.write(_RECORD_HEADER.pack(len(payload), TAG_IMU))
        self._fh.write(payload)

    def write_cloud(self, frame: PointCloudFrame) -> None:
        pts = np.ascontiguousarray(frame.points, dtype="<f8")
        payload = _CLOUD_HEADER.pack(frame.frame_index, frame.timestamp_s, pts.shape[0])
        self._fh.write(_RECORD_HEADER.pack(len(payload) + pts.nbytes, TAG_CLOUD))
        self._fh.write(payload)
        self._fh.write(pts.tobytes())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "CaptureWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def replay_capture(path: str | Path):
    """Yield (imu_batches, cloud) frames from a capture file in recorded order."""
    batches: dict[int, list[ImuSample]] = {}
    with open(path, "rb") as fh:
        while True:
            head = fh.read(_RECORD_HEADER.size)
            if not head:
                break
            if len(head) < _RECORD_HEADER.size:
                raise DatagramError("truncated capture record header")
            length, tag = _RECORD_HEADER.unpack(head)
            payload = fh.read(length)
            if len(payload) < length:
                raise DatagramError("truncated capture record")
            if tag == TAG_IMU:
                sample = decode_imu_datagram(payload)
                batches.setdefault(sample.client_id, []).append(sample)
            elif tag == TAG_CLOUD:
                if len(payload) < _CLOUD_HEADER.size:
                    raise DatagramError("short point-cloud record")
                idx, ts, n = _CLOUD_HEADER.unpack_from(payload, 0)
                body = payload[_CLOUD_HEADER.size :]
                if len(body) != n * _POINT_BYTES:
                    raise DatagramError("point-cloud record length mismatch")
                pts = np.frombuffer(body, dtype="<f8").reshape(n, 4).copy()
                yield batches, PointCloudFrame(frame_index=idx, timestamp_s=ts, points=pts)
                batches = {}
            else:
                raise DatagramError(f"unknown capture record tag {tag}")
    if batches:
        raise DatagramError("capture ends with IMU records after the last point cloud")


# --------------------------------------------------------------------------
# run drivers


@dataclass
class ScanEvent:
    client_id: int
    frame_index: int
    waypoint_index: int
    sector: int
    frames_spent: int
    bearing_deg: float
    gain: float


@dataclass
class RunReport:
    mode: str
    frames: list[FrameReport]
    records: list[dict]
    rms_by_client: dict[int, float | None]
    identified_at_frame: int | None
    error_frames: int
    mean_gain_algorithm: float | None
    mean_gain_beamscan: float | None
    scan_frames_spent: int
    scan_events: list[ScanEvent]


@dataclass
class _TruthInfo:
    pose: GroundTruthPose
    bearing_deg: float | None
    sector: int | None


def _truth_info(truth: list[GroundTruthPose], table: SectorTable) -> list[_TruthInfo]:
    out = []
    for i, pose in enumerate(truth):
        peer = truth[1 - i]
        try:
            bearing = beam_angle(pose.position_m, pose.heading_rad, peer.position_m)
        except ValueError:
            bearing = None
        sector = None
        if bearing is not None and in_beamspace(bearing):
            sector = angle_to_sector(bearing, 0.0, table)[0]
        out.append(_TruthInfo(pose=pose, bearing_deg=bearing, sector=sector))
    return out


def _xy(arr) -> list[float]:
    return [float(arr[0]), float(arr[1])]


def frame_record(
    report: FrameReport,
    truth_infos: list[_TruthInfo] | None = None,
    beamscan_sectors: dict[int, int | None] | None = None,
) -> dict:
    """One frame as a plain JSON-serializable dict (stable key set)."""
    clusters = [
        {
            "label": c.label,
            "core": _xy(c.core_point),
            "count": int(c.point_count),
            "mean_doppler": float(c.mean_doppler_mps),
            "velocity": None if c.velocity_mps is None else _xy(c.velocity_mps),
        }
        for c in report.clusters
    ]
    clients = []
    for cs in report.clients:
        entry = {
            "id": cs.client_id,
            "bound_label": cs.bound_label,
            "measurement": None if cs.measurement_m is None else _xy(cs.measurement_m),
            "kf_position": None if cs.kf_position_m is None else _xy(cs.kf_position_m),
            "kf_velocity": None if cs.kf_velocity_mps is None else _xy(cs.kf_velocity_mps),
            "imu_velocity": _xy(cs.imu_velocity_mps),
            "heading_rad": float(cs.heading_rad),
            "coasting": cs.coasting,
            "bearing_deg": None,
            "sector": None,
            "in_beamspace": None,
            "clamped": None,
        }
        if cs.beam is not None:
            entry["bearing_deg"] = float(cs.beam.bearing_deg)
            entry["sector"] = cs.beam.sector
            entry["in_beamspace"] = cs.beam.in_beamspace
            entry["clamped"] = cs.beam.clamped
        if beamscan_sectors is not None:
            entry["beamscan_sector"] = beamscan_sectors.get(cs.client_id)
        clients.append(entry)
    rec = {
        "frame": report.frame_index,
        "t": float(report.timestamp_s),
        "t_meas": float(report.measurement_time_s),
        "n_points": report.n_points,
        "n_clusters_raw": report.n_clusters_raw,
        "clusters": clusters,
        "clients": clients,
        "error_flag": report.error_flag,
        "identified": report.identified,
        "events": list(report.events),
    }
    if truth_infos is not None:
        rec["truth"] = [
            {
                "id": ti.pose.client_id,
                "position": _xy(ti.pose.position_m),
                "velocity": _xy(ti.pose.velocity_mps),
                "heading_rad": float(ti.pose.heading_rad),
                "bearing_deg": None if ti.bearing_deg is None else float(ti.bearing_deg),
                "sector": ti.sector,
            }
            for ti in truth_infos
        ]
    return rec


def _radar_instants_per_frame(config: ScenarioConfig) -> int:
    return int(round(config.radar_rate_hz * config.frame_time_s))


def calibrate_clients(scenario: Scenario) -> dict[int, CalibrationProfile]:
    """Rest-window bias calibration from each client's initial device samples."""
    config = scenario.config
    holds = [p.initial_hold_s for p in config.clients]
    window = max(
        MIN_CALIBRATION_WINDOW_S,
        min(MAX_CALIBRATION_WINDOW_S, min(holds) if holds else 0.0),
    )
    n = int(round(window * INLINE_IMU_RATE_HZ))
    out = {}
    for cid in range(len(config.clients)):
        samples = [
            quantize_imu(
                scenario.sample_imu(cid, i / INLINE_IMU_RATE_HZ, dt=1.0 / INLINE_IMU_RATE_HZ, seq=i)
            )
            for i in range(1, n + 1)
        ]
        out[cid] = calibrate(samples)
    return out


def _inline_source(scenario: Scenario, capture: CaptureWriter | None = None):
    """Deterministic device-rate feed: every IMU sample plus one cloud per frame."""
    config = scenario.config
    rate = INLINE_IMU_RATE_HZ
    per = _radar_instants_per_frame(config)
    for k in range(scenario.n_frames):
        i0 = int(math.floor(k * config.frame_time_s * rate + 1e-9)) + 1
        i1 = int(math.floor((k + 1) * config.frame_time_s * rate + 1e-9))
        batches: dict[int, list[ImuSample]] = {}
        tee: list[ImuSample] = []
        for cid in range(len(config.clients)):
            lst = [
                quantize_imu(scenario.sample_imu(cid, i / rate, dt=1.0 / rate, seq=i))
                for i in range(i0, i1 + 1)
            ]
            batches[cid] = lst
            tee.extend(lst)
        cloud = scenario.sample_point_cloud((k + 1) * per - 1)
        if capture is not None:
            for s in sorted(tee, key=lambda s: (s.timestamp_s, s.client_id)):
                capture.write_imu(s)
            capture.write_cloud(cloud)
        yield batches, cloud


def _store_source(scenario: Scenario, store, realtime: bool, capture: CaptureWriter | None):
    """Frame feed for live telemetry: snapshot the latest datagram per client."""
    config = scenario.config
    per = _radar_instants_per_frame(config)
    start = time.monotonic()
    for k in range(scenario.n_frames):
        if realtime:
            delay = start + (k + 1) * config.frame_time_s - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        snap = store.snapshot()
        cloud = scenario.sample_point_cloud((k + 1) * per - 1)
        if capture is not None:
            for s in sorted(snap.values(), key=lambda s: (s.timestamp_s, s.client_id)):
                capture.write_imu(s)
            capture.write_cloud(cloud)
        yield {cid: [s] for cid, s in snap.items()}, cloud


def _scan_schedule(config: ScenarioConfig) -> dict[tuple[int, int], list[int]]:
    """Frames in which the scanning baseline re-scans: start plus each waypoint."""
    out: dict[tuple[int, int], list[int]] = {}
    T = config.frame_time_s
    n_frames = int(math.floor(config.duration_s / T + 1e-9))
    for cid, path in enumerate(config.clients):
        times: list[tuple[int, float]] = [(0, 0.0)]
        if path.speed_mps > 0:
            wps = np.asarray(path.waypoints, dtype=float)
            seg = np.diff(wps, axis=0)
            cum = np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))
            for widx in range(1, len(wps)):
                times.append((widx, path.initial_hold_s + cum[widx - 1] / path.speed_mps))
        for widx, t_arrive in times:
            frame = max(0, int(math.ceil(t_arrive / T - 1e-9)) - 1)
            if frame >= n_frames:
                continue
            out.setdefault((frame, cid), []).append(widx)
    return out


def _run(
    scenario: Scenario,
    mode: str,
    params: PipelineParams | None,
    log_path: str | Path | None,
    frame_source,
    feedback=None,
) -> RunReport:
    config = scenario.config
    if len(config.clients) != 2:
        raise ValidationError("tracking runs need exactly 2 clients")
    if mode not in ("algorithm", "beamscan", "both"):
        raise ValidationError(f"unknown mode {mode!r}")
    params = params or PipelineParams.for_config(config)
    table = params.sectors
    pipeline = Pipeline(
        params,
        initial_heading_rad={gt.client_id: gt.heading_rad for gt in scenario.ground_truth(0.0)},
        calibrations=calibrate_clients(scenario),
    )
    scanning = mode in ("beamscan", "both")
    schedule = _scan_schedule(config) if scanning else {}
    scan_sector: dict[int, int | None] = {0: None, 1: None}
    scan_events: list[ScanEvent] = []
    spent_total = 0
    alg_samples: list[float] = []
    scan_samples: list[float] = []
    reports: list[FrameReport] = []
    records: list[dict] = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for k, (imu_batches, cloud) in enumerate(frame_source):
            t_end = (k + 1) * config.frame_time_s
            report = pipeline.process_frame(
                k, t_end, cloud.points, imu_batches, measurement_time_s=cloud.timestamp_s
            )
            truth = scenario.ground_truth(min(cloud.timestamp_s, config.duration_s))
            infos = _truth_info(truth, table)
            if scanning:
                for cid in (0, 1):
                    for widx in schedule.get((k, cid), ()):
                        true_bearing = infos[cid].bearing_deg
                        if true_bearing is None:
                            continue
                        rng = np.random.default_rng([config.seed, _STREAM_SCAN, cid, widx])
                        sector, spent = beam_scan_baseline(
                            true_bearing, 0.0, table, SCAN_GROUP_SIZE, SCAN_NOISE_SIGMA, rng
                        )
                        scan_sector[cid] = sector
                        spent_total += spent
                        scan_events.append(
                            ScanEvent(
                                client_id=cid,
                                frame_index=k,
                                waypoint_index=widx,
                                sector=sector,
                                frames_spent=spent,
                                bearing_deg=true_bearing,
                                gain=simulate_gain(sector, true_bearing, 0.0, table),
                            )
                        )
            for cid in (0, 1):
                true_bearing = infos[cid].bearing_deg
                if true_bearing is None:
                    continue
                beam = report.clients[cid].beam
                alg_sec = beam.sector if beam is not None else None
                if scanning:
                    # score both systems on the frames where both hold a sector
                    if alg_sec is not None and scan_sector[cid] is not None:
                        alg_samples.append(simulate_gain(alg_sec, true_bearing, 0.0, table))
                        scan_samples.append(
                            simulate_gain(scan_sector[cid], true_bearing, 0.0, table)
                        )
                elif alg_sec is not None:
                    alg_samples.append(simulate_gain(alg_sec, true_bearing, 0.0, table))
            if feedback is not None:
                for cs in report.clients:
                    if cs.beam is not None:
                        feedback(cs.client_id, k, cs.beam.bearing_deg, cs.beam.sector)
            rec = frame_record(
                report, infos, beamscan_sectors=dict(scan_sector) if scanning else None
            )
            if fh is not None:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
            reports.append(report)
            records.append(rec)
    finally:
        if fh is not None:
            fh.close()
    rms: dict[int, float | None] = {}
    for cid in (0, 1):
        pts = [
            r.clients[cid].kf_position_m
            for r in reports
            if r.clients[cid].kf_position_m is not None
        ]
        rms[cid] = compute_rms(np.asarray(pts), config.clients[cid].waypoints) if pts else None
    return RunReport(
        mode=mode,
        frames=reports,
        records=records,
        rms_by_client=rms,
        identified_at_frame=next((r.frame_index for r in reports if r.identified), None),
        error_frames=sum(1 for r in reports if r.error_flag),
        mean_gain_algorithm=float(np.mean(alg_samples)) if alg_samples else None,
        mean_gain_beamscan=float(np.mean(scan_samples)) if scan_samples else None,
        scan_frames_spent=spent_total,
        scan_events=scan_events,
    )


def run_scenario(
    config: ScenarioConfig,
    mode: str = "algorithm",
    params: PipelineParams | None = None,
    log_path: str | Path | None = None,
    capture_path: str | Path | None = None,
    store=None,
    realtime: bool = False,
    feedback=None,
) -> RunReport:
    """Simulate a scenario end to end and run the pipeline over it.

    By default the pipeline consumes a deterministic inline feed (every device
    sample, wire-quantized), so equal configs produce byte-identical logs.
    Passing a telemetry store switches to latest-datagram consumption, paced by
    the wall clock when realtime is set.
    """
    scenario = build_scenario(config)
    writer = CaptureWriter(capture_path) if capture_path else None
    try:
        if store is not None:
            source = _store_source(scenario, store, realtime=realtime, capture=writer)
        else:
            source = _inline_source(scenario, capture=writer)
        return _run(scenario, mode, params, log_path, source, feedback=feedback)
    finally:
        if writer is not None:
            writer.close()


def run_from_capture(
    config: ScenarioConfig,
    capture_path: str | Path,
    mode: str = "algorithm",
    params: PipelineParams | None = None,
    log_path: str | Path | None = None,
) -> RunReport:
    """Re-run the pipeline over a recorded sensor capture."""
    scenario = build_scenario(config)
    return _run(scenario, mode, params, log_path, replay_capture(capture_path))
