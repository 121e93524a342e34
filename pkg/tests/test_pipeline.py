"""End-to-end pipeline: binding, gating, capture replay, and scoring."""

import dataclasses
import math

import numpy as np
import pytest

from oracles import polyline_distance_reference

from beamtrack.errors import DatagramError, ValidationError
from beamtrack.imu import ImuSample
from beamtrack.pipeline import (
    CaptureWriter,
    DbscanParams,
    KalmanConfig,
    Pipeline,
    PipelineParams,
    PointCloudFrame,
    build_scenario,
    calibrate_clients,
    compute_rms,
    debias_core,
    path_distances,
    replay_capture,
    run_from_capture,
    run_scenario,
    surface_bias_m,
)
from beamtrack.world import ScenarioConfig, default_config


def _ring(cx, cy, n=6, r=0.05, doppler=1.0):
    """A tight, symmetric clump whose centroid is exactly (cx, cy)."""
    ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack(
        [cx + r * np.cos(ang), cy + r * np.sin(ang), np.full(n, 1.0), np.full(n, doppler)]
    )


def _params():
    return PipelineParams(
        frame_time_s=0.5,
        dbscan=DbscanParams(eps_m=0.3, min_pts=4),
        kalman=KalmanConfig(sigma_accel_mps2=1.0, sigma_meas_m=0.02, dt_nominal_s=0.5),
        body_radius_m=0.0,
        radar_xy=(0.0, 0.0),
    )


def _short_config(**overrides):
    return dataclasses.replace(default_config(), duration_s=4.0, **overrides)


def test_surface_bias_value():
    # mean of cos(u) over u ~ U(-pi/2, pi/2) is 2/pi
    assert surface_bias_m(0.25) == pytest.approx(0.25 * 2.0 / math.pi)
    assert surface_bias_m(0.0) == 0.0


def test_debias_pushes_core_away_from_radar():
    core = np.array([3.0, 4.0])
    out = debias_core(core, 0.25)
    bias = surface_bias_m(0.25)
    assert np.allclose(out, core * (1.0 + bias / 5.0))
    assert np.linalg.norm(out) == pytest.approx(5.0 + bias)
    # direction is preserved
    assert np.allclose(out / np.linalg.norm(out), core / 5.0)
    # a core at the radar itself cannot be debiased
    assert np.array_equal(debias_core(np.zeros(2), 0.25), np.zeros(2))


def test_params_for_config():
    cfg = _short_config()
    params = PipelineParams.for_config(cfg)
    assert params.frame_time_s == cfg.frame_time_s
    assert params.kalman.sigma_accel_mps2 == 2.0
    assert params.kalman.sigma_meas_m == 0.02
    assert params.kalman.dt_nominal_s == cfg.frame_time_s
    assert params.radar_xy == (cfg.radar_pose[0], cfg.radar_pose[1])
    assert params.body_radius_m == cfg.body_radius_m


def test_pipeline_requires_two_clients():
    with pytest.raises(ValidationError):
        Pipeline(_params(), {}, client_ids=(0,))
    with pytest.raises(ValidationError):
        Pipeline(_params(), {}, client_ids=(0, 1, 2))


def test_calibration_recovers_small_biases():
    profiles = calibrate_clients(build_scenario(_short_config()))
    assert set(profiles) == {0, 1}
    for profile in profiles.values():
        assert np.all(np.abs(profile.accel_bias) < 0.05)
        assert np.all(np.abs(profile.gyro_bias) < 0.01)


def test_identification_window_then_binding():
    pipe = Pipeline(_params(), {0: 0.0, 1: 0.0})
    pts = np.vstack([_ring(2.0, 1.0), _ring(2.0, -1.0)])
    reports = [pipe.process_frame(k, (k + 1) * 0.5, pts, {}) for k in range(3)]
    # before the window opens nothing is bound and no filter exists
    for rep in reports[:2]:
        assert not rep.identified
        assert all(c.bound_label is None for c in rep.clients)
        assert all(c.kf_position_m is None for c in rep.clients)
        assert all(c.beam is None for c in rep.clients)
    rep = reports[2]
    assert rep.identified and not rep.error_flag
    assert [c.bound_label for c in rep.clients] == [0, 1]
    assert "client 0 bound to cluster 0" in rep.events
    assert "client 1 bound to cluster 1" in rep.events
    # the filter is seeded from the bound cluster's centroid
    assert np.allclose(rep.clients[0].kf_position_m, [2.0, 1.0], atol=1e-9)
    assert np.allclose(rep.clients[1].kf_position_m, [2.0, -1.0], atol=1e-9)
    # both peers sit in each other's beamspace, so sectors are assigned
    assert all(c.beam is not None and c.beam.sector is not None for c in rep.clients)


def test_tracking_follows_moving_cluster():
    pipe = Pipeline(_params(), {0: 0.0, 1: 0.0})
    for k in range(8):
        ax = 2.0 + 0.2 * max(0, k - 2)  # client 0's clump starts moving after binding
        pts = np.vstack([_ring(ax, 1.0), _ring(2.0, -1.0)])
        rep = pipe.process_frame(k, (k + 1) * 0.5, pts, {})
    assert [c.bound_label for c in rep.clients] == [0, 1]
    assert not rep.error_flag and not any(c.coasting for c in rep.clients)
    assert np.allclose(rep.clients[0].measurement_m, [3.0, 1.0], atol=1e-9)
    assert np.linalg.norm(rep.clients[0].kf_position_m - [3.0, 1.0]) < 0.1


def test_binding_lost_then_recovered():
    pipe = Pipeline(_params(), {0: 0.0, 1: 0.0})
    a, b = _ring(2.0, 1.0), _ring(2.0, -1.0)
    by_frame = {}
    for k in range(7):
        pts = a if k == 3 else np.vstack([a, b])  # second clump vanishes at frame 3
        by_frame[k] = pipe.process_frame(k, (k + 1) * 0.5, pts, {})
    lost = by_frame[3]
    assert lost.error_flag
    assert "client 1 binding to cluster 1 lost" in lost.events
    assert any(e.startswith("identification unavailable") for e in lost.events)
    assert lost.clients[1].bound_label is None and lost.clients[1].coasting
    assert lost.clients[0].bound_label == 0  # the surviving binding is kept
    # frame 4: the clump is back but brand new, so it has no velocity yet
    assert by_frame[4].error_flag and not by_frame[4].identified
    # frame 5: the new clump has a velocity and identification rebinds to it
    recovered = by_frame[5]
    assert recovered.identified and not recovered.error_flag
    assert [c.bound_label for c in recovered.clients] == [0, 2]
    assert "client 1 bound to cluster 2" in recovered.events


def test_gated_measurements_coast_then_flag():
    pipe = Pipeline(_params(), {0: 0.0, 1: 0.0})
    a = _ring(2.0, 1.0)
    by_frame = {}
    for k in range(16):
        # the second clump runs away 1 m/frame from frame 12 (below the
        # association threshold, far outside the settled filter gate)
        bx = 2.0 + max(0, k - 11) * 1.0
        by_frame[k] = pipe.process_frame(
            k, (k + 1) * 0.5, np.vstack([a, _ring(bx, -1.0)]), {}
        )
    for k in (12, 13, 14):
        assert "client 1 gated measurement from cluster 1" in by_frame[k].events
        assert by_frame[k].clients[1].coasting
        assert not by_frame[k].clients[0].coasting
    assert by_frame[14].error_flag
    assert "client 1 reacquire limit reached" in by_frame[14].events
    assert not by_frame[13].error_flag  # only the third strike raises the flag
    # the error state forces re-identification on the next frame
    assert by_frame[15].identified and not by_frame[15].error_flag


def test_path_distances_against_dense_sampling():
    rng = np.random.default_rng(11)
    waypoints = [(0.0, 0.0), (2.0, 0.0), (2.0, 3.0), (-1.0, 3.0)]
    pts = rng.uniform(-2.0, 5.0, size=(40, 2))
    got = path_distances(pts, waypoints)
    for p, d in zip(pts, got):
        assert d == pytest.approx(polyline_distance_reference(p, waypoints), abs=2e-4)


def test_path_distances_degenerate_segment():
    waypoints = [(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)]  # zero-length first leg
    d = path_distances(np.array([[0.0, 2.0]]), waypoints)
    assert np.isfinite(d).all()
    assert d[0] == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        path_distances(np.array([[0.0, 0.0]]), [(1.0, 1.0)])


def test_compute_rms():
    waypoints = [(0.0, 0.0), (4.0, 0.0)]
    pts = np.array([[1.0, 0.3], [2.0, -0.4], [3.0, 0.0]])
    expected = math.sqrt((0.09 + 0.16 + 0.0) / 3.0)
    assert compute_rms(pts, waypoints) == pytest.approx(expected)
    with pytest.raises(ValidationError):
        compute_rms(np.empty((0, 2)), waypoints)


def test_short_run_report_texture():
    report = run_scenario(_short_config(), mode="algorithm")
    assert report.mode == "algorithm"
    assert report.identified_at_frame == 2
    assert report.error_frames == 0
    assert set(report.rms_by_client) == {0, 1}
    assert all(v is not None and v < 0.25 for v in report.rms_by_client.values())
    # no baseline ran, so no scan bookkeeping
    assert report.scan_events == [] and report.scan_frames_spent == 0
    assert report.mean_gain_beamscan is None
    assert len(report.records) == len(report.frames) == 8


def test_run_rejects_bad_modes_and_configs():
    cfg = _short_config()
    with pytest.raises(ValidationError):
        run_scenario(cfg, mode="hold")
    one_client = dataclasses.replace(cfg, clients=cfg.clients[:1])
    with pytest.raises(ValidationError):
        run_scenario(one_client, mode="algorithm")


def test_scan_baseline_bookkeeping():
    report = run_scenario(_short_config(), mode="both")
    assert report.scan_events, "the baseline scans at least once at the start"
    assert {e.client_id for e in report.scan_events} == {0, 1}
    for ev in report.scan_events:
        # sweeping 8 groups of 8 then revisiting the best group member-by-member
        assert ev.frames_spent == 16
        assert 0 <= ev.sector < 64
        assert ev.gain >= 0.0
    assert report.scan_frames_spent == sum(e.frames_spent for e in report.scan_events)
    assert report.mean_gain_algorithm is not None
    assert report.mean_gain_beamscan is not None
    # every log record carries the held baseline sector alongside the live one
    assert all("beamscan_sector" in c for r in report.records for c in r["clients"])


def test_capture_round_trip_is_exact(tmp_path):
    cfg = _short_config(seed=5)
    log_live = tmp_path / "live.jsonl"
    log_replay = tmp_path / "replay.jsonl"
    capture = tmp_path / "frames.capture"
    live = run_scenario(cfg, mode="algorithm", log_path=log_live, capture_path=capture)
    replayed = run_from_capture(cfg, capture, mode="algorithm", log_path=log_replay)
    assert log_live.read_bytes() == log_replay.read_bytes()
    assert replayed.rms_by_client == live.rms_by_client
    assert replayed.identified_at_frame == live.identified_at_frame


def test_capture_stream_structure(tmp_path):
    cfg = _short_config()
    capture = tmp_path / "frames.capture"
    report = run_scenario(cfg, mode="algorithm", capture_path=capture)
    frames = list(replay_capture(capture))
    assert len(frames) == len(report.frames)
    per_frame = int(round(cfg.frame_time_s * 100.0))  # device-rate batch per frame
    per_radar = int(round(cfg.frame_time_s * cfg.radar_rate_hz))
    for i, (batches, cloud) in enumerate(frames):
        # clouds are stamped with the radar instant they were sampled at
        assert cloud.frame_index == (i + 1) * per_radar - 1
        assert cloud.timestamp_s == pytest.approx(cloud.frame_index / cfg.radar_rate_hz)
        assert cloud.points.shape[1] == 4
        assert set(batches) == {0, 1}
        for samples in batches.values():
            assert len(samples) == per_frame
            assert all(isinstance(s, ImuSample) for s in samples)


def _tiny_capture(path):
    sample = ImuSample(
        client_id=0,
        seq=0,
        timestamp_s=0.01,
        accel_mps2=np.array([0.0, 0.0, 9.81]),
        gyro_radps=np.zeros(3),
    )
    cloud = PointCloudFrame(
        frame_index=0, timestamp_s=0.4, points=np.arange(8.0).reshape(2, 4)
    )
    with CaptureWriter(path) as writer:
        writer.write_imu(sample)
        writer.write_cloud(cloud)
    return sample, cloud


def test_capture_codec_round_trip(tmp_path):
    path = tmp_path / "tiny.capture"
    sample, cloud = _tiny_capture(path)
    (batches, got), = list(replay_capture(path))
    assert set(batches) == {0} and batches[0][0].seq == sample.seq
    assert got.frame_index == cloud.frame_index
    assert got.timestamp_s == cloud.timestamp_s
    assert np.array_equal(got.points, cloud.points)


def test_capture_rejects_damaged_files(tmp_path):
    path = tmp_path / "tiny.capture"
    _tiny_capture(path)
    blob = path.read_bytes()

    truncated = tmp_path / "truncated.capture"
    truncated.write_bytes(blob[:-3])  # cut into the final record payload
    with pytest.raises(DatagramError):
        list(replay_capture(truncated))

    short_header = tmp_path / "short_header.capture"
    short_header.write_bytes(blob + b"\x07\x00")  # dangling partial header
    with pytest.raises(DatagramError):
        list(replay_capture(short_header))

    unknown_tag = tmp_path / "unknown.capture"
    unknown_tag.write_bytes(blob + bytes([4, 0, 0, 0, 9]) + b"\x00" * 4)
    with pytest.raises(DatagramError):
        list(replay_capture(unknown_tag))

    trailing = tmp_path / "trailing.capture"
    with CaptureWriter(trailing) as writer:
        sample, cloud = _tiny_capture(tmp_path / "scratch.capture")
        writer.write_cloud(cloud)
        writer.write_imu(sample)  # device samples after the last cloud frame
    with pytest.raises(DatagramError):
        list(replay_capture(trailing))
