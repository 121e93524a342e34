"""Per-client inertial processing: calibration, velocity integration, orientation.

Conventions: body frame is x forward, y left, z up; quaternions are [w, x, y, z]
and rotate body-frame vectors into the global frame. An accelerometer at rest
reads +GRAVITY_MPS2 along body z.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError

log = logging.getLogger(__name__)

GRAVITY_MPS2 = 9.81
MIN_CALIBRATION_SAMPLES = 10


@dataclass
class ImuSample:
    """One inertial measurement as produced by a client device."""

    client_id: int
    seq: int
    timestamp_s: float
    accel_mps2: np.ndarray  # (3,) body frame, includes gravity
    gyro_radps: np.ndarray  # (3,) body frame angular rate


@dataclass
class CalibrationProfile:
    accel_bias: np.ndarray  # (3,)
    gyro_bias: np.ndarray  # (3,)


@dataclass
class ClientMotion:
    """Integrated motion state for one client."""

    client_id: int
    velocity_mps: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    last_update_s: float = 0.0


def calibrate(rest_samples: list[ImuSample]) -> CalibrationProfile:
    """Estimate sensor biases from samples taken while the device is at rest.

    The gyro bias is the mean angular rate; the accel bias is the mean reading
    minus the expected gravity vector (0, 0, +g) for an upright device.
    """
    if len(rest_samples) < MIN_CALIBRATION_SAMPLES:
        raise CalibrationError(
            f"need at least {MIN_CALIBRATION_SAMPLES} rest samples, got {len(rest_samples)}"
        )
    accel = np.mean([s.accel_mps2 for s in rest_samples], axis=0)
    gyro = np.mean([s.gyro_radps for s in rest_samples], axis=0)
    return CalibrationProfile(
        accel_bias=accel - np.array([0.0, 0.0, GRAVITY_MPS2]),
        gyro_bias=gyro,
    )


def integrate_velocity(
    v_prev: np.ndarray, a_prev: np.ndarray, a_curr: np.ndarray, t: float
) -> np.ndarray:
    """Trapezoidal velocity update: v + t * (a_prev + a_curr) / 2."""
    if t < 0:
        raise ValueError(f"integration interval must be >= 0, got {t}")
    return np.asarray(v_prev, dtype=float) + t * (
        np.asarray(a_prev, dtype=float) + np.asarray(a_curr, dtype=float)
    ) / 2.0


def quat_multiply(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = r
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_yaw(yaw_rad: float) -> np.ndarray:
    return np.array([math.cos(yaw_rad / 2.0), 0.0, 0.0, math.sin(yaw_rad / 2.0)])


def yaw_from_quat(q: np.ndarray) -> float:
    w, x, y, z = q
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def rotate_by_quat(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by quaternion q (body -> global for an orientation q)."""
    qv = np.array([0.0, v[0], v[1], v[2]])
    out = quat_multiply(quat_multiply(q, qv), quat_conjugate(q))
    return out[1:]


def to_global_frame(v_body: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    """Express a body-frame vector in the global frame.

    Raises ValueError if the quaternion is not unit length to within 1e-6.
    """
    q = np.asarray(orientation, dtype=float)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"orientation quaternion norm {norm:.8f} is not 1 within 1e-6")
    return rotate_by_quat(q, np.asarray(v_body, dtype=float))


def gravity_compensate(accel_body: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    """Rotate a body-frame accelerometer reading to global axes and remove gravity."""
    a_global = to_global_frame(accel_body, orientation)
    return a_global - np.array([0.0, 0.0, GRAVITY_MPS2])


def madgwick_update(
    state: ClientMotion, sample: ImuSample, dt: float, beta: float = 0.1
) -> ClientMotion:
    """One 6-axis orientation step: exact gyro increment + gravity correction.

    The gyro reading is treated as the mean body rate over dt and applied as an
    exact quaternion rotation, so integration stays exact through sharp turns
    even when readings are consumed sparsely (a first-order step loses
    (|w|dt)^3/12 radians per step, ruinous once a single reading spans a
    corner). The accelerometer term is one normalized gradient-descent step of
    size beta * dt toward gravity alignment. Returns a new ClientMotion with
    the updated quaternion; velocity is left untouched. A zero-norm
    accelerometer reading skips the correction (gyro-only update) and is
    logged.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    gx, gy, gz = sample.gyro_radps
    ax, ay, az = sample.accel_mps2

    # exact rotation increment for the mean body rate over dt
    rate = math.sqrt(gx * gx + gy * gy + gz * gz)
    theta = rate * dt
    if theta > 0.0:
        s = math.sin(0.5 * theta) / rate
        dq = np.array([math.cos(0.5 * theta), gx * s, gy * s, gz * s])
        q = quat_multiply(state.orientation, dq)
    else:
        q = np.asarray(state.orientation, dtype=float).copy()
    q1, q2, q3, q4 = q

    a_norm = math.sqrt(ax * ax + ay * ay + az * az)
    if a_norm > 0.0:
        ax, ay, az = ax / a_norm, ay / a_norm, az / a_norm

        _2q1, _2q2, _2q3, _2q4 = 2 * q1, 2 * q2, 2 * q3, 2 * q4
        _4q1, _4q2, _4q3 = 4 * q1, 4 * q2, 4 * q3
        _8q2, _8q3 = 8 * q2, 8 * q3
        q1q1, q2q2, q3q3, q4q4 = q1 * q1, q2 * q2, q3 * q3, q4 * q4

        # gradient of the gravity alignment objective
        s1 = _4q1 * q3q3 + _2q3 * ax + _4q1 * q2q2 - _2q2 * ay
        s2 = _4q2 * q4q4 - _2q4 * ax + 4 * q1q1 * q2 - _2q1 * ay - _4q2 + _8q2 * q2q2 + _8q2 * q3q3 + _4q2 * az
        s3 = 4 * q1q1 * q3 + _2q1 * ax + _4q3 * q4q4 - _2q4 * ay - _4q3 + _8q3 * q2q2 + _8q3 * q3q3 + _4q3 * az
        s4 = 4 * q2q2 * q4 - _2q2 * ax + 4 * q3q3 * q4 - _2q3 * ay
        s_norm = math.sqrt(s1 * s1 + s2 * s2 + s3 * s3 + s4 * s4)
        if s_norm > 1e-12:  # at the objective minimum the gradient vanishes
            step = beta * dt / s_norm
            q = np.array([q1 - step * s1, q2 - step * s2, q3 - step * s3, q4 - step * s4])
    else:
        log.warning(
            "client %d: zero-norm accelerometer at t=%.3f, gyro-only update",
            sample.client_id,
            sample.timestamp_s,
        )

    q = q / np.linalg.norm(q)
    return ClientMotion(
        client_id=state.client_id,
        velocity_mps=state.velocity_mps,
        orientation=q,
        last_update_s=sample.timestamp_s,
    )
