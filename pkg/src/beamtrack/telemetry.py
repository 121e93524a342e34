"""UDP telemetry: IMU uplink datagrams, feedback downlink, latest-value store.

Wire formats (little-endian, fixed size):

* IMU uplink, 40 bytes: ``u32 client_id, u32 seq, f64 timestamp_s,
  f32 ax, ay, az, gx, gy, gz`` (accelerometer in m/s^2, gyro in rad/s).
* Feedback downlink, 16 bytes: ``u32 client_id, u32 frame_index,
  f32 bearing_deg, u32 sector`` with ``0xFFFFFFFF`` meaning "no sector".

Datagrams of any other length are rejected and counted, never parsed.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DatagramError
from .imu import ImuSample

log = logging.getLogger(__name__)

IMU_DATAGRAM_FORMAT = "<IId6f"
IMU_DATAGRAM_SIZE = struct.calcsize(IMU_DATAGRAM_FORMAT)  # 40
FEEDBACK_FORMAT = "<IIfI"
FEEDBACK_SIZE = struct.calcsize(FEEDBACK_FORMAT)  # 16
NO_SECTOR = 0xFFFFFFFF

_SEND_RETRIES = 3
_SEND_BACKOFF_S = 0.001


def encode_imu_datagram(sample: ImuSample) -> bytes:
    return struct.pack(
        IMU_DATAGRAM_FORMAT,
        sample.client_id,
        sample.seq,
        sample.timestamp_s,
        float(sample.accel_mps2[0]),
        float(sample.accel_mps2[1]),
        float(sample.accel_mps2[2]),
        float(sample.gyro_radps[0]),
        float(sample.gyro_radps[1]),
        float(sample.gyro_radps[2]),
    )


def decode_imu_datagram(data: bytes) -> ImuSample:
    if len(data) != IMU_DATAGRAM_SIZE:
        raise DatagramError(
            f"bad IMU datagram length {len(data)}, expected {IMU_DATAGRAM_SIZE}"
        )
    client_id, seq, ts, ax, ay, az, gx, gy, gz = struct.unpack(IMU_DATAGRAM_FORMAT, data)
    return ImuSample(
        client_id=client_id,
        seq=seq,
        timestamp_s=ts,
        accel_mps2=np.array([ax, ay, az], dtype=np.float64),
        gyro_radps=np.array([gx, gy, gz], dtype=np.float64),
    )


def quantize_imu(sample: ImuSample) -> ImuSample:
    """Round-trip a sample through the wire encoding (f32 sensor fields)."""
    return decode_imu_datagram(encode_imu_datagram(sample))


def encode_feedback(
    client_id: int, frame_index: int, bearing_deg: float, sector: int | None
) -> bytes:
    return struct.pack(
        FEEDBACK_FORMAT,
        client_id,
        frame_index,
        bearing_deg,
        NO_SECTOR if sector is None else sector,
    )


def decode_feedback(data: bytes) -> tuple[int, int, float, int | None]:
    if len(data) != FEEDBACK_SIZE:
        raise DatagramError(f"bad feedback length {len(data)}, expected {FEEDBACK_SIZE}")
    client_id, frame_index, bearing, sector = struct.unpack(FEEDBACK_FORMAT, data)
    return client_id, frame_index, bearing, None if sector == NO_SECTOR else sector


class LatestStore:
    """Thread-safe latest-sample-per-client store.

    Writers race with the pipeline's snapshot reads, so each client slot has
    its own lock and samples are replaced whole; a snapshot can never observe
    a half-written sample. Stale or duplicate sequence numbers are dropped.
    """

    def __init__(self) -> None:
        self._registry_lock = threading.Lock()
        self._slots: dict[int, list] = {}  # client_id -> [lock, sample|None]

    def _slot(self, client_id: int) -> list:
        with self._registry_lock:
            slot = self._slots.get(client_id)
            if slot is None:
                slot = [threading.Lock(), None]
                self._slots[client_id] = slot
            return slot

    def put(self, sample: ImuSample) -> bool:
        """Store the sample unless a newer (>= seq) one is already held."""
        slot = self._slot(sample.client_id)
        with slot[0]:
            current = slot[1]
            if current is not None and current.seq >= sample.seq:
                return False
            slot[1] = sample
            return True

    def get(self, client_id: int) -> ImuSample | None:
        with self._registry_lock:
            slot = self._slots.get(client_id)
        if slot is None:
            return None
        with slot[0]:
            return slot[1]

    def snapshot(self) -> dict[int, ImuSample]:
        """Latest sample per client; samples are immutable once stored."""
        with self._registry_lock:
            slots = list(self._slots.items())
        out: dict[int, ImuSample] = {}
        for client_id, slot in slots:
            with slot[0]:
                if slot[1] is not None:
                    out[client_id] = slot[1]
        return out

    def clear(self) -> None:
        with self._registry_lock:
            self._slots.clear()


class TelemetryServer:
    """Receives IMU datagrams on one UDP socket per port, thread per socket.

    Bad-length datagrams are counted and dropped. The source address of each
    client's most recent datagram is remembered so feedback can be sent back
    without any registration step. Port 0 binds an ephemeral port; read the
    actual ports from :attr:`ports` after construction.
    """

    def __init__(
        self,
        store: LatestStore,
        ports: tuple[int, ...] = (0,),
        host: str = "127.0.0.1",
    ) -> None:
        self.store = store
        self.host = host
        self._socks: list[socket.socket] = []
        for port in ports:
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.bind((host, port))
            sock.settimeout(0.1)
            self._socks.append(sock)
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._stats_lock = threading.Lock()
        self.datagrams_received = 0
        self.datagrams_rejected = 0
        self._addr_lock = threading.Lock()
        self._last_addr: dict[int, tuple[tuple[str, int], int]] = {}

    @property
    def ports(self) -> tuple[int, ...]:
        return tuple(sock.getsockname()[1] for sock in self._socks)

    def start(self) -> None:
        if self._threads:
            raise RuntimeError("server already started")
        self._stop.clear()
        for i, sock in enumerate(self._socks):
            t = threading.Thread(target=self._serve, args=(sock, i), daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2.0)
        self._threads.clear()

    def close(self) -> None:
        self.stop()
        for sock in self._socks:
            sock.close()
        self._socks.clear()

    def __enter__(self) -> "TelemetryServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _serve(self, sock: socket.socket, sock_index: int) -> None:
        while not self._stop.is_set():
            try:
                data, addr = sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                sample = decode_imu_datagram(data)
            except DatagramError as exc:
                with self._stats_lock:
                    self.datagrams_rejected += 1
                log.debug("rejected datagram from %s: %s", addr, exc)
                continue
            with self._stats_lock:
                self.datagrams_received += 1
            with self._addr_lock:
                self._last_addr[sample.client_id] = (addr, sock_index)
            self.store.put(sample)

    def send_feedback(
        self, client_id: int, frame_index: int, bearing_deg: float, sector: int | None
    ) -> bool:
        """Send a feedback datagram to the client's last-seen address."""
        with self._addr_lock:
            entry = self._last_addr.get(client_id)
        if entry is None:
            return False
        addr, sock_index = entry
        payload = encode_feedback(client_id, frame_index, bearing_deg, sector)
        try:
            self._socks[sock_index].sendto(payload, addr)
        except OSError as exc:
            log.warning("feedback send to %s failed: %s", addr, exc)
            return False
        return True


@dataclass
class ClientRunStats:
    client_id: int
    sent: int = 0
    send_errors: int = 0
    feedback: list = field(default_factory=list)  # decoded feedback tuples


def run_sim_client(
    sample_fn,
    client_id: int,
    address: tuple[str, int],
    rate_hz: float = 100.0,
    duration_s: float = 5.0,
    collect_feedback: bool = False,
) -> ClientRunStats:
    """Stream IMU datagrams to a server at a fixed rate (wall-clock paced).

    ``sample_fn(client_id, t, dt, seq)`` supplies each reading; sequence
    numbers count up from 0. Transient send failures are retried a few times
    with a short backoff, then counted and skipped.
    """
    if rate_hz <= 0 or duration_s < 0:
        raise ValueError("rate_hz must be > 0 and duration_s >= 0")
    period = 1.0 / rate_hz
    n = int(round(duration_s * rate_hz))
    stats = ClientRunStats(client_id=client_id)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setblocking(False)
    try:
        start = time.monotonic()
        for seq in range(n):
            t = (seq + 1) * period
            sample = sample_fn(client_id, t, period, seq)
            payload = encode_imu_datagram(sample)
            for attempt in range(_SEND_RETRIES):
                try:
                    sock.sendto(payload, address)
                    stats.sent += 1
                    break
                except (BlockingIOError, InterruptedError, OSError):
                    if attempt == _SEND_RETRIES - 1:
                        stats.send_errors += 1
                    else:
                        time.sleep(_SEND_BACKOFF_S)
            if collect_feedback:
                _drain_feedback(sock, stats)
            deadline = start + (seq + 1) * period
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        if collect_feedback:
            sock.settimeout(0.05)
            _drain_feedback(sock, stats, blocking=True)
    finally:
        sock.close()
    return stats


def _drain_feedback(sock: socket.socket, stats: ClientRunStats, blocking: bool = False) -> None:
    while True:
        try:
            data, _ = sock.recvfrom(2048)
        except (BlockingIOError, socket.timeout):
            return
        except OSError:
            return
        try:
            stats.feedback.append(decode_feedback(data))
        except DatagramError:
            continue
