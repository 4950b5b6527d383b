"""Live master/slave daemons over UDP.

The master broadcasts SYNC on ``sync_port`` and sends FOLLOW_UPs to
``followup_port``.  Its "TSF" is the local monotonic clock in microseconds.
The slave runs one receiver thread that timestamps each datagram right after
``recv`` and queues it; a single processing loop drives the same
:class:`~rbis.pipeline.SlavePipeline` the simulator uses.

By default servo actions only steer a software clock layered over the
monotonic clock.  Steering the host's realtime clock needs an explicit flag
and root.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import logging
import os
import queue
import selectors
import socket
import threading
import time
from dataclasses import dataclass

from .clocks import SimulatedClock
from .estimator import Estimator
from .pipeline import SlavePipeline
from .protocol import (
    DEFAULT_PAIRING_TIMEOUT_NS,
    DEFAULT_PENDING_CAPACITY,
    DecodeError,
    FollowUpMessage,
    Master,
    Slave,
    SyncMessage,
    decode,
    encode,
)
from .servo import PIServo, ServoConfig
from .simnet import DEFAULT_BEACON_INTERVAL_NS
from .trace import TraceRecord

log = logging.getLogger(__name__)

DEFAULT_SYNC_PORT = 5819


@dataclass(frozen=True)
class LiveConfig:
    sync_port: int = DEFAULT_SYNC_PORT
    followup_port: int | None = None
    broadcast_address: str = "255.255.255.255"
    followup_address: str | None = None
    bind_address: str = ""
    beacon_interval_ns: int = DEFAULT_BEACON_INTERVAL_NS
    follow_up_every: int = 1
    timestamp_source: str = "tsf"
    beacon_count: int = 0  # 0: unbounded
    duration_s: float = 0.0  # 0: unbounded
    servo: ServoConfig = ServoConfig()
    servo_enabled: bool = True
    estimator_window: int = 64
    pairing_timeout_ns: int = DEFAULT_PAIRING_TIMEOUT_NS
    pending_capacity: int = DEFAULT_PENDING_CAPACITY

    @property
    def fu_port(self) -> int:
        return self.followup_port if self.followup_port is not None else self.sync_port + 1

    @property
    def fu_address(self) -> str:
        return self.followup_address or self.broadcast_address


def _quantize(ns: int, source: str) -> int:
    return ns // 1000 * 1000 if source == "tsf" else ns


class SoftwareClock:
    """Disciplined clock layered over ``time.monotonic_ns``.

    Raw monotonic readings play the role of true time for a
    :class:`SimulatedClock`, so corrections never touch the host.
    """

    def __init__(self, max_freq_ppb: int = 500_000):
        start = time.monotonic_ns()
        self.clock = SimulatedClock(base_true_ns=start, max_freq_adj_ppb=max_freq_ppb)
        self._at = start

    @staticmethod
    def raw_ns() -> int:
        return time.monotonic_ns()

    def stamp(self, raw_ns: int) -> int:
        self._at = raw_ns
        return self.clock.read(raw_ns)

    def step(self, delta_ns: int) -> None:
        self.clock.step(delta_ns, self._at, allow_backward=True)

    def set_freq(self, adj_ppb: int) -> None:
        self.clock.set_freq(adj_ppb, self._at)


class _Timex(ctypes.Structure):
    _fields_ = [
        ("modes", ctypes.c_uint),
        ("offset", ctypes.c_long),
        ("freq", ctypes.c_long),
        ("maxerror", ctypes.c_long),
        ("esterror", ctypes.c_long),
        ("status", ctypes.c_int),
        ("constant", ctypes.c_long),
        ("precision", ctypes.c_long),
        ("tolerance", ctypes.c_long),
        ("time_sec", ctypes.c_long),
        ("time_usec", ctypes.c_long),
        ("tick", ctypes.c_long),
        ("ppsfreq", ctypes.c_long),
        ("jitter", ctypes.c_long),
        ("shift", ctypes.c_int),
        ("stabil", ctypes.c_long),
        ("jitcnt", ctypes.c_long),
        ("calcnt", ctypes.c_long),
        ("errcnt", ctypes.c_long),
        ("stbcnt", ctypes.c_long),
        ("tai", ctypes.c_int),
        ("_pad", ctypes.c_int * 11),
    ]


ADJ_FREQUENCY = 0x0002


class HostClock:
    """Steers CLOCK_REALTIME directly (needs root / CAP_SYS_TIME)."""

    def __init__(self, max_freq_ppb: int = 500_000):
        if os.geteuid() != 0:
            raise PermissionError("steering the host clock requires root")
        self.max_freq_ppb = max_freq_ppb
        self._libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)

    @staticmethod
    def raw_ns() -> int:
        return time.clock_gettime_ns(time.CLOCK_REALTIME)

    def stamp(self, raw_ns: int) -> int:
        return raw_ns

    def step(self, delta_ns: int) -> None:
        time.clock_settime_ns(time.CLOCK_REALTIME, self.raw_ns() + delta_ns)

    def set_freq(self, adj_ppb: int) -> None:
        adj_ppb = max(-self.max_freq_ppb, min(self.max_freq_ppb, adj_ppb))
        tx = _Timex(modes=ADJ_FREQUENCY, freq=round(adj_ppb * 65536 / 1000))
        if self._libc.adjtimex(ctypes.byref(tx)) < 0:
            err = ctypes.get_errno()
            raise OSError(err, os.strerror(err))


class MasterDaemon:
    def __init__(self, cfg: LiveConfig, sock: socket.socket | None = None):
        self.cfg = cfg
        self.master = Master(cfg.follow_up_every)
        self.sock = sock or self._open()
        self.sent = 0
        self._stop = threading.Event()

    def _open(self) -> socket.socket:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
        return s

    def stop(self) -> None:
        self._stop.set()

    def _send_followup(self, fu: FollowUpMessage) -> None:
        self.sock.sendto(encode(fu), (self.cfg.fu_address, self.cfg.fu_port))

    def run(self) -> int:
        cfg = self.cfg
        start = time.monotonic_ns()
        deadline = start + round(cfg.duration_s * 1e9) if cfg.duration_s > 0 else None
        next_fire = start
        try:
            while not self._stop.is_set():
                if cfg.beacon_count and self.sent >= cfg.beacon_count:
                    break
                if deadline is not None and next_fire > deadline:
                    break
                wait = (next_fire - time.monotonic_ns()) / 1e9
                if wait > 0 and self._stop.wait(wait):
                    break
                now = time.monotonic_ns()
                sync, fu = self.master.on_beacon(now // 1000, _quantize(now, cfg.timestamp_source))
                self.sock.sendto(encode(sync), (cfg.broadcast_address, cfg.sync_port))
                self.sent += 1
                if fu is not None:
                    self._send_followup(fu)
                log.debug("sync seq=%d tsf=%d", sync.seq, sync.tsf_us)
                next_fire += cfg.beacon_interval_ns
            fu = self.master.flush()
            if fu is not None:
                self._send_followup(fu)
        finally:
            self.sock.close()
        return self.sent


class SlaveDaemon:
    def __init__(self, cfg: LiveConfig, timebase=None, on_record=None):
        self.cfg = cfg
        self.timebase = timebase or SoftwareClock(cfg.servo.max_freq_ppb)
        servo = PIServo(cfg.servo) if cfg.servo_enabled else None
        self.slave = Slave(cfg.pairing_timeout_ns, cfg.pending_capacity)
        self.estimator = Estimator(cfg.estimator_window)
        self.pipeline = SlavePipeline(self.slave, self.estimator, servo, cfg.beacon_interval_ns)
        self.records: list[TraceRecord] = []
        self.decode_errors = 0
        self.on_record = on_record
        self._queue: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self.sync_sock = self._bind(cfg.sync_port)
        self.fu_sock = self._bind(cfg.fu_port)

    def _bind(self, port: int) -> socket.socket:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
        s.bind((self.cfg.bind_address, port))
        return s

    @property
    def ports(self) -> tuple[int, int]:
        return self.sync_sock.getsockname()[1], self.fu_sock.getsockname()[1]

    def stop(self) -> None:
        self._stop.set()

    def _receive(self) -> None:
        sel = selectors.DefaultSelector()
        sel.register(self.sync_sock, selectors.EVENT_READ)
        sel.register(self.fu_sock, selectors.EVENT_READ)
        try:
            while not self._stop.is_set():
                for key, _ in sel.select(timeout=0.05):
                    data = key.fileobj.recv(2048)
                    # timestamp before anything else touches the datagram
                    raw = self.timebase.raw_ns()
                    self._queue.put((data, raw))
        finally:
            sel.close()

    def run(self) -> list[TraceRecord]:
        cfg = self.cfg
        rx = threading.Thread(target=self._receive, name="rbis-rx", daemon=True)
        rx.start()
        deadline = time.monotonic() + cfg.duration_s if cfg.duration_s > 0 else None
        try:
            while not self._stop.is_set():
                if cfg.beacon_count and len(self.records) >= cfg.beacon_count:
                    break
                if deadline is not None and time.monotonic() > deadline:
                    break
                try:
                    data, raw = self._queue.get(timeout=0.05)
                except queue.Empty:
                    continue
                self.handle(data, raw)
        finally:
            self._stop.set()
            rx.join()
            self.sync_sock.close()
            self.fu_sock.close()
        return self.records

    def handle(self, data: bytes, raw_ns: int) -> None:
        try:
            msg = decode(data)
        except DecodeError as exc:
            self.decode_errors += 1
            log.warning("dropping malformed datagram: %s", exc)
            return
        local = _quantize(self.timebase.stamp(raw_ns), self.cfg.timestamp_source)
        if isinstance(msg, SyncMessage):
            processed = self.pipeline.on_sync(msg, local, self.timebase)
        else:
            processed = self.pipeline.on_followup(msg, local, self.timebase)
        for p in processed:
            est = p.estimate
            rec = TraceRecord(
                true_time_ns=None,
                seq=est.seq,
                t_master_ns=p.tuple.t_master_ns,
                t_slave_ns=p.tuple.t_slave_ns,
                offset_ns=est.offset_ns,
                skew_ppm=est.skew_ppm,
                window_skew_ppm=est.window_skew_ppm,
                dropped_since_last=est.dropped_since_last,
                servo_phase=p.phase,
                servo_output_ppb=p.output_ppb,
                disciplined_offset_ns=None,
            )
            self.records.append(rec)
            log.info(
                "seq=%d offset=%d ns skew=%.3f ppm window=%.3f ppm servo=%s %d ppb",
                rec.seq, rec.offset_ns, rec.skew_ppm, rec.window_skew_ppm,
                rec.servo_phase, rec.servo_output_ppb,
            )
            if self.on_record is not None:
                self.on_record(rec)
