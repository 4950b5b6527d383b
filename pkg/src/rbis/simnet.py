"""Deterministic discrete-event simulation of an RBIS master/slave pair.

The access point emits a beacon (SYNC) every ``beacon_interval_ns`` of true
time.  The master is the reference receiver: it timestamps each beacon at
the channel's nominal latency and releases FOLLOW_UPs through its own
channel.  The slave receives the same beacon after an independently drawn
latency (this is where reception jitter and SYNC loss live), pairs it with
the FOLLOW_UP, feeds the estimator and lets the servo discipline its clock.

Randomness comes from numpy's PCG64 generator.  One ``SeedSequence`` per run
is split into independent child streams (slave SYNC channel, FOLLOW_UP
channel, SYNC drop decisions), and every message consumes a fixed number of
draws, so changing one channel never perturbs another.
"""

from __future__ import annotations

import enum
import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clocks import SimulatedClock, make_source, round_half_away
from .estimator import DEFAULT_WINDOW, Estimator, Increment
from .protocol import (
    DEFAULT_PAIRING_TIMEOUT_NS,
    DEFAULT_PENDING_CAPACITY,
    Master,
    Slave,
    SyncMessage,
    decode,
    encode,
)
from .pipeline import SlavePipeline
from .servo import PIServo, ServoConfig
from .stats import SummaryMetrics, compute_stats
from .trace import TraceRecord

NS_PER_MS = 1_000_000
DEFAULT_BEACON_INTERVAL_NS = 102_400_000


class Distribution(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    FIXED = "fixed"


@dataclass(frozen=True)
class ChannelModel:
    mean_delay_ns: int
    sigma_ns: int = 0
    distribution: Distribution = Distribution.FIXED
    drop_prob: float = 0.0
    min_delay_ns: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        if self.mean_delay_ns < 0 or self.sigma_ns < 0 or self.min_delay_ns < 0:
            raise ValueError("channel delays must be non-negative")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError(f"drop_prob must be in [0, 1], got {self.drop_prob}")

    @property
    def nominal_delay_ns(self) -> int:
        return max(self.mean_delay_ns, self.min_delay_ns)


# Round-trip mean and sigma in ms for each link type of the reference
# measurement campaign (ICMP echo, 6000 probes).
REFERENCE_RTT_MS = {
    "bss24": (3.19, 1.80),
    "bss5": (2.67, 0.64),
    "adhoc24": (0.87, 0.93),
    "ethernet": (0.45, 0.05),
}


def _preset(mean_ms: float, sigma_ms: float, one_way: bool) -> ChannelModel:
    # one-way: RTT = two independent draws, so halve the mean and the variance
    mean = mean_ms * NS_PER_MS / (2 if one_way else 1)
    sigma = sigma_ms * NS_PER_MS / (math.sqrt(2) if one_way else 1)
    return ChannelModel(round(mean), round(sigma), Distribution.GAUSSIAN)


PRESETS: dict[str, ChannelModel] = {}
for _name, (_m, _s) in REFERENCE_RTT_MS.items():
    PRESETS[_name] = _preset(_m, _s, one_way=True)
    PRESETS[f"{_name}-rtt"] = _preset(_m, _s, one_way=False)


def preset(name: str) -> ChannelModel:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown channel preset {name!r}; known: {sorted(PRESETS)}") from None


def sample_delay(channel: ChannelModel, rng: np.random.Generator) -> int | None:
    """Delay in ns, or None if the message is dropped.

    Always consumes exactly two draws from ``rng``.
    """
    u_drop = rng.random()
    if channel.distribution is Distribution.GAUSSIAN:
        delay = channel.mean_delay_ns + channel.sigma_ns * rng.standard_normal()
    elif channel.distribution is Distribution.UNIFORM:
        half = math.sqrt(3.0) * channel.sigma_ns
        delay = channel.mean_delay_ns + half * (2.0 * rng.random() - 1.0)
    else:
        rng.random()
        delay = channel.mean_delay_ns
    if u_drop < channel.drop_prob:
        return None
    return max(round_half_away(delay), channel.min_delay_ns)


def make_rng(seed: int, streams: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(streams)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


@dataclass(frozen=True)
class RttBenchResult:
    channel: ChannelModel
    probes: int
    lost: int
    rtt_ns: np.ndarray = field(repr=False, compare=False)
    stats: SummaryMetrics | None


def rtt_bench(channel: ChannelModel, probes: int = 6000, seed: int = 0) -> RttBenchResult:
    """Simulated echo probes: RTT is the sum of two independent one-way draws."""
    if probes < 2:
        raise ValueError("need at least 2 probes")
    (rng,) = make_rng(seed, 1)
    rtts = []
    lost = 0
    for _ in range(probes):
        there = sample_delay(channel, rng)
        back = sample_delay(channel, rng)
        if there is None or back is None:
            lost += 1
        else:
            rtts.append(there + back)
    arr = np.asarray(rtts, dtype=np.int64)
    stats = compute_stats(arr) if arr.size >= 2 else None
    return RttBenchResult(channel, probes, lost, arr, stats)


@dataclass(frozen=True)
class ClockParams:
    offset_ns: int = 0
    skew_ppm: float = 0.0

    def build(self, max_freq_adj_ppb: int) -> SimulatedClock:
        return SimulatedClock(self.offset_ns, self.skew_ppm, max_freq_adj_ppb=max_freq_adj_ppb)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    duration_s: float = 300.0
    beacon_interval_ns: int = DEFAULT_BEACON_INTERVAL_NS
    follow_up_every: int = 1
    master_clock: ClockParams = ClockParams()
    slave_clock: ClockParams = ClockParams()
    sync_channel: ChannelModel = ChannelModel(mean_delay_ns=1000)
    followup_channel: ChannelModel = ChannelModel(mean_delay_ns=1_000_000)
    servo: ServoConfig = ServoConfig()
    servo_enabled: bool = True
    sync_drop_prob: float = 0.0
    timestamp_source: str = "tsf"
    estimator_window: int = DEFAULT_WINDOW
    pairing_timeout_ns: int = DEFAULT_PAIRING_TIMEOUT_NS
    pending_capacity: int = DEFAULT_PENDING_CAPACITY

    def validate(self) -> None:
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if self.beacon_interval_ns <= 0:
            raise ValueError("beacon_interval_ns must be > 0")
        if self.follow_up_every < 1:
            raise ValueError("follow_up_every must be >= 1")
        if not 0.0 <= self.sync_drop_prob <= 1.0:
            raise ValueError("sync_drop_prob must be in [0, 1]")
        if self.timestamp_source not in ("tsf", "system"):
            raise ValueError(f"unknown timestamp_source {self.timestamp_source!r}")
        if self.estimator_window < 2:
            raise ValueError("estimator_window must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


class EventKind(enum.IntEnum):
    BEACON_EMIT = 0
    SYNC_DELIVER = 1
    FOLLOW_UP_DELIVER = 2


@dataclass(frozen=True)
class Accounting:
    beacons: int
    tuples: int
    sync_drops: int
    followup_losses: int
    expiries: int
    discards: int
    unmatched_followups: int

    @property
    def balanced(self) -> bool:
        return self.beacons == (
            self.tuples + self.sync_drops + self.followup_losses + self.expiries + self.discards
        )


@dataclass
class SimResult:
    config: SimConfig
    trace: list[TraceRecord]
    accounting: Accounting
    increments: list[Increment]
    final_clock: SimulatedClock = field(repr=False)

    def metrics(self) -> dict[str, SummaryMetrics]:
        out = {}
        series = {
            "offset_ns": [r.offset_ns for r in self.trace],
            "skew_ppm": [r.skew_ppm for r in self.trace[1:]],
            "window_skew_ppm": [r.window_skew_ppm for r in self.trace[1:]],
            "disciplined_offset_ns": [
                r.disciplined_offset_ns for r in self.trace if r.disciplined_offset_ns is not None
            ],
        }
        for name, values in series.items():
            if len(values) >= 2:
                out[name] = compute_stats(values)
        return out


class _Simulation:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        lim = cfg.servo.max_freq_ppb
        self.master_clock = cfg.master_clock.build(lim)
        self.slave_clock = cfg.slave_clock.build(lim)
        self.master_ts = make_source(cfg.timestamp_source, self.master_clock)
        self.slave_ts = make_source(cfg.timestamp_source, self.slave_clock)
        self.rng_sync, self.rng_followup, self.rng_drop = make_rng(cfg.seed, 3)
        self.master = Master(cfg.follow_up_every)
        self.slave = Slave(cfg.pairing_timeout_ns, cfg.pending_capacity)
        self.estimator = Estimator(cfg.estimator_window)
        servo = PIServo(cfg.servo) if cfg.servo_enabled else None
        self.pipeline = SlavePipeline(self.slave, self.estimator, servo, cfg.beacon_interval_ns)
        self._now = 0
        self.queue: list = []
        self._order = 0
        self.beacons = 0
        self.sync_drops = 0
        self.fu_lost: set[int] = set()
        self.rx_info: dict[int, tuple[int, int]] = {}
        self.trace: list[TraceRecord] = []
        self.end_ns = round(cfg.duration_s * 1e9)

    def schedule(self, fire_at: int, kind: EventKind, payload=None) -> None:
        heapq.heappush(self.queue, (fire_at, self._order, kind, payload))
        self._order += 1

    def run(self) -> SimResult:
        self.schedule(self.cfg.beacon_interval_ns, EventKind.BEACON_EMIT)
        while self.queue:
            now, _, kind, payload = heapq.heappop(self.queue)
            if kind is EventKind.BEACON_EMIT:
                self.on_beacon(now)
            elif kind is EventKind.SYNC_DELIVER:
                self.on_sync(now, *payload)
            else:
                self.on_followup(now, payload)
            if not self.queue:
                # release a partially filled FOLLOW_UP batch once beacons stop
                fu = self.master.flush()
                if fu is not None:
                    self.send_followup(now, fu)
        self.slave.flush()
        return self.result()

    def on_beacon(self, now: int) -> None:
        self.beacons += 1
        wire = encode(SyncMessage(self.beacons, now // 1000))
        self.schedule(now + self.cfg.sync_channel.nominal_delay_ns, EventKind.SYNC_DELIVER, ("master", wire))
        lost = self.rng_drop.random() < self.cfg.sync_drop_prob
        delay = sample_delay(self.cfg.sync_channel, self.rng_sync)
        if lost or delay is None:
            self.sync_drops += 1
        else:
            self.schedule(now + delay, EventKind.SYNC_DELIVER, ("slave", wire))
        nxt = now + self.cfg.beacon_interval_ns
        if nxt <= self.end_ns:
            self.schedule(nxt, EventKind.BEACON_EMIT)

    def on_sync(self, now: int, target: str, wire: bytes) -> None:
        msg = decode(wire)
        if target == "master":
            sync, fu = self.master.on_beacon(msg.tsf_us, self.master_ts.timestamp_ns(now))
            assert sync.seq == msg.seq, "master missed a beacon"
            if fu is not None:
                self.send_followup(now, fu)
            return
        local = self.slave_ts.timestamp_ns(now)
        disciplined = self.slave_clock.read(now) - self.master_clock.peek(now)
        self.rx_info.setdefault(msg.seq, (now, disciplined))
        self._now = now
        for p in self.pipeline.on_sync(msg, local, self):
            self._record(p)

    def send_followup(self, now: int, fu) -> None:
        delay = sample_delay(self.cfg.followup_channel, self.rng_followup)
        if delay is None:
            self.fu_lost.update(seq for seq, _ in fu.entries())
        else:
            self.schedule(now + delay, EventKind.FOLLOW_UP_DELIVER, encode(fu))

    def on_followup(self, now: int, wire: bytes) -> None:
        fu = decode(wire)
        self._now = now
        for p in self.pipeline.on_followup(fu, self.slave_ts.timestamp_ns(now), self):
            self._record(p)

    def _record(self, p) -> None:
        rx_time, disciplined = self.rx_info.pop(p.tuple.seq)
        est = p.estimate
        self.trace.append(
            TraceRecord(
                true_time_ns=rx_time,
                seq=est.seq,
                t_master_ns=p.tuple.t_master_ns,
                t_slave_ns=p.tuple.t_slave_ns,
                offset_ns=est.offset_ns,
                skew_ppm=est.skew_ppm,
                window_skew_ppm=est.window_skew_ppm,
                dropped_since_last=est.dropped_since_last,
                servo_phase=p.phase,
                servo_output_ppb=p.output_ppb,
                disciplined_offset_ns=disciplined,
            )
        )

    # actuator interface for the pipeline: corrections land at the current event time
    def step(self, delta_ns: int) -> None:
        self.slave_clock.step(delta_ns, self._now, allow_backward=True)

    def set_freq(self, adj_ppb: int) -> None:
        self.slave_clock.set_freq(adj_ppb, self._now)

    def result(self) -> SimResult:
        fu_losses = sum(1 for s in self.slave.lost_seqs if s in self.fu_lost)
        acct = Accounting(
            beacons=self.beacons,
            tuples=self.estimator.accepted,
            sync_drops=self.sync_drops,
            followup_losses=fu_losses,
            expiries=len(self.slave.lost_seqs) - fu_losses,
            discards=self.estimator.discarded,
            unmatched_followups=self.slave.counters.unmatched_followups,
        )
        return SimResult(self.cfg, self.trace, acct, self.estimator.increments(), self.slave_clock)


def run_simulation(config: SimConfig) -> SimResult:
    config.validate()
    return _Simulation(config).run()


def run_many(configs, max_workers: int | None = None) -> list[SimResult]:
    """Run independent simulations in worker processes (order preserved)."""
    configs = list(configs)
    if max_workers == 1 or len(configs) <= 1:
        return [run_simulation(c) for c in configs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run_simulation, configs))
