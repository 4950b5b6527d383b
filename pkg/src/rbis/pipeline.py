"""Slave-side processing shared by the simulator and the live daemon.

SYNC receptions and FOLLOW_UPs go in; each paired tuple is run through the
estimator and, when enabled, the servo, whose action is handed to an
actuator that owns the disciplined clock.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .estimator import Estimator, SyncEstimate, TimestampTuple
from .protocol import FollowUpMessage, Slave, SyncMessage
from .servo import Action, PIServo, SetFreq, Step


class Actuator(Protocol):
    def step(self, delta_ns: int) -> None: ...

    def set_freq(self, adj_ppb: int) -> None: ...


@dataclass(frozen=True)
class Processed:
    tuple: TimestampTuple
    estimate: SyncEstimate
    action: Action | None
    phase: str
    output_ppb: int


class SlavePipeline:
    def __init__(self, slave: Slave, estimator: Estimator, servo: PIServo | None,
                 default_interval_ns: int):
        self.slave = slave
        self.estimator = estimator
        self.servo = servo
        self.default_interval_ns = default_interval_ns
        self._last_servo_master_ns: int | None = None

    def on_sync(self, msg: SyncMessage, local_ns: int, actuator: Actuator) -> list[Processed]:
        """A reception pairs at once when its FOLLOW_UP overtook it."""
        tup = self.slave.on_sync(msg, local_ns)
        return self._process([] if tup is None else [tup], actuator)

    def on_followup(self, msg: FollowUpMessage, local_ns: int, actuator: Actuator) -> list[Processed]:
        self.slave.expire(local_ns)
        tuples = []
        for seq, master_time in msg.entries():
            tup = self.slave.pair(seq, master_time, msg.tsf_us if seq == msg.seq else None, local_ns)
            if tup is not None:
                tuples.append(tup)
        return self._process(tuples, actuator)

    def _process(self, tuples: list[TimestampTuple], actuator: Actuator) -> list[Processed]:
        accepted = []
        for tup in tuples:
            est = self.estimator.update(tup)
            if est is not None:
                accepted.append((tup, est))
        if not accepted:
            return []
        out = [self._passive(tup, est) for tup, est in accepted[:-1]]
        out.append(self._control(*accepted[-1], actuator))
        return out

    def _passive(self, tup: TimestampTuple, est: SyncEstimate) -> Processed:
        if self.servo is None:
            return Processed(tup, est, None, "off", 0)
        return Processed(tup, est, None, self.servo.phase.value, self.servo.last_output_ppb)

    def _control(self, tup: TimestampTuple, est: SyncEstimate, actuator: Actuator) -> Processed:
        # one correction per FOLLOW_UP: older entries of a batch were measured
        # before the previous correction took effect
        if self.servo is None:
            return self._passive(tup, est)
        if self._last_servo_master_ns is None:
            interval = self.default_interval_ns
        else:
            interval = est.t_master_ns - self._last_servo_master_ns
        self._last_servo_master_ns = est.t_master_ns
        action = self.servo.sample(est.offset_ns, interval)
        if isinstance(action, Step):
            actuator.step(action.delta_ns)
            self.estimator.apply_step(action.delta_ns)
            self.slave.shift_pending(action.delta_ns)
        elif isinstance(action, SetFreq):
            actuator.set_freq(action.adj_ppb)
        return Processed(tup, est, action, self.servo.phase.value, self.servo.last_output_ppb)
