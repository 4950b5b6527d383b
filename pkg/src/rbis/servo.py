"""PI clock servo.

Offsets are normalised to a rate over the sampling interval
(``offset_ns * 1e9 / interval_ns``, in ppb) before the gains are applied, so
the same gains work for any SYNC period.  The output is the absolute
frequency correction to apply to the slave clock.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

from .clocks import round_half_away


class Phase(str, enum.Enum):
    INIT = "init"
    STEPPING = "stepping"
    TRACKING = "tracking"
    LOCKED = "locked"


@dataclass(frozen=True)
class ServoConfig:
    kp: float = 0.7
    ki: float = 0.3
    step_threshold_ns: int = 10_000_000
    max_freq_ppb: int = 500_000
    lock_threshold_ns: int = 50_000
    lock_count: int = 5

    def __post_init__(self):
        if not self.kp > 0:
            raise ValueError("kp must be > 0")
        if self.ki < 0:
            raise ValueError("ki must be >= 0")
        if self.lock_count < 1:
            raise ValueError("lock_count must be >= 1")
        if self.step_threshold_ns < 0 or self.max_freq_ppb < 0 or self.lock_threshold_ns < 0:
            raise ValueError("thresholds must be non-negative")


@dataclass(frozen=True)
class Step:
    delta_ns: int


@dataclass(frozen=True)
class SetFreq:
    adj_ppb: int


Action = Union[Step, SetFreq]


class PIServo:
    def __init__(self, config: ServoConfig | None = None):
        self.config = config or ServoConfig()
        self.reset()

    def reset(self) -> "PIServo":
        self.phase = Phase.INIT
        self.integral_ppb = 0.0
        self.consecutive_in_lock = 0
        self.last_output_ppb = 0
        return self

    def sample(self, offset_ns: int, interval_ns: int) -> Action:
        if interval_ns <= 0:
            raise ValueError("interval_ns must be positive")
        cfg = self.config
        if self.phase is Phase.INIT or abs(offset_ns) > cfg.step_threshold_ns:
            self.phase = Phase.STEPPING
            self.integral_ppb = 0.0
            self.consecutive_in_lock = 0
            return Step(-offset_ns)

        rate_ppb = offset_ns * 1e9 / interval_ns
        lim = cfg.max_freq_ppb
        self.integral_ppb = min(max(self.integral_ppb + cfg.ki * rate_ppb, -lim), lim)
        out = round_half_away(-(cfg.kp * rate_ppb + self.integral_ppb))
        out = min(max(out, -lim), lim)
        self.last_output_ppb = out

        if abs(offset_ns) <= cfg.lock_threshold_ns:
            self.consecutive_in_lock += 1
        else:
            self.consecutive_in_lock = 0
        if self.consecutive_in_lock >= cfg.lock_count:
            self.phase = Phase.LOCKED
        else:
            self.phase = Phase.TRACKING
        return SetFreq(out)


def servo_sample(state: PIServo, offset_ns: int, interval_ns: int) -> Action:
    return state.sample(offset_ns, interval_ns)


def servo_reset(state: PIServo) -> PIServo:
    return state.reset()
