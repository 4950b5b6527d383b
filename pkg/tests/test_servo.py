import pytest
from hypothesis import given, settings, strategies as st

from rbis.clocks import SimulatedClock
from rbis.servo import Phase, PIServo, ServoConfig, SetFreq, Step, servo_reset, servo_sample

INTERVAL = 102_400_000


def test_first_sample_steps():
    assert servo_sample(PIServo(), 5 * 10**9, INTERVAL) == Step(-5 * 10**9)
    s = PIServo()
    assert s.sample(3, INTERVAL) == Step(-3)
    assert s.phase is Phase.STEPPING


def test_converged_fixed_point():
    s = PIServo()
    s.sample(0, INTERVAL)
    assert s.sample(0, INTERVAL) == SetFreq(0)


def test_control_law_example():
    s = PIServo()
    s.sample(0, INTERVAL)
    action = s.sample(1000, INTERVAL)
    # 1000 ns over 102.4 ms is 9765.625 ppb; integral 0.3 * that
    assert s.integral_ppb == pytest.approx(2929.6875)
    assert action == SetFreq(-9766)


def test_large_offset_restep_resets_integral():
    s = PIServo()
    s.sample(0, INTERVAL)
    s.sample(5000, INTERVAL)
    assert s.integral_ppb != 0
    assert s.sample(20_000_000, INTERVAL) == Step(-20_000_000)
    assert s.integral_ppb == 0 and s.phase is Phase.STEPPING


def test_rejects_zero_interval():
    with pytest.raises(ValueError):
        PIServo().sample(1, 0)


def test_reset():
    s = PIServo()
    s.sample(10, INTERVAL)
    s.sample(10, INTERVAL)
    servo_reset(s)
    assert (s.phase, s.integral_ppb, s.consecutive_in_lock) == (Phase.INIT, 0.0, 0)
    assert isinstance(s.sample(1, INTERVAL), Step)
    servo_reset(servo_reset(s))
    assert s.phase is Phase.INIT


def test_config_validation():
    with pytest.raises(ValueError):
        ServoConfig(kp=0)
    with pytest.raises(ValueError):
        ServoConfig(ki=-0.1)
    with pytest.raises(ValueError):
        ServoConfig(lock_count=0)


def test_lock_and_unlock():
    s = PIServo(ServoConfig(lock_count=3))
    s.sample(0, INTERVAL)
    phases = [s.sample(10, INTERVAL) and s.phase for _ in range(3)]
    assert phases == [Phase.TRACKING, Phase.TRACKING, Phase.LOCKED]
    s.sample(60_000, INTERVAL)
    assert s.phase is Phase.TRACKING


@given(st.lists(st.integers(1, 10_000_000), min_size=1, max_size=60))
def test_positive_offsets_never_speed_up(offsets):
    s = PIServo()
    s.sample(offsets[0], INTERVAL)
    for off in offsets[1:]:
        action = s.sample(off, INTERVAL)
        assert isinstance(action, SetFreq) and action.adj_ppb <= 0


@given(st.lists(st.integers(-10_000_000, 10_000_000), min_size=1, max_size=80))
def test_anti_windup(offsets):
    cfg = ServoConfig()
    s = PIServo(cfg)
    for off in offsets:
        action = s.sample(off, 1000)
        assert abs(s.integral_ppb) <= cfg.max_freq_ppb
        if isinstance(action, SetFreq):
            assert abs(action.adj_ppb) <= cfg.max_freq_ppb


@settings(max_examples=40, deadline=None)
@given(skew=st.floats(-100, 100, allow_nan=False), offset=st.integers(-(10**10), 10**10))
def test_closed_loop_convergence(skew, offset):
    """Noise-free samples at the beacon interval lock within 50 samples."""
    master = SimulatedClock()
    slave = SimulatedClock(offset_ns=offset, skew_ppm=skew)
    servo = PIServo()
    cfg = servo.config
    for k in range(1, 51):
        t = k * INTERVAL
        off = slave.read(t) - master.read(t)
        action = servo.sample(off, INTERVAL)
        if isinstance(action, Step):
            slave.step(action.delta_ns, t, allow_backward=True)
        else:
            slave.set_freq(action.adj_ppb, t)
    t = 51 * INTERVAL
    assert abs(slave.read(t) - master.read(t)) < cfg.lock_threshold_ns
    assert servo.phase is Phase.LOCKED


def test_determinism():
    seq = [123, -5000, 777, 40_000, 0, -1, 12_000_000, 3]
    runs = []
    for _ in range(2):
        s = PIServo()
        runs.append([s.sample(o, INTERVAL) for o in seq])
    assert runs[0] == runs[1]
