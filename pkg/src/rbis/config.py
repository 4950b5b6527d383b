"""Flat ``key=value`` configuration files.

Blank lines and lines starting with ``#`` are ignored.  Every key must be
known; repeating a key is an error.  Channel settings start from an optional
``<channel>_preset`` and individual keys override single fields.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .servo import ServoConfig
from .simnet import ChannelModel, ClockParams, Distribution, SimConfig, preset


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    return int(text.replace("_", ""))


def _channel_keys(prefix: str) -> dict:
    return {
        f"{prefix}_preset": str,
        f"{prefix}_distribution": str,
        f"{prefix}_mean_delay_ns": _int,
        f"{prefix}_sigma_ns": _int,
        f"{prefix}_{'channel_drop_prob' if prefix == 'sync' else 'drop_prob'}": float,
        f"{prefix}_min_delay_ns": _int,
    }


KEYS: dict[str, type] = {
    "seed": _int,
    "duration_s": float,
    "beacon_interval_ms": float,
    "follow_up_every": _int,
    "timestamp_source": str,
    "estimator_window": _int,
    "pairing_timeout_ms": float,
    "pending_capacity": _int,
    "master_offset_ns": _int,
    "master_skew_ppm": float,
    "slave_offset_ns": _int,
    "slave_skew_ppm": float,
    "sync_drop_prob": float,
    **_channel_keys("sync"),
    **_channel_keys("followup"),
    **_channel_keys("bench"),
    "bench_probes": _int,
    "servo_enabled": _bool,
    "servo_kp": float,
    "servo_ki": float,
    "servo_step_threshold_ns": _int,
    "servo_max_freq_ppb": _int,
    "servo_lock_threshold_ns": _int,
    "servo_lock_count": _int,
    "sync_port": _int,
    "followup_port": _int,
    "broadcast_address": str,
    "followup_address": str,
    "bind_address": str,
    "beacon_count": _int,
    "live_duration_s": float,
}


@dataclass(frozen=True)
class Config:
    values: dict
    path: Path | None = None

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if k not in self.values]
        if missing:
            where = f" in {self.path}" if self.path else ""
            raise ConfigError(f"missing required key(s){where}: {', '.join(missing)}")


def parse_config(text: str, path: Path | None = None) -> Config:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {line_no}: expected key=value, got {raw!r}")
        if key not in KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from None
    return Config(values, path)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def channel_from(cfg: Config, prefix: str, default: ChannelModel) -> ChannelModel:
    ch = default
    if f"{prefix}_preset" in cfg:
        try:
            ch = preset(cfg.get(f"{prefix}_preset"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    drop_key = f"{prefix}_channel_drop_prob" if prefix == "sync" else f"{prefix}_drop_prob"
    overrides = {
        "distribution": cfg.get(f"{prefix}_distribution"),
        "mean_delay_ns": cfg.get(f"{prefix}_mean_delay_ns"),
        "sigma_ns": cfg.get(f"{prefix}_sigma_ns"),
        "drop_prob": cfg.get(drop_key),
        "min_delay_ns": cfg.get(f"{prefix}_min_delay_ns"),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "distribution" in overrides:
        try:
            overrides["distribution"] = Distribution(overrides["distribution"].lower())
        except ValueError:
            raise ConfigError(f"unknown {prefix}_distribution {overrides['distribution']!r}") from None
    try:
        return replace(ch, **overrides)
    except ValueError as exc:
        raise ConfigError(f"{prefix} channel: {exc}") from None


def servo_from(cfg: Config) -> ServoConfig:
    d = ServoConfig()
    try:
        return ServoConfig(
            kp=cfg.get("servo_kp", d.kp),
            ki=cfg.get("servo_ki", d.ki),
            step_threshold_ns=cfg.get("servo_step_threshold_ns", d.step_threshold_ns),
            max_freq_ppb=cfg.get("servo_max_freq_ppb", d.max_freq_ppb),
            lock_threshold_ns=cfg.get("servo_lock_threshold_ns", d.lock_threshold_ns),
            lock_count=cfg.get("servo_lock_count", d.lock_count),
        )
    except ValueError as exc:
        raise ConfigError(f"servo: {exc}") from None


def sim_config_from(cfg: Config) -> SimConfig:
    cfg.require("seed", "duration_s")
    d = SimConfig()
    sim = SimConfig(
        seed=cfg.get("seed"),
        duration_s=cfg.get("duration_s"),
        beacon_interval_ns=round(cfg.get("beacon_interval_ms", d.beacon_interval_ns / 1e6) * 1e6),
        follow_up_every=cfg.get("follow_up_every", d.follow_up_every),
        master_clock=ClockParams(cfg.get("master_offset_ns", 0), cfg.get("master_skew_ppm", 0.0)),
        slave_clock=ClockParams(cfg.get("slave_offset_ns", 0), cfg.get("slave_skew_ppm", 0.0)),
        sync_channel=channel_from(cfg, "sync", d.sync_channel),
        followup_channel=channel_from(cfg, "followup", d.followup_channel),
        servo=servo_from(cfg),
        servo_enabled=cfg.get("servo_enabled", d.servo_enabled),
        sync_drop_prob=cfg.get("sync_drop_prob", d.sync_drop_prob),
        timestamp_source=cfg.get("timestamp_source", d.timestamp_source),
        estimator_window=cfg.get("estimator_window", d.estimator_window),
        pairing_timeout_ns=round(cfg.get("pairing_timeout_ms", d.pairing_timeout_ns / 1e6) * 1e6),
        pending_capacity=cfg.get("pending_capacity", d.pending_capacity),
    )
    try:
        sim.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return sim


def bench_from(cfg: Config) -> tuple[ChannelModel, int, int]:
    """(channel, probes, seed) for the channel bench."""
    cfg.require("seed")
    if "bench_preset" not in cfg and "bench_mean_delay_ns" not in cfg:
        raise ConfigError("missing required key: bench_preset or bench_mean_delay_ns")
    channel = channel_from(cfg, "bench", ChannelModel(mean_delay_ns=0))
    probes = cfg.get("bench_probes", 6000)
    if probes < 2:
        raise ConfigError("bench_probes must be >= 2")
    return channel, probes, cfg.get("seed")
