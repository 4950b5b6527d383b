"""Reference broadcast clock synchronization: estimator, servo, wire
protocol, and a deterministic channel simulator."""

from .clocks import SimulatedClock, TsfSource, SystemSource
from .estimator import Estimator, SyncEstimate, TimestampTuple, compute_offset, compute_skew
from .protocol import FollowUpMessage, Master, Slave, SyncMessage, decode, encode
from .servo import PIServo, ServoConfig, SetFreq, Step
from .simnet import ChannelModel, ClockParams, SimConfig, rtt_bench, run_simulation
from .stats import SummaryMetrics, compute_stats
from .trace import TraceRecord, read_trace, write_trace

__version__ = "0.1.0"
