"""Soft real-time network emulation: wall-clock synchronized event dispatch, packet capture modes, delay/datarate links."""

from .capture import Batched, Immediate, Packet
from .kernel import NS_PER_MS, NS_PER_S, NS_PER_US, Event, FutureEventSet, Kernel
from .netmodel import ChannelParams, build_topology, transit_time
from .scheduler import CORRECTED, FIXED_TIMEOUT, RealTimeScheduler, SchedulerPolicy

__version__ = "0.1.0"
