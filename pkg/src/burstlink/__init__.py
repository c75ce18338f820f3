"""Burst modem toolkit on a deterministic flowgraph runtime with
timed event insertion and extraction."""

from .dsp import ChannelParams
from .errors import BurstlinkError, ConfigError
from .eventstream import EsSink, EsSource, EventDescriptor, TriggerMessage
from .modems import (
    ModemGraph,
    build_acm_demo,
    build_fsk_rx,
    build_fsk_tx,
    build_psk_genie_rx,
    build_psk_rx,
    build_psk_tx,
    connect_link,
)
from .phy import BurstConfig
from .runtime import PDU, Block, Flowgraph
from .sim import LinkSetup, RunReport, ber_sweep, run_link

__version__ = "0.1.0"

__all__ = [
    "Block", "BurstConfig", "BurstlinkError", "ChannelParams", "ConfigError", "EsSink", "EsSource",
    "EventDescriptor", "Flowgraph", "LinkSetup", "ModemGraph", "PDU", "RunReport", "TriggerMessage",
    "ber_sweep", "build_acm_demo", "build_fsk_rx", "build_fsk_tx", "build_psk_genie_rx", "build_psk_rx",
    "build_psk_tx", "connect_link", "run_link",
]
