"""Simulation of a DMD-to-event-camera visible light link.

A digital micromirror device splits its array into independently switched
channel blocks; an event camera watches the array and each channel is
decoded from the events at its centre pixel.
"""
from .core import (ETX, STX, ChannelLayout, Event, EventStream, Packet, Polarity, RateClass,
                   build_layout, classify_rates, data_rate, deframe_bits, frame_packet,
                   single_rate)
from .evaluation import Scenario, TrialResult, ber, max_rate_search, run_trial, sweep
from .modulator import ChannelBitstream, FrameSchedule, fill_payloads, mapping_schedule, modulate
from .optics import OpticalConfig, ProjectionError, ProjectionModel, project_channels
from .receiver import (ChannelMap, DecodeMode, DecoderConfig, DetectionError, MappingError,
                       build_heatmap, decode_absolute, decode_all, decode_relative, dedup,
                       extract_channel_boxes, map_channels)
from .sensor import SensorConfig, SensorStats, simulate

__version__ = "0.1.0"

__all__ = [
    "ETX", "STX", "ChannelBitstream", "ChannelLayout", "ChannelMap", "DecodeMode",
    "DecoderConfig", "DetectionError", "Event", "EventStream", "FrameSchedule", "MappingError",
    "OpticalConfig", "Packet", "Polarity", "ProjectionError", "ProjectionModel", "RateClass",
    "Scenario", "SensorConfig", "SensorStats", "TrialResult", "ber", "build_heatmap",
    "build_layout", "classify_rates", "data_rate", "decode_absolute", "decode_all",
    "decode_relative", "dedup", "deframe_bits", "extract_channel_boxes", "fill_payloads",
    "frame_packet", "map_channels", "mapping_schedule", "max_rate_search", "modulate",
    "project_channels", "run_trial", "simulate", "single_rate", "sweep",
]
