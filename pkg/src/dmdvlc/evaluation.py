"""BER and throughput measurement, parameter sweeps and rate search."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import (ChannelLayout, Packet, RateClass, bytes_to_bits, classify_rates,
                   data_rate)
from .modulator import fill_payloads, mapping_schedule, modulate
from .optics import Footprints, OpticalConfig, ProjectionModel, project_channels
from .receiver import (ChannelBox, ChannelEntry, ChannelMap, DecodeMode, build_heatmap,
                       decode_all, extract_channel_boxes, map_channels)
from .sensor import SensorConfig, SensorStats, simulate

log = logging.getLogger(__name__)

SWEEP_VARIABLES = ("refresh_rate", "channel_count", "decoder_mode", "bandwidth", "ambient")


@dataclass(frozen=True)
class ChannelResult:
    index: int
    packets: int
    bits: int
    errors: int

    @property
    def ber(self) -> float | None:
        """Bit error rate over valid packets, None when no packet was valid."""
        return self.errors / self.bits if self.bits else None


def ber(tx_payload: bytes, rx_packets: Mapping[int, Sequence[Packet]]) -> list[ChannelResult]:
    """Per-channel payload bit errors against the transmitted payload.

    Only packets that passed STX/ETX framing are compared. Payloads of a
    different length than ``tx_payload`` count every bit as wrong.
    """
    ref = bytes_to_bits(tx_payload)
    out = []
    for index in sorted(rx_packets):
        packets = rx_packets[index]
        errors = 0
        for pk in packets:
            got = bytes_to_bits(pk.payload)
            if len(got) != len(ref):
                errors += len(ref)
            else:
                errors += int(np.count_nonzero(got != ref))
        out.append(ChannelResult(index, len(packets), len(ref) * len(packets), errors))
    return out


@dataclass(frozen=True)
class Scenario:
    """Everything a trial needs apart from the seed.

    The projection is the grid centred on the camera at ``scale`` pixels per
    block unless explicit ``affine`` coefficients are given.
    """

    layout: ChannelLayout
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    mode: DecodeMode = DecodeMode.RELATIVE
    packets_per_channel: int = 30
    payload: bytes = b"good"
    idle_symbols: int = 0
    stagger: bool = False
    camera_width: int = 346
    camera_height: int = 260
    scale: float = 3.0
    affine: tuple[float, ...] | None = None
    calibration_rate: float = 588.0
    calibration_duration: float = 1.0
    binarize_frac: float = 0.2
    morph_radius: int = 1
    connectivity: int = 4
    ground_truth_map: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", DecodeMode(self.mode))
        if self.packets_per_channel < 1:
            raise ValueError("packets_per_channel must be >= 1")

    def projection(self) -> ProjectionModel:
        if self.affine is not None:
            return ProjectionModel(tuple(self.affine), self.camera_width, self.camera_height)
        return ProjectionModel.centered(self.layout, self.camera_width, self.camera_height, self.scale)


@dataclass
class TrialResult:
    """Outcome of one trial.

    ``valid_frac`` is valid packets over packets sent. With staggered
    traffic it can slightly exceed 1: a trailing partial frame whose missing
    bits equal the final held mirror state decodes as one more packet.
    """

    n_channels: int
    f_c: float
    f_p: float
    mode: str
    sensor: dict
    channels: list[ChannelResult]
    expected_packets: int
    bps: float
    stats: SensorStats
    mapped: int

    @property
    def mean_ber(self) -> float | None:
        vals = [c.ber for c in self.channels if c.ber is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def undef_channels(self) -> int:
        return self.n_channels - sum(1 for c in self.channels if c.packets)

    @property
    def valid_frac(self) -> float:
        total = self.n_channels * self.expected_packets
        return sum(c.packets for c in self.channels) / total if total else 0.0

    @property
    def events(self) -> int:
        return self.stats.emitted

    @property
    def dropped(self) -> int:
        return self.stats.dropped

    def summary(self) -> dict:
        return {
            "N": self.n_channels, "fc_hz": self.f_c, "fp_hz": self.f_p, "mode": self.mode,
            "ber": self.mean_ber, "valid_frac": self.valid_frac,
            "undef_channels": self.undef_channels, "bps": self.bps,
            "events": self.events, "dropped": self.dropped,
            "duplicates": self.stats.duplicates, "generated": self.stats.generated,
        }


def footprint_map(footprints: Footprints) -> ChannelMap:
    """Channel map read straight from the rasterised footprints."""
    entries = {}
    for c, pix in footprints.channel_pixels():
        x0, y0 = (int(v) for v in pix.min(axis=0))
        x1, y1 = (int(v) for v in pix.max(axis=0))
        entries[c] = ChannelEntry(c, ChannelBox(x0, y0, x1, y1, x0 + (x1 - x0) // 2, y0 + (y1 - y0) // 2))
    return ChannelMap(entries)


def calibrate(sc: Scenario, footprints: Footprints, seed: int = 0) -> ChannelMap:
    """Run the calibration traffic through the sensor and map the channels.

    The calibration recording is read out without bandwidth or capacity
    limits: every channel sends its index packets in lockstep, and the map
    depends only on geometry, not on how the link is later loaded.
    """
    sched = mapping_schedule(sc.layout, sc.calibration_rate, sc.calibration_duration)
    cfg = replace(sc.sensor, bandwidth=math.inf, queue_capacity=SensorConfig.queue_capacity,
                  rng_seed=seed)
    stream, _ = simulate(sched, footprints, sc.optics, cfg)
    boxes = extract_channel_boxes(build_heatmap(stream), sc.binarize_frac, sc.morph_radius,
                                  sc.connectivity)
    return map_channels(stream, boxes, sc.calibration_rate)


_MAP_CACHE: dict[tuple, ChannelMap] = {}


def _map_key(sc: Scenario, seed: int) -> tuple:
    lay = sc.layout
    geom = (lay.mirror_cols, lay.mirror_rows, lay.block_size, lay.guard, lay.grid_cols, lay.grid_rows)
    sensor = replace(sc.sensor, bandwidth=math.inf, queue_capacity=SensorConfig.queue_capacity)
    return (geom, sc.projection(), sc.optics, sensor.with_seed(seed), sc.calibration_rate,
            sc.calibration_duration, sc.binarize_frac, sc.morph_radius, sc.connectivity)


def run_trial(sc: Scenario, seed: int = 0, cmap: ChannelMap | None = None) -> TrialResult:
    """fill_payloads, modulate, simulate, map, decode and score one configuration.

    The channel map comes from ``cmap`` if given, otherwise from a cached
    calibration run of the same geometry and sensor.
    """
    lay = sc.layout
    footprints = project_channels(lay, sc.projection(), sc.optics.footprint_margin)
    if cmap is None:
        if sc.ground_truth_map:
            cmap = footprint_map(footprints)
        else:
            key = _map_key(sc, seed)
            if key not in _MAP_CACHE:
                _MAP_CACHE[key] = calibrate(sc, footprints, seed)
            cmap = _MAP_CACHE[key]
    streams = fill_payloads(lay, sc.payload, sc.packets_per_channel, sc.idle_symbols,
                            stagger_seed=seed if sc.stagger else None)
    sched = modulate(lay, streams)
    cfg = sc.sensor.with_seed(seed)
    stream, stats = simulate(sched, footprints, sc.optics, cfg)
    decoded = decode_all(stream, cmap, lay, sc.mode, payload_len=len(sc.payload))
    rx = {i: decoded[i].packets if i in decoded else [] for i in range(lay.n_channels)}
    return TrialResult(
        n_channels=lay.n_channels, f_c=lay.f_c, f_p=lay.f_p, mode=sc.mode.value,
        sensor={"bandwidth": cfg.bandwidth, "queue_capacity": cfg.queue_capacity,
                "theta_on": cfg.theta_on, "theta_off": cfg.theta_off, "seed": seed},
        channels=ber(sc.payload, rx), expected_packets=sc.packets_per_channel,
        bps=data_rate(lay), stats=stats, mapped=len(cmap))


def with_rates(sc: Scenario, f_c: float) -> Scenario:
    """Scenario at refresh rate ``f_c``, keeping the layout's f_p/f_c ratio."""
    lay = sc.layout
    return replace(sc, layout=lay.with_rates(f_c, f_c * lay.f_p / lay.f_c))


def with_channel_count(sc: Scenario, n: int) -> Scenario:
    """Scenario on a smaller grid of about ``n`` channels, same aspect ratio."""
    lay = sc.layout
    if n < 1:
        raise ValueError("channel count must be >= 1")
    rows = max(1, min(lay.grid_rows, round(math.sqrt(n * lay.grid_rows / lay.grid_cols))))
    cols = max(1, min(lay.grid_cols, round(n / rows)))
    sub = replace(lay, grid_cols=cols, grid_rows=rows,
                  rate_class=(RateClass.PERIPHERAL,) * (cols * rows))
    if lay.d > 0:
        sub = classify_rates(sub, lay.d, lay.f_c, lay.f_p)
    return replace(sc, layout=sub)


def apply_variable(sc: Scenario, variable: str, value) -> Scenario:
    if variable == "refresh_rate":
        return with_rates(sc, float(value))
    if variable == "channel_count":
        return with_channel_count(sc, int(value))
    if variable == "decoder_mode":
        return replace(sc, mode=DecodeMode(value))
    if variable == "bandwidth":
        return replace(sc, sensor=replace(sc.sensor, bandwidth=float(value)))
    if variable == "ambient":
        return replace(sc, optics=replace(sc.optics, ambient_lux=float(value)))
    raise ValueError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")


@dataclass
class SweepPoint:
    variable: str
    value: object
    result: TrialResult | None
    error: str | None = None


def sweep(variable: str, values: Sequence, base: Scenario, seed: int = 0) -> list[SweepPoint]:
    """One trial per grid value, seeded ``seed + index``, in grid order.

    A failing point is recorded with its error message and the sweep goes on.
    """
    if variable not in SWEEP_VARIABLES:
        raise ValueError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")
    if len(values) == 0:
        raise ValueError("empty sweep grid")
    out = []
    for i, v in enumerate(values):
        try:
            res = run_trial(apply_variable(base, variable, v), seed + i)
            out.append(SweepPoint(variable, v, res))
        except Exception as exc:  # a failed point must not end the sweep
            log.warning("sweep %s=%s failed: %s", variable, v, exc)
            out.append(SweepPoint(variable, v, None, f"{type(exc).__name__}: {exc}"))
    return out


@dataclass
class RateSearchResult:
    feasible: bool
    f_c: float | None
    f_p: float | None
    bps: float | None
    at_ceiling: bool
    trial: TrialResult | None
    reason: str = ""


def compliant(res: TrialResult, ber_target: float) -> bool:
    """BER defined, within target and no channel left without a valid packet."""
    b = res.mean_ber
    return b is not None and b <= ber_target and res.undef_channels == 0


def max_rate_search(base: Scenario, ber_target: float, mode: DecodeMode | str | None = None,
                    lo: float = 100.0, ceiling: float = 4000.0, resolution: float = 10.0,
                    seed: int = 0) -> RateSearchResult:
    """Largest refresh rate f_c in [lo, ceiling] meeting ``ber_target``.

    A dual-rate layout keeps f_p = f_c/2 throughout the search. Bisection
    assumes BER grows with rate; the result is resolved to ``resolution`` Hz.
    """
    if not 0 <= ber_target < 1:
        raise ValueError("ber_target must lie in [0, 1)")
    if not 0 < lo <= ceiling:
        raise ValueError("need 0 < lo <= ceiling")
    if mode is not None:
        base = replace(base, mode=DecodeMode(mode))
    dual = base.layout.n_central > 0 and base.layout.f_p != base.layout.f_c

    def scenario(f):
        lay = base.layout.with_rates(f, f / 2 if dual else f)
        return replace(base, layout=lay)

    def trial(f):
        return run_trial(scenario(f), seed)

    top = trial(ceiling)
    if compliant(top, ber_target):
        return RateSearchResult(True, ceiling, top.f_p, top.bps, True, top)
    low = trial(lo)
    if not compliant(low, ber_target):
        return RateSearchResult(False, None, None, None, False, low, "link infeasible")
    good, bad, best = lo, ceiling, low
    while bad - good > resolution:
        mid = round((good + bad) / 2 / resolution) * resolution
        if mid <= good or mid >= bad:
            mid = (good + bad) / 2
        res = trial(mid)
        if compliant(res, ber_target):
            good, best = mid, res
        else:
            bad = mid
    return RateSearchResult(True, good, best.f_p, best.bps, False, best)
