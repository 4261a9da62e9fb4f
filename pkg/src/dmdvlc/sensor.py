"""Dynamic vision sensor model.

Pixels emit log-threshold events (with duplicates for large steps and
optional spurious ON noise); a single readout queue with finite bandwidth
and capacity then stamps the events, serving pixels near the optical centre
first and dropping arrivals that find the queue full.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .core import EventStream
from .modulator import FrameSchedule
from .optics import Footprints, OpticalConfig, PixelTrace, RenderedScene, render_traces

log = logging.getLogger(__name__)

# guards floor() against log round-off when a step is an exact threshold multiple
_EPS = 1e-9


@dataclass(frozen=True)
class SensorConfig:
    theta_on: float = 0.5
    theta_off: float = 0.55
    i_dark: float = 40.0
    dup_spacing: int = 10
    base_delay: float = 0.0
    radial_delay_coeff: float = 0.0
    bandwidth: float = math.inf
    queue_capacity: int = 1 << 40
    noise_rate: float = 0.0
    off_noise_rate: float = 0.0
    optical_center: tuple[float, float] | None = None
    rng_seed: int = 0
    carry_residual: bool = False
    n_rings: int = 5

    def __post_init__(self):
        if self.theta_on <= 0 or self.theta_off <= 0:
            raise ValueError("thresholds must be positive")
        if self.i_dark < 0:
            raise ValueError("i_dark must be >= 0")
        if self.bandwidth <= 0:
            raise ValueError("readout bandwidth must be positive")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.noise_rate < 0 or self.off_noise_rate < 0:
            raise ValueError("noise rates must be >= 0")
        if self.dup_spacing < 0 or self.base_delay < 0 or self.radial_delay_coeff < 0:
            raise ValueError("delays must be >= 0")
        if self.n_rings < 1:
            raise ValueError("n_rings must be >= 1")

    @property
    def service_us(self) -> float:
        """Readout time per event in microseconds."""
        return 0.0 if math.isinf(self.bandwidth) else 1e6 / self.bandwidth

    def center_for(self, width: int, height: int) -> tuple[float, float]:
        if self.optical_center is not None:
            return self.optical_center
        return (width - 1) / 2, (height - 1) / 2

    def with_seed(self, seed: int) -> "SensorConfig":
        return replace(self, rng_seed=seed)


@dataclass(frozen=True, eq=False)
class RawEvents:
    """Events before readout: generation time, pixel, polarity, duplicate flag."""

    gen_t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    dup: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dup is None:
            object.__setattr__(self, "dup", np.zeros(len(self.gen_t), dtype=bool))

    def __len__(self) -> int:
        return len(self.gen_t)

    @classmethod
    def concat(cls, parts: list["RawEvents"]) -> "RawEvents":
        if not parts:
            z = np.zeros(0, dtype=np.int64)
            return cls(z, z, z, z.astype(np.int8), z.astype(bool))
        return cls(*(np.concatenate([getattr(p, k) for p in parts])
                     for k in ("gen_t", "x", "y", "p", "dup")))


@dataclass
class SensorStats:
    generated: int = 0
    duplicates: int = 0
    noise: int = 0
    dropped: int = 0
    emitted: int = 0
    ring_edges: list[float] = field(default_factory=list)
    ring_generated: list[int] = field(default_factory=list)
    ring_dropped: list[int] = field(default_factory=list)

    @property
    def unique(self) -> int:
        return self.generated - self.duplicates - self.noise

    @property
    def ring_loss(self) -> list[float]:
        return [d / g if g else math.nan for g, d in zip(self.ring_generated, self.ring_dropped)]

    @property
    def loss_fraction(self) -> float:
        return self.dropped / self.generated if self.generated else 0.0

    def as_dict(self) -> dict:
        return {
            "generated": self.generated, "duplicates": self.duplicates, "noise": self.noise,
            "dropped": self.dropped, "emitted": self.emitted,
            "ring_edges": self.ring_edges, "ring_generated": self.ring_generated,
            "ring_dropped": self.ring_dropped, "ring_loss": self.ring_loss,
        }


def _log_level(lux: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    total = np.asarray(lux, dtype=np.float64) + cfg.i_dark
    if np.any(total <= 0):
        raise ValueError("illuminance plus dark current must be positive (log undefined)")
    return np.log(total)


def step_event_counts(times: np.ndarray, lux: np.ndarray, cfg: SensorConfig):
    """Per-step event count and polarity for one trace.

    Returns (step_times, counts, polarity) for steps 1..n-1. Without
    ``carry_residual`` the memorised level resets to the new value after every
    step; with it only the thresholds actually crossed are consumed.
    """
    v = _log_level(lux, cfg)
    if len(v) < 2:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z.astype(np.int8)
    if not cfg.carry_residual:
        delta = np.diff(v)
        up = delta > 0
        theta = np.where(up, cfg.theta_on, cfg.theta_off)
        counts = np.floor(np.abs(delta) / theta + _EPS).astype(np.int64)
        return np.asarray(times[1:], dtype=np.int64), counts, up.astype(np.int8)
    counts = np.zeros(len(v) - 1, dtype=np.int64)
    pol = np.zeros(len(v) - 1, dtype=np.int8)
    ref = v[0]
    for i in range(1, len(v)):
        delta = v[i] - ref
        if delta > 0:
            k = int(math.floor(delta / cfg.theta_on + _EPS))
            ref += k * cfg.theta_on
            pol[i - 1] = 1
        else:
            k = int(math.floor(-delta / cfg.theta_off + _EPS))
            ref -= k * cfg.theta_off
        counts[i - 1] = k
    return np.asarray(times[1:], dtype=np.int64), counts, pol


def _expand_steps(step_t, counts, pol, spacing: int):
    """Event times/polarities/dup flags from per-step counts."""
    total = int(counts.sum())
    if total == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z.astype(np.int8), z.astype(bool)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    j = np.arange(total, dtype=np.int64) - starts
    t = np.repeat(step_t, counts) + j * spacing
    return t, np.repeat(pol, counts), j > 0


def _noise_times(rng: np.random.Generator, rate: float, duration: int, n_pixels: int):
    if rate <= 0 or duration <= 0 or n_pixels == 0:
        return np.zeros(n_pixels, dtype=np.int64), np.zeros(0, dtype=np.int64)
    counts = rng.poisson(rate * duration / 1e6, n_pixels)
    times = rng.integers(0, duration, int(counts.sum()), dtype=np.int64)
    return counts, times


def generate_events(trace: PixelTrace, cfg: SensorConfig, duration: int | None = None,
                    rng: np.random.Generator | None = None) -> RawEvents:
    """Events of one pixel for a piecewise-constant illuminance trace.

    A step of log-size D yields floor(|D|/theta) same-polarity events spaced
    ``dup_spacing`` apart. Spurious ON (and optional OFF) events follow a
    Poisson process seeded from ``rng_seed`` and the pixel coordinates.
    """
    st, counts, pol = step_event_counts(trace.times, trace.lux, cfg)
    t, p, dup = _expand_steps(st, counts, pol, cfg.dup_spacing)
    x, y = trace.pixel
    if duration is None:
        duration = int(trace.times[-1]) + 1
    if rng is None:
        rng = np.random.default_rng((cfg.rng_seed, x, y))
    extra_t, extra_p = [], []
    for rate, polarity in ((cfg.noise_rate, 1), (cfg.off_noise_rate, 0)):
        _, nt = _noise_times(rng, rate, duration, 1)
        extra_t.append(nt)
        extra_p.append(np.full(len(nt), polarity, dtype=np.int8))
    t = np.concatenate([t] + extra_t)
    p = np.concatenate([p] + extra_p)
    dup = np.concatenate([dup, np.zeros(len(t) - len(dup), dtype=bool)])
    order = np.argsort(t, kind="stable")
    n = len(t)
    return RawEvents(t[order], np.full(n, x, dtype=np.int64), np.full(n, y, dtype=np.int64),
                     p[order], dup[order])


@njit(cache=True)
def _serve(arrival, service, capacity, stamps, keep):
    n = arrival.shape[0]
    accepted = np.empty(n, dtype=np.float64)
    n_acc = 0
    last = -1e300
    check = capacity < n
    for i in range(n):
        a = arrival[i]
        if check and n_acc >= capacity:
            # stamps of accepted events are non-decreasing: binary search
            lo, hi = 0, n_acc
            while lo < hi:
                mid = (lo + hi) >> 1
                if accepted[mid] <= a:
                    lo = mid + 1
                else:
                    hi = mid
            if n_acc - lo >= capacity:
                keep[i] = False
                continue
        s = last + service
        if a > s:
            s = a
        stamps[i] = s
        keep[i] = True
        accepted[n_acc] = s
        n_acc += 1
        last = s


def _pixel_geometry(width: int, height: int, cfg: SensorConfig):
    cx, cy = cfg.center_for(width, height)
    xs, ys = np.meshgrid(np.arange(width), np.arange(height), indexing="ij")
    dist = np.hypot(xs - cx, ys - cy).ravel()
    # centre-first service order; ties by pixel id keep it deterministic
    order = np.lexsort((np.arange(dist.size), dist))
    rank = np.empty(dist.size, dtype=np.int64)
    rank[order] = np.arange(dist.size)
    return dist, rank


def readout(raw: RawEvents, cfg: SensorConfig, width: int, height: int,
            duration: int | None = None) -> tuple[EventStream, SensorStats]:
    """Stamp raw events through the single readout queue.

    Events are served in generation order (nearer the optical centre first
    on ties). Each is stamped at max(gen_t + detect_delay, previous stamp +
    1/B), where detect_delay grows linearly with distance from the optical
    centre; arrivals that find ``queue_capacity`` events waiting are dropped.
    """
    dist, rank = _pixel_geometry(width, height, cfg)
    n = len(raw)
    pix = raw.x.astype(np.int64) * height + raw.y.astype(np.int64)
    if n:
        key = raw.gen_t.astype(np.int64) * (width * height) + rank[pix]
        order = np.argsort(key, kind="stable")
    else:
        order = np.zeros(0, dtype=np.int64)
    pix = pix[order]
    gen_t = raw.gen_t[order]
    arrival = gen_t + (cfg.base_delay + cfg.radial_delay_coeff * dist[pix])
    stamps = np.empty(n, dtype=np.float64)
    keep = np.empty(n, dtype=np.bool_)
    _serve(np.ascontiguousarray(arrival, dtype=np.float64), cfg.service_us,
           int(min(cfg.queue_capacity, 1 << 62)), stamps, keep)

    t_out = np.floor(stamps[keep] + 1e-6).astype(np.int64)
    pix_out = pix[keep]
    xs, ys = np.divmod(pix_out, height)
    p_out = raw.p[order][keep]
    end = int(t_out[-1]) + 1 if len(t_out) else 0
    if duration is not None:
        end = max(end, int(duration))
    stream = EventStream(t_out, xs, ys, p_out, width, height, end)

    stats = SensorStats(generated=n, duplicates=int(raw.dup.sum()), dropped=int(n - keep.sum()),
                        emitted=int(keep.sum()))
    if n:
        r = dist[pix]
        r_max = float(r.max())
        edges = np.linspace(0.0, r_max, cfg.n_rings + 1)
        ring = np.minimum(np.searchsorted(edges, r, side="right") - 1, cfg.n_rings - 1)
        stats.ring_edges = edges.tolist()
        stats.ring_generated = np.bincount(ring, minlength=cfg.n_rings).tolist()
        stats.ring_dropped = np.bincount(ring[~keep], minlength=cfg.n_rings).tolist()
    return stream, stats


def scene_events(scene: RenderedScene, cfg: SensorConfig) -> tuple[RawEvents, int]:
    """Raw events for every pixel of a rendered scene plus the noise count.

    Pixels sharing a trace share its deterministic events; noise is drawn
    from one generator seeded with ``rng_seed``, pixel by pixel.
    """
    parts = []
    for g in scene.groups:
        st, counts, pol = step_event_counts(g.times, g.lux, cfg)
        t, p, dup = _expand_steps(st, counts, pol, cfg.dup_spacing)
        if not len(t):
            continue
        npx = len(g.pixels)
        parts.append(RawEvents(
            np.tile(t, npx),
            np.repeat(g.pixels[:, 0], len(t)),
            np.repeat(g.pixels[:, 1], len(t)),
            np.tile(p, npx),
            np.tile(dup, npx),
        ))
    rng = np.random.default_rng(cfg.rng_seed)
    n_pix = scene.width * scene.height
    n_noise = 0
    for rate, polarity in ((cfg.noise_rate, 1), (cfg.off_noise_rate, 0)):
        counts, times = _noise_times(rng, rate, scene.duration, n_pix)
        if not len(times):
            continue
        pid = np.repeat(np.arange(n_pix, dtype=np.int64), counts)
        xs, ys = np.divmod(pid, scene.height)
        parts.append(RawEvents(times, xs, ys, np.full(len(times), polarity, dtype=np.int8),
                               np.zeros(len(times), dtype=bool)))
        n_noise += len(times)
    return RawEvents.concat(parts), n_noise


def simulate(schedule: FrameSchedule, footprints: Footprints, optics: OpticalConfig,
             cfg: SensorConfig) -> tuple[EventStream, SensorStats]:
    """Render, generate and read out: the full transmitter-to-events path."""
    scene = render_traces(schedule, footprints, optics)
    raw, n_noise = scene_events(scene, cfg)
    stream, stats = readout(raw, cfg, scene.width, scene.height, duration=schedule.duration)
    stats.noise = n_noise
    log.debug("simulate: %d raw events, %d dropped", stats.generated, stats.dropped)
    return stream, stats
