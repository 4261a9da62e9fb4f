"""Projection of channel blocks onto the camera and per-pixel illuminance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import ChannelLayout
from .modulator import FrameSchedule


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectionModel:
    """Affine map from grid coordinates to camera pixel coordinates.

    Grid coordinates are in mirror-block units measured from the top-left of
    the channel grid, so channel (ix, iy) occupies
    [ix*(1+G), ix*(1+G)+1) x [iy*(1+G), iy*(1+G)+1).
    ``coeffs`` = (a, b, c, d, e, f) with px = a*u + b*v + c, py = d*u + e*v + f.
    """

    coeffs: tuple[float, float, float, float, float, float]
    camera_width: int
    camera_height: int

    def __post_init__(self):
        if len(self.coeffs) != 6:
            raise ValueError("affine transform needs 6 coefficients")
        a, b, _, d, e, _ = self.coeffs
        if abs(a * e - b * d) < 1e-12:
            raise ValueError("projection is not invertible")
        if self.camera_width < 1 or self.camera_height < 1:
            raise ValueError("camera dimensions must be positive")

    @classmethod
    def centered(cls, layout: ChannelLayout, camera_width: int, camera_height: int,
                 scale: float = 3.0, rotation_deg: float = 0.0,
                 translation: tuple[float, float] = (0.0, 0.0)) -> "ProjectionModel":
        """Grid centred on the camera, ``scale`` pixels per block, rotated about its centre."""
        span = 1 + layout.guard
        gw = layout.grid_cols * span - layout.guard
        gh = layout.grid_rows * span - layout.guard
        th = math.radians(rotation_deg)
        a, b = scale * math.cos(th), -scale * math.sin(th)
        d, e = scale * math.sin(th), scale * math.cos(th)
        cu, cv = gw / 2, gh / 2
        c = camera_width / 2 + translation[0] - (a * cu + b * cv)
        f = camera_height / 2 + translation[1] - (d * cu + e * cv)
        return cls((a, b, c, d, e, f), camera_width, camera_height)

    def apply(self, u, v):
        a, b, c, d, e, f = self.coeffs
        return a * u + b * v + c, d * u + e * v + f

    def inverse(self, px, py):
        a, b, c, d, e, f = self.coeffs
        det = a * e - b * d
        x, y = px - c, py - f
        return (e * x - b * y) / det, (-d * x + a * y) / det


@dataclass(frozen=True)
class OpticalConfig:
    ambient_lux: float = 0.0
    channel_on_lux: float = 400.0
    attenuation: float = 1.0
    footprint_margin: float = 0.0
    crosstalk: float = 0.0
    gains: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.ambient_lux < 0 or self.channel_on_lux < 0:
            raise ValueError("illuminance must be non-negative")
        if not 0 < self.attenuation <= 1:
            raise ValueError("attenuation must lie in (0, 1]")
        if not 0 <= self.footprint_margin < 1:
            raise ValueError("footprint_margin must lie in [0, 1)")
        if not 0 <= self.crosstalk <= 1:
            raise ValueError("crosstalk must lie in [0, 1]")

    def on_level(self, channel: int) -> float:
        g = 1.0 if self.gains is None else self.gains[channel]
        return self.channel_on_lux * self.attenuation * g


@dataclass(frozen=True, eq=False)
class Footprints:
    """Per-channel pixel sets on a camera, stored as an owner image.

    ``owner[x, y]`` is the channel index lighting pixel (x, y), or -1.
    """

    owner: np.ndarray
    n_channels: int
    _order: np.ndarray = field(init=False, repr=False)
    _offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        flat = self.owner.ravel()
        lit = np.flatnonzero(flat >= 0)
        order = lit[np.argsort(flat[lit], kind="stable")]
        counts = np.bincount(flat[lit], minlength=self.n_channels)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        self.owner.flags.writeable = False
        object.__setattr__(self, "_order", order)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def width(self) -> int:
        return self.owner.shape[0]

    @property
    def height(self) -> int:
        return self.owner.shape[1]

    def sizes(self) -> np.ndarray:
        return np.diff(self._offsets)

    def pixels(self, channel: int) -> np.ndarray:
        """(k, 2) array of (x, y) pixels of one channel."""
        idx = self._order[self._offsets[channel]:self._offsets[channel + 1]]
        return np.stack(np.unravel_index(idx, self.owner.shape), axis=1)

    def __getitem__(self, channel: int) -> set[tuple[int, int]]:
        return {(int(x), int(y)) for x, y in self.pixels(channel)}

    def channel_pixels(self) -> Iterator[tuple[int, np.ndarray]]:
        for c in range(self.n_channels):
            if self._offsets[c + 1] > self._offsets[c]:
                yield c, self.pixels(c)


def project_channels(layout: ChannelLayout, model: ProjectionModel,
                     margin: float = 0.0) -> Footprints:
    """Rasterise every channel block to the camera pixels whose centres it covers.

    Blocks are shrunk by ``margin`` (a fraction of the block side) before
    projection. Distinct channels must stay separated by at least one dark
    pixel, otherwise the projection is rejected.
    """
    w, h = model.camera_width, model.camera_height
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5, indexing="ij")
    u, v = model.inverse(px, py)
    span = 1 + layout.guard
    ix = np.floor(u / span)
    iy = np.floor(v / span)
    fu = u - ix * span
    fv = v - iy * span
    lo, hi = margin / 2, 1 - margin / 2
    inside = ((fu >= lo) & (fu < hi) & (fv >= lo) & (fv < hi)
              & (ix >= 0) & (ix < layout.grid_cols) & (iy >= 0) & (iy < layout.grid_rows))
    owner = np.full((w, h), -1, dtype=np.int32)
    owner[inside] = (iy[inside] * layout.grid_cols + ix[inside]).astype(np.int32)

    # neighbouring pixels owned by different channels mean the guard vanished
    for a, b in ((owner[1:, :], owner[:-1, :]), (owner[:, 1:], owner[:, :-1]),
                 (owner[1:, 1:], owner[:-1, :-1]), (owner[1:, :-1], owner[:-1, 1:])):
        clash = (a >= 0) & (b >= 0) & (a != b)
        if clash.any():
            raise ProjectionError("projection scale too small / channels merge")

    fp = Footprints(owner, layout.n_channels)
    sizes = fp.sizes()
    for c in np.flatnonzero(sizes == 0).tolist():
        gx, gy = layout.grid_position(c)
        cx, cy = model.apply(gx * span + 0.5, gy * span + 0.5)
        if 0 <= cx < w and 0 <= cy < h:
            raise ProjectionError(
                f"projection scale too small: channel {c} covers no pixel centre")
    return fp


@dataclass(frozen=True, eq=False)
class PixelTrace:
    """Piecewise-constant illuminance at one pixel; ``times[0] == 0``."""

    pixel: tuple[int, int]
    times: np.ndarray
    lux: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        lux = np.asarray(self.lux, dtype=np.float64)
        if len(times) == 0 or times[0] != 0:
            raise ValueError("trace must start at t = 0")
        if len(times) != len(lux):
            raise ValueError("times and lux differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if np.any(lux < 0):
            raise ValueError("illuminance must be non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "lux", lux)

    def value_at(self, t: float) -> float:
        return float(self.lux[np.searchsorted(self.times, t, side="right") - 1])


@dataclass(frozen=True, eq=False)
class TraceGroup:
    """Pixels sharing one illuminance trace."""

    pixels: np.ndarray
    times: np.ndarray
    lux: np.ndarray
    channel: int = -1

    def traces(self) -> Iterator[PixelTrace]:
        for x, y in self.pixels.tolist():
            yield PixelTrace((x, y), self.times, self.lux)


@dataclass(frozen=True, eq=False)
class RenderedScene:
    groups: list[TraceGroup]
    width: int
    height: int
    duration: int

    def traces(self) -> Iterator[PixelTrace]:
        for g in self.groups:
            yield from g.traces()

    def trace_at(self, x: int, y: int) -> PixelTrace:
        for g in self.groups:
            hit = np.flatnonzero((g.pixels[:, 0] == x) & (g.pixels[:, 1] == y))
            if len(hit):
                return PixelTrace((x, y), g.times, g.lux)
        raise KeyError((x, y))


def _step_trace(times: np.ndarray, states: np.ndarray, base: float, amp: float):
    """Trace (times, lux) starting at t=0 from a channel's transitions."""
    lux = base + amp * states.astype(np.float64)
    if len(times) and times[0] == 0:
        return times.copy(), lux
    return np.concatenate(([0], times)), np.concatenate(([base], lux))


def _mixed_trace(parts: list[tuple[np.ndarray, np.ndarray, float]], base: float):
    """Sum of several channels' weighted states on top of ``base``."""
    all_t = np.unique(np.concatenate([[0]] + [p[0] for p in parts]))
    lux = np.full(len(all_t), base)
    for times, states, amp in parts:
        k = np.searchsorted(times, all_t, side="right") - 1
        st = np.where(k >= 0, states[np.maximum(k, 0)], 0)
        lux = lux + amp * st
    keep = np.concatenate(([True], np.diff(lux) != 0))
    return all_t[keep], lux[keep]


def render_traces(schedule: FrameSchedule, footprints: Footprints,
                  optics: OpticalConfig) -> RenderedScene:
    """Illuminance traces for every camera pixel, grouped by shared trace.

    Footprint pixels see ambient plus the channel's ON level while it is ON;
    with ``optics.crosstalk`` > 0 the one-pixel ring around each footprint
    receives that fraction of the neighbouring channels' light.
    """
    per_channel = schedule.split()
    z = np.zeros(0, dtype=np.int64)
    base = optics.ambient_lux
    groups: list[TraceGroup] = []
    for c, pix in footprints.channel_pixels():
        times, states = per_channel.get(c, (z, z.astype(np.int8)))
        t, lux = _step_trace(times, states, base, optics.on_level(c))
        groups.append(TraceGroup(pix, t, lux, c))

    owner = footprints.owner
    dark = owner < 0
    if optics.crosstalk > 0:
        ring_of: dict[tuple[int, int], list[int]] = {}
        w, h = owner.shape
        for c, pix in footprints.channel_pixels():
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    nx, ny = pix[:, 0] + dx, pix[:, 1] + dy
                    ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
                    nx, ny = nx[ok], ny[ok]
                    ok = dark[nx, ny]
                    for x, y in zip(nx[ok].tolist(), ny[ok].tolist()):
                        lst = ring_of.setdefault((x, y), [])
                        if not lst or lst[-1] != c:
                            lst.append(c)
        by_set: dict[tuple[int, ...], list[tuple[int, int]]] = {}
        for xy, chans in ring_of.items():
            by_set.setdefault(tuple(sorted(set(chans))), []).append(xy)
        for chans, pixels in sorted(by_set.items()):
            parts = []
            for c in chans:
                times, states = per_channel.get(c, (z, z.astype(np.int8)))
                parts.append((times, states, optics.crosstalk * optics.on_level(c)))
            t, lux = _mixed_trace(parts, base)
            groups.append(TraceGroup(np.array(sorted(pixels), dtype=np.int64), t, lux))
            for x, y in pixels:
                dark[x, y] = False

    rest = np.argwhere(dark)
    if len(rest):
        groups.append(TraceGroup(rest, np.zeros(1, dtype=np.int64), np.array([base])))
    return RenderedScene(groups, footprints.width, footprints.height, schedule.duration)
