"""Receiver: channel mapping, duplicate removal and bit decoding."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import ChannelLayout, EventStream, Packet, STX, bytes_to_bits, deframe_bits

log = logging.getLogger(__name__)

US_PER_S = 1_000_000
_STX_BITS = bytes_to_bits(bytes([STX]))


class MappingError(ValueError):
    pass


class DetectionError(ValueError):
    pass


class DecodeMode(str, enum.Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


@dataclass(frozen=True)
class DecoderConfig:
    mode: DecodeMode = DecodeMode.RELATIVE
    rate: float = 1000.0
    payload_len: int = 4

    def __post_init__(self):
        object.__setattr__(self, "mode", DecodeMode(self.mode))
        if self.rate <= 0:
            raise ValueError("symbol rate must be positive")
        if self.payload_len < 1:
            raise ValueError("payload_len must be >= 1")


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Event counts per pixel, indexed ``counts[x, y]``."""

    counts: np.ndarray

    @property
    def width(self) -> int:
        return self.counts.shape[0]

    @property
    def height(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class ChannelBox:
    x0: int
    y0: int
    x1: int
    y1: int
    cx: int
    cy: int

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def overlaps(self, other: "ChannelBox") -> bool:
        return not (self.x1 < other.x0 or other.x1 < self.x0
                    or self.y1 < other.y0 or other.y1 < self.y0)


@dataclass(frozen=True)
class ChannelEntry:
    index: int
    box: ChannelBox

    @property
    def center(self) -> tuple[int, int]:
        return self.box.cx, self.box.cy


@dataclass
class ChannelMap:
    entries: dict[int, ChannelEntry] = field(default_factory=dict)
    unresolved: list[ChannelBox] = field(default_factory=list)

    def __post_init__(self):
        boxes = [e.box for e in self.entries.values()]
        for e in self.entries.values():
            if not e.box.contains(e.box.cx, e.box.cy):
                raise ValueError(f"channel {e.index}: centre outside its box")
        # sweep on x0 keeps the disjointness check near-linear
        boxes.sort(key=lambda b: b.x0)
        for i, b in enumerate(boxes):
            for o in boxes[i + 1:]:
                if o.x0 > b.x1:
                    break
                if b.overlaps(o):
                    raise ValueError("channel boxes overlap")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, index: int) -> bool:
        return index in self.entries

    def __getitem__(self, index: int) -> ChannelEntry:
        return self.entries[index]

    def restrict(self, indices) -> "ChannelMap":
        return ChannelMap({i: self.entries[i] for i in indices if i in self.entries})


def build_heatmap(stream: EventStream) -> Heatmap:
    """Per-pixel event tally over both polarities."""
    flat = np.bincount(stream.x.astype(np.int64) * stream.height + stream.y,
                       minlength=stream.width * stream.height)
    return Heatmap(flat.reshape(stream.width, stream.height))


def extract_channel_boxes(hm: Heatmap, binarize_frac: float = 0.2, morph_radius: int = 1,
                          connectivity: int = 4) -> list[ChannelBox]:
    """Binarise, open (erode then dilate) and label the heatmap.

    Pixels with count above ``binarize_frac * max`` are foreground. Each
    connected component yields its tight, inclusive bounding box and the
    middle pixel of that box (even sizes round toward the box origin).
    Boxes come back in row-major order of their centres.
    """
    if not 0 < binarize_frac < 1:
        raise ValueError("binarize_frac must lie in (0, 1)")
    peak = hm.counts.max() if hm.counts.size else 0
    if peak <= 0:
        raise DetectionError("no channels detected")
    mask = hm.counts > binarize_frac * peak
    if morph_radius > 0:
        se = np.ones((2 * morph_radius + 1,) * 2, dtype=bool)
        mask = ndimage.binary_dilation(ndimage.binary_erosion(mask, se), se)
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, n = ndimage.label(mask, structure)
    if n == 0:
        raise DetectionError("no channels detected")
    boxes = []
    for sl in ndimage.find_objects(labels):
        x0, x1 = sl[0].start, sl[0].stop - 1
        y0, y1 = sl[1].start, sl[1].stop - 1
        boxes.append(ChannelBox(x0, y0, x1, y1, x0 + (x1 - x0) // 2, y0 + (y1 - y0) // 2))
    boxes.sort(key=lambda b: (b.cy, b.cx))
    return boxes


def events_by_pixel(stream: EventStream, pixels) -> list[tuple[np.ndarray, np.ndarray]]:
    """(t, p) per requested pixel, in stream order."""
    pixels = list(pixels)
    lut = np.full((stream.width, stream.height), -1, dtype=np.int64)
    for k, (x, y) in enumerate(pixels):
        lut[x, y] = k
    sel = lut[stream.x, stream.y]
    idx = np.flatnonzero(sel >= 0)
    order = idx[np.argsort(sel[idx], kind="stable")]
    counts = np.bincount(sel[idx], minlength=len(pixels))
    cuts = np.cumsum(counts)[:-1]
    return [(stream.t[g], stream.p[g]) for g in np.split(order, cuts)]


def dedup(t: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Keep the first event and every event whose polarity differs from the last kept one."""
    t = np.asarray(t)
    p = np.asarray(p)
    if len(p) == 0:
        return t, p
    keep = np.concatenate(([True], p[1:] != p[:-1]))
    return t[keep], p[keep]


def _symbols(dt, rate: float):
    return np.rint(np.asarray(dt, dtype=np.float64) * rate / US_PER_S).astype(np.int64)


def _fit(bits: np.ndarray, total_bits: int) -> np.ndarray:
    if len(bits) >= total_bits:
        return bits[:total_bits]
    fill = bits[-1] if len(bits) else 0
    return np.concatenate((bits, np.full(total_bits - len(bits), fill, dtype=np.uint8)))


def _window_bits(t: np.ndarray, p: np.ndarray, t0: float, rate: float, nbits: int) -> np.ndarray:
    vals = np.full(nbits, -1, dtype=np.int8)
    if len(t):
        w = np.floor((t - t0) * (rate / US_PER_S)).astype(np.int64)
        ok = (w >= 0) & (w < nbits)
        # later events overwrite earlier ones in the same window
        vals[w[ok]] = p[ok]
    src = np.maximum.accumulate(np.where(vals >= 0, np.arange(nbits), -1))
    return np.where(src >= 0, vals[np.maximum(src, 0)], 0).astype(np.uint8)


def sync_absolute(t: np.ndarray, p: np.ndarray, rate: float) -> float:
    """Receiver time of symbol 0, found from the preamble.

    The first ON edge is taken as STX bit 1; candidate phases step by an
    eighth of a symbol across one symbol, the ones decoding most of STX
    correctly win, and the middle of the best run is returned.
    """
    ts = US_PER_S / rate
    on = np.flatnonzero(p == 1)
    if not len(on):
        return float(t[0] - ts) if len(t) else 0.0
    ref = float(t[on[0]]) - ts
    cands = [ref - j * ts / 8 for j in range(8)]
    scores = [int((_window_bits(t, p, c, rate, 8) == _STX_BITS).sum()) for c in cands]
    best = max(scores)
    runs, cur = [], []
    for j, s in enumerate(scores):
        if s == best:
            cur.append(j)
        else:
            if cur:
                runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    run = max(runs, key=len)
    return cands[run[(len(run) - 1) // 2]]


def decode_absolute(t: np.ndarray, p: np.ndarray, cfg: DecoderConfig, total_bits: int,
                    t0: float | None = None) -> np.ndarray:
    """Fixed-window decoding against the transmitter clock.

    Window i spans [t0 + i/Y, t0 + (i+1)/Y): an ON event decodes 1, an OFF
    event 0, an empty window repeats the previous bit (0 before the first
    window); with both polarities present the later event wins. ``t0``
    defaults to the preamble-synchronised start.
    """
    t = np.asarray(t, dtype=np.int64)
    p = np.asarray(p, dtype=np.int8)
    if t0 is None:
        t0 = sync_absolute(t, p, cfg.rate)
    return _window_bits(t, p, t0, cfg.rate, total_bits)


def decode_relative(t: np.ndarray, p: np.ndarray, cfg: DecoderConfig, total_bits: int,
                    t0: float | None = None) -> np.ndarray:
    """Decode from spacing between consecutive OFF events.

    For OFF events at t_i, t_{i+1} with the ON event t_on between them,
    H = round((t_{i+1}-t_i)*Y) symbols split into N0 = round((t_on-t_i)/T*H)
    zeros followed by H-N0 ones. Before the first OFF event an ON edge implies
    a single leading 0 (or the exact zero run when ``t0`` is given); after the
    last OFF event the final run is extended and the result padded with its
    last bit or truncated to ``total_bits``.
    """
    t = np.asarray(t, dtype=np.int64)
    p = np.asarray(p, dtype=np.int8)
    if len(p) > 1 and np.any(p[1:] == p[:-1]):
        raise ValueError("dedup required: polarities do not alternate")
    rate = cfg.rate
    if not len(t):
        return np.zeros(total_bits, dtype=np.uint8)

    vals: list[np.ndarray] = []
    counts: list[np.ndarray] = []

    def run(bit, n):
        vals.append(np.array([bit], dtype=np.uint8))
        counts.append(np.array([max(int(n), 0)], dtype=np.int64))

    off = np.flatnonzero(p == 0)
    if not len(off):
        # a lone ON edge
        run(0, _symbols(t[0] - t0, rate) if t0 is not None else 1)
        run(1, total_bits)
        return _fit(np.repeat(np.concatenate(vals), np.concatenate(counts)), total_bits)

    first_off = off[0]
    if first_off == 1:
        run(0, _symbols(t[0] - t0, rate) if t0 is not None else 1)
        run(1, _symbols(t[1] - t[0], rate))
    elif t0 is not None:
        run(1, _symbols(t[0] - t0, rate))

    if len(off) > 1:
        t_a = t[off[:-1]].astype(np.float64)
        t_b = t[off[1:]].astype(np.float64)
        t_on = t[off[:-1] + 1].astype(np.float64)
        period = t_b - t_a
        h = _symbols(period, rate)
        n0 = np.rint((t_on - t_a) / period * h).astype(np.int64)
        n0 = np.clip(n0, 0, h)
        vals.append(np.tile(np.array([0, 1], dtype=np.uint8), len(h)))
        counts.append(np.stack((n0, h - n0), axis=1).ravel())

    last = off[-1]
    if last + 1 < len(t):
        run(0, _symbols(t[last + 1] - t[last], rate))
        run(1, total_bits)
    else:
        run(0, total_bits)
    bits = np.repeat(np.concatenate(vals), np.concatenate(counts))
    return _fit(bits, total_bits)


@dataclass
class ChannelDecode:
    index: int
    bits: np.ndarray
    packets: list[Packet]


def _bits_for(duration: int, rate: float) -> int:
    return int(math.ceil(duration * rate / US_PER_S))


def map_channels(stream: EventStream, boxes: list[ChannelBox], base_rate: float = 588.0,
                 payload_len: int = 2) -> ChannelMap:
    """Assign channel indices to boxes by decoding the calibration packets.

    Each box's centre pixel is decoded with the relative-time decoder at the
    calibration rate; the first valid packet's little-endian payload is the
    channel index. Boxes without a valid packet land in ``unresolved``.
    """
    cfg = DecoderConfig(DecodeMode.RELATIVE, base_rate, payload_len)
    total = _bits_for(stream.duration, base_rate)
    per_pixel = events_by_pixel(stream, [(b.cx, b.cy) for b in boxes])
    entries: dict[int, ChannelEntry] = {}
    unresolved = []
    for box, (t, p) in zip(boxes, per_pixel):
        t, p = dedup(t, p)
        packets, _ = deframe_bits(decode_relative(t, p, cfg, total), payload_len)
        if not packets:
            unresolved.append(box)
            continue
        index = int.from_bytes(packets[0].payload, "little")
        if index in entries:
            raise MappingError(f"ambiguous mapping: channel {index} found in two boxes")
        entries[index] = ChannelEntry(index, box)
    if unresolved:
        log.warning("%d boxes unresolved during channel mapping", len(unresolved))
    return ChannelMap(entries, unresolved)


def decode_all(stream: EventStream, cmap: ChannelMap, layout: ChannelLayout,
               mode: DecodeMode | str = DecodeMode.RELATIVE, payload_len: int = 4,
               total_bits: dict[int, int] | int | None = None) -> dict[int, ChannelDecode]:
    """Decode every mapped channel from its centre-pixel events.

    Channels are independent: events at other pixels never affect a
    channel's output. ``total_bits`` defaults to the recording length at
    the channel's symbol rate.
    """
    mode = DecodeMode(mode)
    indices = sorted(i for i in cmap.entries if 0 <= i < layout.n_channels)
    per_pixel = events_by_pixel(stream, [cmap[i].center for i in indices])
    out = {}
    for i, (t, p) in zip(indices, per_pixel):
        rate = layout.rate(i)
        cfg = DecoderConfig(mode, rate, payload_len)
        if isinstance(total_bits, dict):
            nbits = total_bits[i]
        elif total_bits is not None:
            nbits = total_bits
        else:
            nbits = _bits_for(stream.duration, rate)
        t, p = dedup(t, p)
        if mode is DecodeMode.ABSOLUTE:
            bits = decode_absolute(t, p, cfg, nbits)
        else:
            bits = decode_relative(t, p, cfg, nbits)
        packets, _ = deframe_bits(bits, payload_len)
        out[i] = ChannelDecode(i, bits, packets)
    return out
