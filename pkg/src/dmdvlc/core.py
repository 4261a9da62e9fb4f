"""Shared domain types and the pure arithmetic on them.

Events, packets and the transmitter's channel geometry live here, together
with packet framing, data-rate arithmetic and the dual refresh-rate
partition.
"""
from __future__ import annotations

import enum
import math
from fractions import Fraction
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

STX = 0b01010101
ETX = 0b00001111
DEFAULT_PAYLOAD_LEN = 4


class Polarity(enum.IntEnum):
    OFF = 0
    ON = 1


class RateClass(enum.IntEnum):
    PERIPHERAL = 0
    CENTRAL = 1


class Event(NamedTuple):
    t: int
    x: int
    y: int
    polarity: Polarity


_EMPTY_I64 = np.zeros(0, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class EventStream:
    """Columnar event stream in readout order.

    ``t`` is in integer microseconds, ``p`` holds 1 for ON and 0 for OFF.
    ``duration`` is the recording length in microseconds; it defaults to one
    past the last timestamp.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    duration: int | None = None

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        x = np.ascontiguousarray(self.x, dtype=np.int32)
        y = np.ascontiguousarray(self.y, dtype=np.int32)
        p = np.ascontiguousarray(self.p, dtype=np.int8)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValueError("event columns differ in length")
        if len(t):
            if t[0] < 0:
                raise ValueError("negative timestamp")
            if np.any(np.diff(t) < 0):
                raise ValueError("events are not sorted by timestamp")
            if x.min() < 0 or x.max() >= self.width or y.min() < 0 or y.max() >= self.height:
                raise ValueError("event outside sensor bounds")
            if np.any((p != 0) & (p != 1)):
                raise ValueError("polarity must be 0 or 1")
        for a in (t, x, y, p):
            a.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        if self.duration is None:
            object.__setattr__(self, "duration", int(t[-1]) + 1 if len(t) else 0)

    @classmethod
    def empty(cls, width: int, height: int, duration: int = 0) -> "EventStream":
        return cls(_EMPTY_I64, _EMPTY_I64, _EMPTY_I64, _EMPTY_I64, width, height, duration)

    @classmethod
    def from_events(cls, events: Sequence[Event], width: int, height: int,
                    duration: int | None = None) -> "EventStream":
        if not events:
            return cls.empty(width, height, duration or 0)
        t, x, y, p = (np.asarray(col) for col in zip(*events))
        return cls(t, x, y, p, width, height, duration)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(t, x, y, Polarity(p))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.duration == other.duration
            and all(np.array_equal(a, b) for a, b in
                    ((self.t, other.t), (self.x, other.x), (self.y, other.y), (self.p, other.p)))
        )

    def at_pixel(self, x: int, y: int) -> tuple[np.ndarray, np.ndarray]:
        """Timestamps and polarities of the events at one pixel."""
        m = (self.x == x) & (self.y == y)
        return self.t[m], self.p[m]


@dataclass(frozen=True)
class Packet:
    payload: bytes
    stx: int = field(default=STX, repr=False)
    etx: int = field(default=ETX, repr=False)

    def __post_init__(self):
        if self.stx != STX or self.etx != ETX:
            raise ValueError("STX/ETX must be the fixed marker bytes")
        if len(self.payload) < 1:
            raise ValueError("packet payload must be non-empty")


def bytes_to_bits(data: bytes) -> np.ndarray:
    """MSB-first bit expansion."""
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def frame_packet(payload: bytes) -> np.ndarray:
    """Bits of STX, payload (MSB first), ETX as a uint8 array."""
    payload = bytes(payload)
    if not payload:
        raise ValueError("empty payload: nothing to transmit")
    return bytes_to_bits(bytes([STX]) + payload + bytes([ETX]))


def deframe_bits(bits, payload_len: int = DEFAULT_PAYLOAD_LEN) -> tuple[list[Packet], int]:
    """Recover fixed-length packets from a bit sequence.

    Scans for STX; a candidate is accepted only if the byte following the
    payload is exactly ETX. On rejection scanning resumes one bit after the
    candidate STX, on acceptance right after the ETX.

    Returns the packets in order and the number of trailing bits not consumed
    by any packet.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits)
    frame_len = 8 * (payload_len + 2)
    if n < frame_len:
        return [], n
    windows = np.lib.stride_tricks.sliding_window_view(bits, 8)
    weights = 1 << np.arange(7, -1, -1, dtype=np.int64)
    byte_at = windows @ weights
    candidates = np.flatnonzero(byte_at[: n - frame_len + 1] == STX)
    packets: list[Packet] = []
    end = 0
    for start in candidates.tolist():
        if start < end:
            continue
        etx_at = start + frame_len - 8
        if byte_at[etx_at] != ETX:
            continue
        payload = np.packbits(bits[start + 8: etx_at]).tobytes()
        packets.append(Packet(payload))
        end = start + frame_len
    return packets, n - end


@dataclass(frozen=True)
class ChannelId:
    """Channel index plus grid coordinates in half-channel units.

    ``hx``/``hy`` are twice the offset from the geometric grid centre, so
    even-sized grids stay integral.
    """

    index: int
    hx: int
    hy: int

    @property
    def cx(self) -> float:
        return self.hx / 2

    @property
    def cy(self) -> float:
        return self.hy / 2


@dataclass(frozen=True)
class ChannelLayout:
    mirror_cols: int
    mirror_rows: int
    block_size: int
    guard: int
    grid_cols: int
    grid_rows: int
    rate_class: tuple[RateClass, ...]
    f_c: float
    f_p: float
    d: float = 0.0

    def __post_init__(self):
        if self.block_size < 1 or self.guard < 0:
            raise ValueError("block size must be >= 1 and guard >= 0")
        if self.grid_cols < 1 or self.grid_rows < 1:
            raise ValueError("grid must have at least one channel")
        pitch = self.pitch
        if self.grid_cols * pitch > self.mirror_cols:
            raise ValueError(
                f"grid_cols {self.grid_cols} x pitch {pitch} = {self.grid_cols * pitch} "
                f"exceeds mirror_cols {self.mirror_cols}")
        if self.grid_rows * pitch > self.mirror_rows:
            raise ValueError(
                f"grid_rows {self.grid_rows} x pitch {pitch} = {self.grid_rows * pitch} "
                f"exceeds mirror_rows {self.mirror_rows}")
        if not self.f_c >= self.f_p > 0:
            raise ValueError("rates must satisfy f_c >= f_p > 0")
        if len(self.rate_class) != self.n_channels:
            raise ValueError("one rate class per channel required")

    @property
    def pitch(self) -> int:
        """Mirrors from one channel's origin to the next."""
        return self.block_size * (1 + self.guard)

    @property
    def n_channels(self) -> int:
        return self.grid_cols * self.grid_rows

    @property
    def n_central(self) -> int:
        return sum(1 for c in self.rate_class if c is RateClass.CENTRAL)

    @property
    def n_peripheral(self) -> int:
        return self.n_channels - self.n_central

    def channel(self, index: int) -> ChannelId:
        if not 0 <= index < self.n_channels:
            raise IndexError(f"channel {index} out of range")
        iy, ix = divmod(index, self.grid_cols)
        return ChannelId(index, 2 * ix - (self.grid_cols - 1), 2 * iy - (self.grid_rows - 1))

    def channels(self) -> list[ChannelId]:
        return [self.channel(i) for i in range(self.n_channels)]

    def grid_position(self, index: int) -> tuple[int, int]:
        iy, ix = divmod(index, self.grid_cols)
        return ix, iy

    def rate(self, index: int) -> float:
        return self.f_c if self.rate_class[index] is RateClass.CENTRAL else self.f_p

    def rates(self) -> np.ndarray:
        cls = np.array(self.rate_class, dtype=np.int8)
        return np.where(cls == RateClass.CENTRAL, float(self.f_c), float(self.f_p))

    def block_extent(self, index: int) -> tuple[int, int, int, int]:
        """Mirror extent (col0, row0, col1, row1), end-exclusive."""
        ix, iy = self.grid_position(index)
        c0, r0 = ix * self.pitch, iy * self.pitch
        return c0, r0, c0 + self.block_size, r0 + self.block_size

    def with_rates(self, f_c: float, f_p: float) -> "ChannelLayout":
        return replace(self, f_c=f_c, f_p=f_p)


def build_layout(mirror_cols: int, mirror_rows: int, block_size: int, guard: int,
                 grid_cols: int, grid_rows: int, rate: float = 1000.0) -> ChannelLayout:
    """Single-rate layout, every channel PERIPHERAL at ``rate``."""
    n = grid_cols * grid_rows
    return ChannelLayout(mirror_cols, mirror_rows, block_size, guard, grid_cols, grid_rows,
                         (RateClass.PERIPHERAL,) * max(n, 0), rate, rate, 0.0)


def classify_rates(layout: ChannelLayout, d: float, f_c: float, f_p: float) -> ChannelLayout:
    """Mark channels within grid radius ``d`` of the centre as CENTRAL.

    The disc is closed (R <= d) and a zero radius selects nothing.
    """
    if d < 0:
        raise ValueError("d must be >= 0")
    if not f_c >= f_p > 0:
        raise ValueError("rates must satisfy f_c >= f_p > 0")
    lim = (2 * d) ** 2
    classes = []
    for ch in layout.channels():
        central = d > 0 and ch.hx * ch.hx + ch.hy * ch.hy <= lim
        classes.append(RateClass.CENTRAL if central else RateClass.PERIPHERAL)
    return replace(layout, rate_class=tuple(classes), f_c=f_c, f_p=f_p, d=d)


def _log2_symbols(symbols: int) -> float | int:
    if symbols < 2:
        raise ValueError("need at least 2 symbols")
    if symbols & (symbols - 1) == 0:
        return symbols.bit_length() - 1
    return math.log2(symbols)


def data_rate(layout: ChannelLayout, symbols: int = 2) -> float | int:
    """Aggregate bits per second, log2(X) * (N_c*f_c + N_p*f_p).

    Rates are combined in exact rational arithmetic; an integral result with
    a power-of-two alphabet comes back as an int.
    """
    bits = _log2_symbols(symbols)
    n_c = layout.n_central
    n_p = layout.n_channels - n_c
    total = n_c * Fraction(layout.f_c) + n_p * Fraction(layout.f_p)
    if isinstance(bits, int) and total.denominator == 1:
        return bits * total.numerator
    return bits * float(total)


def single_rate(n_channels: int, rate: float, symbols: int = 2) -> float | int:
    """N * Y * log2(X) for a uniform layout."""
    return n_channels * rate * _log2_symbols(symbols)
