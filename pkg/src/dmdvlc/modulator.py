"""OOK modulation of per-channel bit streams into mirror-block transitions."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np

from .core import ChannelLayout, frame_packet

US_PER_S = 1_000_000


@dataclass(frozen=True, eq=False)
class ChannelBitstream:
    channel: int
    bits: np.ndarray
    rate: float

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or len(bits) == 0:
            raise ValueError("bitstream must be a non-empty 1-D sequence")
        if np.any(bits > 1):
            raise ValueError("bits must be 0 or 1")
        if self.rate <= 0:
            raise ValueError("symbol rate must be positive")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)


@dataclass(frozen=True, eq=False)
class FrameSchedule:
    """Time-ordered mirror-state transitions.

    Columns ``t`` (microseconds), ``channel`` and ``state`` (1 ON, 0 OFF) are
    sorted by time with channel index as tie-breaker. Every channel is OFF
    before t = 0.
    """

    t: np.ndarray
    channel: np.ndarray
    state: np.ndarray
    duration: int
    n_channels: int

    def __post_init__(self):
        for name, dtype in (("t", np.int64), ("channel", np.int32), ("state", np.int8)):
            a = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameSchedule):
            return NotImplemented
        return (self.duration == other.duration and self.n_channels == other.n_channels
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.channel, other.channel)
                and np.array_equal(self.state, other.state))

    @classmethod
    def empty(cls, n_channels: int = 0, duration: int = 0) -> "FrameSchedule":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, duration, n_channels)

    def transitions(self, channel: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.channel == channel
        return self.t[m], self.state[m]

    def split(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Per-channel (times, states) for every channel with transitions."""
        if not len(self.t):
            return {}
        order = np.argsort(self.channel, kind="stable")
        ch = self.channel[order]
        cuts = np.flatnonzero(np.diff(ch)) + 1
        out = {}
        for idx in np.split(order, cuts):
            c = int(self.channel[idx[0]])
            out[c] = (self.t[idx], self.state[idx])
        return out

    def state_at(self, channel: int, t: float) -> int:
        times, states = self.transitions(channel)
        k = np.searchsorted(times, t, side="right")
        return int(states[k - 1]) if k else 0

    def restrict(self, channels) -> "FrameSchedule":
        m = np.isin(self.channel, np.asarray(list(channels)))
        return FrameSchedule(self.t[m], self.channel[m], self.state[m], self.duration, self.n_channels)


def symbol_boundaries(n: int, rate: float) -> np.ndarray:
    """Start times of symbols 0..n in integer microseconds.

    Computed exactly as round(k * 1e6 / rate) (halves round up), so long
    streams at non-integral periods do not drift.
    """
    fr = Fraction(rate).limit_denominator(1_000_000) if not float(rate).is_integer() else Fraction(int(rate))
    num, den = fr.numerator, fr.denominator
    k = np.arange(n + 1, dtype=np.int64)
    return (2 * k * US_PER_S * den + num) // (2 * num)


def _edges(bits: np.ndarray, rate: float) -> tuple[np.ndarray, np.ndarray, int]:
    prev = np.concatenate(([0], bits[:-1]))
    k = np.flatnonzero(bits != prev)
    bounds = symbol_boundaries(len(bits), rate)
    return bounds[k], bits[k], int(bounds[-1])


def _assemble(parts: list[tuple[int, np.ndarray, np.ndarray]], durations: list[int],
              n_channels: int) -> FrameSchedule:
    if not parts:
        return FrameSchedule.empty(n_channels, max(durations, default=0))
    t = np.concatenate([p[1] for p in parts])
    st = np.concatenate([p[2] for p in parts])
    ch = np.concatenate([np.full(len(p[1]), p[0], dtype=np.int32) for p in parts])
    order = np.lexsort((ch, t))
    return FrameSchedule(t[order], ch[order], st[order], max(durations, default=0), n_channels)


def modulate(layout: ChannelLayout, streams: Mapping[int, ChannelBitstream]) -> FrameSchedule:
    """OOK schedule: a transition wherever a bit differs from its predecessor.

    Bit k of a channel at rate Y occupies [k/Y, (k+1)/Y); the state before
    t = 0 is OFF, so a leading 1 produces an ON edge at t = 0.
    """
    n = layout.n_channels
    keys = set(streams)
    missing = sorted(set(range(n)) - keys)
    extra = sorted(keys - set(range(n)))
    if missing or extra:
        raise ValueError(f"stream/channel mismatch: missing={missing[:10]} extra={extra[:10]}")
    rates = layout.rates()
    parts, durations = [], []
    for c in range(n):
        s = streams[c]
        if s.channel != c:
            raise ValueError(f"stream keyed {c} carries channel id {s.channel}")
        if float(s.rate) != float(rates[c]):
            raise ValueError(f"channel {c}: stream rate {s.rate} != layout rate {rates[c]}")
        t, st, dur = _edges(s.bits, s.rate)
        durations.append(dur)
        if len(t):
            parts.append((c, t, st))
    return _assemble(parts, durations, n)


def index_payload(index: int) -> bytes:
    """Calibration payload: the channel index as 2 little-endian bytes."""
    if not 0 <= index < 1 << 16:
        raise ValueError(f"channel index {index} does not fit 2 bytes")
    return int(index).to_bytes(2, "little")


def mapping_schedule(layout: ChannelLayout, base_rate: float = 588.0,
                     duration: float = 1.0) -> FrameSchedule:
    """Calibration traffic: every channel repeats a packet carrying its index.

    All channels run at ``base_rate`` regardless of their rate class; the
    repeated packet stream is cut at ``duration`` seconds.
    """
    if base_rate <= 0:
        raise ValueError("base_rate must be positive")
    n = layout.n_channels
    nbits = int(np.floor(duration * base_rate + 1e-9))
    if nbits <= 0:
        return FrameSchedule.empty(n)
    parts, durations = [], []
    for c in range(n):
        frame = frame_packet(index_payload(c))
        reps = -(-nbits // len(frame))
        bits = np.tile(frame, reps)[:nbits]
        t, st, dur = _edges(bits, base_rate)
        durations.append(dur)
        if len(t):
            parts.append((c, t, st))
    return _assemble(parts, durations, n)


def fill_payloads(layout: ChannelLayout, payload: bytes, packets_per_channel: int,
                  idle_symbols: int = 0, stagger_seed: int | None = None) -> dict[int, ChannelBitstream]:
    """Experiment traffic: the same framed payload repeated on every channel.

    Parameters
    ----------
    layout : ChannelLayout
        Supplies the channel count and per-channel symbol rate.
    payload : bytes
        Packet payload, framed with STX/ETX.
    packets_per_channel : int
        Complete packets carried by each channel.
    idle_symbols : int
        Zero symbols appended after every packet.
    stagger_seed : int, optional
        When given, each channel transmits a window of the periodic packet
        train starting at a random phase 1..L-1 bits into the frame, so
        channels no longer switch in lockstep. Every channel still carries
        ``packets_per_channel`` complete packets, bracketed by a partial
        frame on each side, and all streams have equal length.
    """
    if packets_per_channel < 1:
        raise ValueError("packets_per_channel must be >= 1")
    frame = frame_packet(payload)
    if idle_symbols:
        frame = np.concatenate((frame, np.zeros(idle_symbols, dtype=np.uint8)))
    rates = layout.rates()
    n = layout.n_channels
    train = np.tile(frame, packets_per_channel)
    if stagger_seed is None:
        return {c: ChannelBitstream(c, train, float(rates[c])) for c in range(n)}
    phases = np.random.default_rng(stagger_seed).integers(1, len(frame), size=n)
    out = {}
    for c in range(n):
        k = int(phases[c])
        bits = np.concatenate((frame[k:], train, frame[:k]))
        out[c] = ChannelBitstream(c, bits, float(rates[c]))
    return out
