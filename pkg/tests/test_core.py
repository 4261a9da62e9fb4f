import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dmdvlc.core import (ETX, STX, ChannelLayout, Event, EventStream, Packet, Polarity,
                         RateClass, build_layout, bytes_to_bits, classify_rates, data_rate,
                         deframe_bits, frame_packet, single_rate)


def bitstr(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def naive_deframe(bits: str, payload_len: int = 4) -> list[str]:
    """String-scanning reference for deframe_bits."""
    out, i, n = [], 0, 8 * (payload_len + 2)
    while i + n <= len(bits):
        if bits[i:i + 8] == "01010101" and bits[i + n - 8:i + n] == "00001111":
            out.append(bits[i + 8:i + n - 8])
            i += n
        else:
            i += 1
    return out


# framing

def test_frame_good():
    assert bitstr(frame_packet(b"good")) == (
        "01010101" "01100111" "01101111" "01101111" "01100100" "00001111")


@pytest.mark.parametrize("payload, expect", [
    (b"\x00", "01010101" "00000000" "00001111"),
    (b"\xff\x00", "01010101" "11111111" "00000000" "00001111"),
])
def test_frame_small_payloads(payload, expect):
    assert bitstr(frame_packet(payload)) == expect


def test_frame_empty_payload_rejected():
    with pytest.raises(ValueError, match="nothing to transmit"):
        frame_packet(b"")


def test_markers():
    assert STX == 0b01010101 and ETX == 0b00001111
    with pytest.raises(ValueError):
        Packet(b"x", stx=0)
    with pytest.raises(ValueError):
        Packet(b"")


def test_deframe_inverse():
    packets, residual = deframe_bits(frame_packet(b"good"))
    assert [p.payload for p in packets] == [b"good"] and residual == 0


def test_deframe_all_byte_prefixes():
    # the naive scanner recovers "good" after every one of the 256 prefixes
    frame = frame_packet(b"good")
    recovered = 0
    for k in range(256):
        bits = np.concatenate((bytes_to_bits(bytes([k])), frame))
        got = [bitstr(bytes_to_bits(p.payload)) for p in deframe_bits(bits)[0]]
        assert got == naive_deframe(bitstr(bits))
        recovered += got == [bitstr(frame[8:40])]
    assert recovered == 256


def test_deframe_bad_etx():
    bits = frame_packet(b"good").copy()
    bits[-1] ^= 1
    assert deframe_bits(bits)[0] == []


def test_deframe_residual_and_short():
    bits = np.concatenate((frame_packet(b"good"), [1, 0, 1]))
    assert deframe_bits(bits)[1] == 3
    assert deframe_bits([0, 1, 0]) == ([], 3)


@given(st.binary(min_size=1, max_size=64))
def test_frame_roundtrip_property(payload):
    packets, _ = deframe_bits(frame_packet(payload), payload_len=len(payload))
    assert [p.payload for p in packets] == [payload]


@given(st.lists(st.integers(0, 1), max_size=300), st.integers(1, 5))
def test_deframe_matches_naive_scanner(bits, plen):
    got = [bitstr(bytes_to_bits(p.payload)) for p in deframe_bits(bits, plen)[0]]
    assert got == naive_deframe(bitstr(bits), plen)


# events

def test_event_stream_validation():
    with pytest.raises(ValueError, match="sorted"):
        EventStream([5, 3], [0, 0], [0, 0], [1, 0], 4, 4)
    with pytest.raises(ValueError, match="bounds"):
        EventStream([1], [4], [0], [1], 4, 4)
    with pytest.raises(ValueError, match="polarity"):
        EventStream([1], [0], [0], [2], 4, 4)
    s = EventStream.from_events([Event(3, 1, 2, Polarity.ON), Event(7, 0, 0, Polarity.OFF)], 4, 4)
    assert list(s) == [Event(3, 1, 2, Polarity.ON), Event(7, 0, 0, Polarity.OFF)]
    assert s.duration == 8
    t, p = s.at_pixel(1, 2)
    assert t.tolist() == [3] and p.tolist() == [1]


# layout

def test_build_layout_full_grid():
    lay = build_layout(912, 1140, 8, 1, 57, 35)
    assert lay.n_channels == 1995 and lay.pitch == 16
    assert lay.n_central == 0


def test_build_layout_single_channel():
    assert build_layout(16, 16, 8, 1, 1, 1).n_channels == 1


def test_build_layout_oversize_names_dimension():
    with pytest.raises(ValueError, match="grid_cols 58 .* 928 exceeds mirror_cols 912"):
        build_layout(912, 1140, 8, 1, 58, 35)
    with pytest.raises(ValueError, match="grid_rows"):
        build_layout(912, 100, 8, 1, 57, 35)


def test_layout_rates_invariant():
    with pytest.raises(ValueError):
        ChannelLayout(16, 16, 8, 1, 1, 1, (RateClass.PERIPHERAL,), 100.0, 200.0)


def test_channel_coordinates_centered():
    lay = build_layout(912, 1140, 8, 1, 57, 35)
    centre = lay.channel(17 * 57 + 28)
    assert (centre.hx, centre.hy) == (0, 0)
    corner = lay.channel(0)
    assert (corner.cx, corner.cy) == (-28.0, -17.0)
    even = build_layout(64, 64, 8, 1, 2, 2)
    assert {(c.hx, c.hy) for c in even.channels()} == {(-1, -1), (1, -1), (-1, 1), (1, 1)}


def test_channel_ids_bijective():
    lay = build_layout(912, 1140, 8, 1, 57, 35)
    coords = {(c.hx, c.hy) for c in lay.channels()}
    assert len(coords) == lay.n_channels


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 8), st.integers(0, 3))
def test_blocks_inside_mirror_array(cols, rows, m, g):
    pitch = m * (1 + g)
    lay = build_layout(cols * pitch, rows * pitch + 3, m, g, cols, rows)
    for i in range(lay.n_channels):
        c0, r0, c1, r1 = lay.block_extent(i)
        assert 0 <= c0 < c1 <= lay.mirror_cols and 0 <= r0 < r1 <= lay.mirror_rows


# rate partition

def lattice_count(cols: int, rows: int, d: float) -> int:
    """Brute-force count of grid points within distance d (closed disc) of the grid centre."""
    n = 0
    for i in range(cols):
        for j in range(rows):
            dx = i - (cols - 1) / 2
            dy = j - (rows - 1) / 2
            n += d > 0 and dx * dx + dy * dy <= d * d
    return n


def test_classify_full_grid_709():
    lay = classify_rates(build_layout(912, 1140, 8, 1, 57, 35), 15, 1000, 500)
    assert (lay.n_central, lay.n_peripheral) == (709, 1286)
    assert lattice_count(57, 35, 15) == 709


def test_classify_extremes():
    base = build_layout(912, 1140, 8, 1, 57, 35)
    assert classify_rates(base, 0, 1000, 500).n_central == 0
    assert classify_rates(base, 100, 1000, 500).n_central == 1995


def test_classify_rejects_bad_rates():
    base = build_layout(16, 16, 8, 1, 1, 1)
    with pytest.raises(ValueError):
        classify_rates(base, 1, 500, 1000)
    with pytest.raises(ValueError):
        classify_rates(base, -1, 1000, 500)


@given(st.integers(1, 15), st.integers(1, 15), st.floats(0, 12))
def test_classify_matches_lattice_and_monotone(cols, rows, d):
    base = build_layout(cols * 16, rows * 16, 8, 1, cols, rows)
    lay = classify_rates(base, d, 2.0, 1.0)
    assert lay.n_central + lay.n_peripheral == lay.n_channels
    assert lay.n_central == lattice_count(cols, rows, d)
    assert classify_rates(base, d + 0.5, 2.0, 1.0).n_central >= lay.n_central


# data rate

def test_data_rate_examples():
    assert data_rate(build_layout(16, 16, 8, 1, 1, 1, rate=1000)) == 1000
    full = build_layout(912, 1140, 8, 1, 57, 35, rate=1000)
    assert data_rate(full) == 1_995_000
    dual = classify_rates(full, 15, 1191, 595.5)
    assert data_rate(dual) == 1352 * 1191


def test_dual_rate_threshold():
    full = build_layout(912, 1140, 8, 1, 57, 35)
    f_c = math.ceil(1.61e6 / 1352)
    assert f_c == 1191
    assert data_rate(classify_rates(full, 15, f_c, f_c / 2)) >= 1_610_000
    assert data_rate(classify_rates(full, 15, f_c - 1, (f_c - 1) / 2)) < 1_610_000


def test_data_rate_alphabet():
    lay = build_layout(16, 16, 8, 1, 1, 1, rate=1000)
    assert data_rate(lay, 4) == 2000
    with pytest.raises(ValueError):
        data_rate(lay, 1)
    assert single_rate(1995, 1000, 2) == 1_995_000


@given(st.integers(1, 40), st.integers(1, 5000), st.floats(0, 30))
def test_data_rate_linear_and_reduces(n, f, d):
    lay = build_layout(n * 16, 16, 8, 1, n, 1, rate=f)
    assert data_rate(lay) == n * f
    same = classify_rates(lay, d, f, f)
    assert data_rate(same) == data_rate(lay)
