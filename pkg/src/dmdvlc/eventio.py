"""On-disk formats: event files (text and packed binary), channel maps, results CSV."""
from __future__ import annotations

import csv
import io
import os
import tempfile
import warnings
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import EventStream
from .receiver import ChannelBox, ChannelEntry, ChannelMap

TEXT_MAGIC = "# selene-events v1"
BIN_MAGIC = b"SELB"
_BIN_HEADER = np.dtype([("w", "<u2"), ("h", "<u2"), ("duration", "<i8")])
_BIN_RECORD = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])

CSV_HEADER = ("variable", "value", "mode", "N", "fc_hz", "fp_hz", "ber", "valid_frac",
              "undef_channels", "bps", "events", "dropped")


class FormatError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to a temporary file beside ``path`` and rename it over."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def format_events(stream: EventStream) -> bytes:
    """Text event file; the header also records the recording length."""
    head = (f"{TEXT_MAGIC} width={stream.width} height={stream.height} "
            f"duration={stream.duration}\n")
    rows = zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist())
    return (head + "".join(map("%d %d %d %d\n".__mod__, rows))).encode()


def _parse_header(line: str) -> tuple[int, int, int | None]:
    parts = line.split()
    if " ".join(parts[:3]) != TEXT_MAGIC or len(parts) not in (5, 6):
        raise FormatError(f"bad event file header: {line!r}")
    kv = dict(p.split("=", 1) for p in parts[3:] if "=" in p)
    if len(kv) != len(parts) - 3 or not set(kv) <= {"width", "height", "duration"}:
        raise FormatError(f"bad event file header: {line!r}")
    try:
        dur = int(kv["duration"]) if "duration" in kv else None
        return int(kv["width"]), int(kv["height"]), dur
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad event file header: {line!r}") from exc


def parse_events(data: bytes) -> EventStream:
    if data.startswith(BIN_MAGIC):
        return _parse_binary(data)
    nl = data.find(b"\n")
    head = data[: nl if nl >= 0 else len(data)].decode("ascii", errors="replace")
    width, height, duration = _parse_header(head)
    body = data[nl + 1:] if nl >= 0 else b""
    n_lines = body.count(b"\n") + (1 if body and not body.endswith(b"\n") else 0)
    with warnings.catch_warnings():
        # fromstring warns and stops early on a malformed token; the count check catches it
        warnings.simplefilter("ignore", DeprecationWarning)
        vals = np.fromstring(body, dtype=np.int64, sep=" ") if n_lines else np.zeros(0, np.int64)
    if len(vals) != 4 * n_lines:
        bad = next((i for i, ln in enumerate(body.split(b"\n"), 2)
                    if len(ln.split()) != 4 or not all(f.lstrip(b"-").isdigit() for f in ln.split())),
                   None)
        where = f" (line {bad})" if bad else ""
        raise FormatError(f"event records must be 4 integers per line{where}")
    cols = vals.reshape(-1, 4)
    try:
        return EventStream(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], width, height, duration)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def format_events_binary(stream: EventStream) -> bytes:
    head = np.array([(stream.width, stream.height, stream.duration)], dtype=_BIN_HEADER)
    rec = np.empty(len(stream), dtype=_BIN_RECORD)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    return BIN_MAGIC + head.tobytes() + rec.tobytes()


def _parse_binary(data: bytes) -> EventStream:
    off = len(BIN_MAGIC) + _BIN_HEADER.itemsize
    if len(data) < off or (len(data) - off) % _BIN_RECORD.itemsize:
        raise FormatError("truncated binary event file")
    head = np.frombuffer(data, dtype=_BIN_HEADER, count=1, offset=len(BIN_MAGIC))[0]
    rec = np.frombuffer(data, dtype=_BIN_RECORD, offset=off)
    try:
        return EventStream(rec["t"], rec["x"], rec["y"], rec["p"], int(head["w"]), int(head["h"]),
                           int(head["duration"]))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_events(path: str | os.PathLike, stream: EventStream, binary: bool | None = None) -> None:
    """Write an event file; ``binary=None`` picks the packed format for ``.selb`` paths."""
    if binary is None:
        binary = str(path).endswith(".selb")
    atomic_write(path, format_events_binary(stream) if binary else format_events(stream))


def read_events(path: str | os.PathLike) -> EventStream:
    """Read a text or binary event file (detected from its first bytes)."""
    return parse_events(Path(path).read_bytes())


def format_map(cmap: ChannelMap) -> str:
    lines = []
    for i in sorted(cmap.entries):
        b = cmap[i].box
        lines.append(f"{i} {b.x0} {b.y0} {b.x1} {b.y1} {b.cx} {b.cy}\n")
    return "".join(lines)


def parse_map(text: str) -> ChannelMap:
    entries = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise FormatError(f"map line {n}: expected 7 fields, got {len(parts)}")
        try:
            i, x0, y0, x1, y1, cx, cy = (int(v) for v in parts)
        except ValueError as exc:
            raise FormatError(f"map line {n}: {exc}") from exc
        if i in entries:
            raise FormatError(f"map line {n}: channel {i} listed twice")
        entries[i] = ChannelEntry(i, ChannelBox(x0, y0, x1, y1, cx, cy))
    try:
        return ChannelMap(entries)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_map(path: str | os.PathLike, cmap: ChannelMap) -> None:
    atomic_write(path, format_map(cmap).encode())


def read_map(path: str | os.PathLike) -> ChannelMap:
    return parse_map(Path(path).read_text())


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([_cell(row.get(k)) for k in CSV_HEADER])
    return buf.getvalue()
