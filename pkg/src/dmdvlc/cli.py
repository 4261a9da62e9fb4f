"""Command-line entry points.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 detection failure,
5 mapping ambiguity.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, RunConfig, load_config
from .core import data_rate
from .evaluation import SWEEP_VARIABLES, run_trial, sweep
from .eventio import (FormatError, atomic_write, format_csv, read_events, read_map,
                      write_events, write_map)
from .modulator import FrameSchedule, fill_payloads, mapping_schedule, modulate
from .optics import ProjectionError, project_channels
from .receiver import (DetectionError, MappingError, build_heatmap, decode_all,
                       extract_channel_boxes, map_channels)
from .sensor import simulate

log = logging.getLogger("dmdvlc")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DETECT, EXIT_AMBIGUOUS = 0, 2, 3, 4, 5


def cmd_layout(cfg: RunConfig, args) -> int:
    lay = cfg.layout()
    print(f"N={lay.n_channels} central={lay.n_central} peripheral={lay.n_peripheral}")
    single = data_rate(lay.with_rates(lay.f_c, lay.f_c))
    print(f"f_c={lay.f_c:g} f_p={lay.f_p:g} d={lay.d:g}")
    print(f"single_rate_bps={single} dual_rate_bps={data_rate(lay)}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    lay = cfg.layout()
    footprints = project_channels(lay, cfg.projection(), cfg.optics_spec.footprint_margin)
    t = cfg.traffic
    if args.calibration:
        sched = mapping_schedule(lay, t.calibration_rate, t.calibration_duration)
    elif t.packets_per_channel == 0:
        sched = FrameSchedule.empty(lay.n_channels)
    else:
        streams = fill_payloads(lay, cfg.payload(), t.packets_per_channel, t.idle_symbols,
                                stagger_seed=cfg.seed if t.stagger else None)
        sched = modulate(lay, streams)
    stream, stats = simulate(sched, footprints, cfg.optics(), cfg.sensor.with_seed(cfg.seed))
    write_events(args.out, stream, binary=args.binary or None)
    print(json.dumps({"events": len(stream), **stats.as_dict()}, default=float), file=sys.stderr)
    return EXIT_OK


def cmd_map(cfg: RunConfig, args) -> int:
    stream = read_events(args.events)
    dc = cfg.decode
    boxes = extract_channel_boxes(build_heatmap(stream), dc.binarize_frac, dc.morph_radius,
                                  dc.connectivity)
    cmap = map_channels(stream, boxes, cfg.traffic.calibration_rate)
    write_map(args.out, cmap)
    print(f"mapped={len(cmap)} boxes={len(boxes)} unresolved={len(cmap.unresolved)}",
          file=sys.stderr)
    return EXIT_OK


def _show(payload: bytes) -> str:
    if all(33 <= b < 127 for b in payload):
        return payload.decode("ascii")
    return "0x" + payload.hex()


def cmd_decode(cfg: RunConfig, args) -> int:
    cmap = read_map(args.map)
    stream = read_events(args.events)
    mode = args.mode or cfg.decode.mode
    lay = cfg.layout()
    decoded = decode_all(stream, cmap, lay, mode, payload_len=len(cfg.payload()))
    lines = []
    for i in sorted(decoded):
        pk = decoded[i].packets
        lines.append(" ".join([str(i), str(len(pk))] + [_show(p.payload) for p in pk]) + "\n")
    atomic_write(args.out, "".join(lines).encode())
    total = sum(len(d.packets) for d in decoded.values())
    print(f"channels={len(decoded)} packets={total} mode={mode}", file=sys.stderr)
    return EXIT_OK


def _row(variable: str, value, res) -> dict:
    row = {"variable": variable, "value": value}
    if res is not None:
        s = res.summary()
        row.update(mode=s["mode"], N=s["N"], fc_hz=s["fc_hz"], fp_hz=s["fp_hz"], ber=s["ber"],
                   valid_frac=s["valid_frac"], undef_channels=s["undef_channels"],
                   bps=s["bps"], events=s["events"], dropped=s["dropped"])
    return row


def cmd_eval(cfg: RunConfig, args) -> int:
    modes = args.modes.split(",") if args.modes else [cfg.decode.mode]
    rows = []
    for mode in modes:
        res = run_trial(cfg.scenario(mode), cfg.seed)
        rows.append(_row("none", "", res))
    atomic_write(args.out, format_csv(rows).encode())
    return EXIT_OK


def _parse_values(text: str) -> list:
    vals = []
    for v in text.split(","):
        v = v.strip()
        if not v:
            continue
        try:
            vals.append(int(v))
        except ValueError:
            try:
                vals.append(float(v))
            except ValueError:
                vals.append(v)
    return vals


def cmd_sweep(cfg: RunConfig, args) -> int:
    if args.variable not in SWEEP_VARIABLES:
        raise ConfigError(f"unknown sweep variable {args.variable!r}")
    values = _parse_values(args.values or "")
    if not values:
        raise ConfigError("empty sweep grid")
    modes = args.modes.split(",") if args.modes else [cfg.decode.mode]
    rows = []
    for mode in modes:
        for pt in sweep(args.variable, values, cfg.scenario(mode), cfg.seed):
            if pt.error:
                log.error("%s=%s: %s", pt.variable, pt.value, pt.error)
            row = _row(pt.variable, pt.value, pt.result)
            row.setdefault("mode", mode)
            rows.append(row)
    atomic_write(args.out, format_csv(rows).encode())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmdvlc", description="DMD-to-event-camera link simulator")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("-c", "--config", help="YAML run config (defaults if omitted)")
        p.set_defaults(func=fn)
        return p

    add("layout", cmd_layout, "print channel counts and data rates")
    p = add("simulate", cmd_simulate, "simulate traffic into an event file")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--calibration", action="store_true", help="send channel-index packets")
    p.add_argument("--binary", action="store_true", help="write the packed binary format")
    p = add("map", cmd_map, "map channels from a calibration recording")
    p.add_argument("events")
    p.add_argument("-o", "--out", required=True)
    p = add("decode", cmd_decode, "decode every mapped channel")
    p.add_argument("events")
    p.add_argument("map")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--mode", choices=("absolute", "relative"))
    p = add("eval", cmd_eval, "run one end-to-end trial, write CSV")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--modes", help="comma-separated decoder modes")
    p = add("sweep", cmd_sweep, "sweep one variable, write CSV")
    p.add_argument("variable", help="|".join(SWEEP_VARIABLES))
    p.add_argument("values", nargs="?", default="", help="comma-separated grid values")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--modes", help="comma-separated decoder modes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except MappingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AMBIGUOUS
    except DetectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DETECT
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ProjectionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
