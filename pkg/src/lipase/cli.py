"""Command-line entry point: ``lipase {simulate,detect,track,evaluate,run}``.

Exit status is 0 on success, 1 on a runtime failure and 2 when an input
(configuration, IQ file, CSV or JSONL) fails validation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, Scenario, load_scenario, replace_config
from .evaluate import NoConfirmedTrackError, score_run
from .iqio import (
    FormatError,
    IqReader,
    IqWriter,
    read_detections,
    read_tracks,
    read_truth,
    write_detections,
    write_tracks,
    write_truth,
)
from .pipeline import apply_faults, detect_slots, make_detector, run_tracker
from .simulate import simulate_scene

log = logging.getLogger("lipase")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
MODES = ("bistatic", "cartesian")


class InputError(Exception):
    """Bad user input that maps to exit status 2."""


def _configure_logging() -> None:
    level = os.environ.get("LIPASE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _scenario(args) -> Scenario:
    s = load_scenario(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "slots", None) is not None:
        if args.slots < 1:
            raise ConfigError("slots", "must be >= 1")
        changes["slots"] = args.slots
    if getattr(args, "doppler_window", None) is not None:
        changes["cfar"] = replace_config(s.cfar, doppler_window=args.doppler_window)
    faults = {}
    if getattr(args, "drop_prob", None) is not None:
        faults["drop_prob"] = args.drop_prob
    if getattr(args, "false_alarm_rate", None) is not None:
        faults["false_alarm_rate"] = args.false_alarm_rate
    if faults:
        changes["faults"] = replace_config(s.faults, **faults)
    if changes:
        s = replace_config(s, **changes)
        s.validate()
    return s


def _workers(args):
    return getattr(args, "threads", None) or os.cpu_count() or 1


# -- subcommands ------------------------------------------------------------------


def simulate(s: Scenario, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = simulate_scene(s)
    r = s.radio
    n = r.slot_samples
    with IqWriter(out_dir / "ref.iq", r.sample_rate, r.carrier_freq, r.ref_array_size, n) as wr, \
            IqWriter(out_dir / "sur.iq", r.sample_rate, r.carrier_freq, r.sur_array_size, n) as ws:
        for m in range(scene.n_slots):
            ref, sur = scene.slot(m)
            wr.write(ref.samples)
            ws.write(sur.samples)
            log.info("simulated slot %d/%d", m + 1, scene.n_slots)
    write_truth(out_dir / "truth.csv", scene.truth)


def _open_iq(s: Scenario, iq_dir: Path):
    ref, sur = IqReader(iq_dir / "ref.iq"), IqReader(iq_dir / "sur.iq")
    r = s.radio
    for reader, ant in ((ref, r.ref_array_size), (sur, r.sur_array_size)):
        h = reader.header
        if h.antennas != ant or h.slot_samples != r.slot_samples or h.sample_rate != r.sample_rate:
            raise FormatError(f"{reader.path}: header does not match the configuration")
    if len(ref) != len(sur):
        raise FormatError("ref.iq and sur.iq hold different slot counts")
    return ref, sur


def detect(s: Scenario, iq_dir: Path, out: Path, workers=None) -> list:
    ref, sur = _open_iq(s, iq_dir)
    dets = detect_slots(make_detector(s, workers), zip(ref, sur))
    dets = apply_faults(s, dets)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_detections(out, dets)
    return dets


def track(s: Scenario, detections: Path, out: Path, modes) -> dict:
    # the scenario slot count keeps trailing empty slots, so tracks coast through them
    dets = read_detections(detections, s.slots)
    trackers = {m: run_tracker(s, dets, m) for m in modes}
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tracks(out, [trackers[m] for m in modes], s.geometry)
    return trackers


def evaluate(s: Scenario, detections: Path, tracks: Path, truth_path: Path, out: Path):
    truth = read_truth(truth_path, s.radio.cit)
    dets = read_detections(detections, len(truth.states))
    if len(dets) != len(truth.states):
        raise FormatError("detections extend past the last truth slot")
    trk = read_tracks(tracks)
    report = score_run(dets, truth, s.geometry, s.radio.wavelength, trk, s.evaluation)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    out.with_name(out.stem + "_slots.csv").write_text(report.per_slot_csv())
    return report


def _modes(arg, s: Scenario):
    if arg is None:
        return (s.tracker.mode,)
    return MODES if arg == "both" else (arg,)


def cmd_simulate(args) -> int:
    s = _scenario(args)
    simulate(s, Path(args.out))
    return EXIT_OK


def cmd_detect(args) -> int:
    s = _scenario(args)
    detect(s, Path(args.iq), Path(args.out), _workers(args))
    return EXIT_OK


def cmd_track(args) -> int:
    s = _scenario(args)
    track(s, Path(args.detections), Path(args.out), _modes(args.mode, s))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    s = _scenario(args)
    report = evaluate(s, Path(args.detections), Path(args.tracks), Path(args.truth), Path(args.out))
    print(report.table(), end="")
    return EXIT_OK


def cmd_run(args) -> int:
    s = _scenario(args)
    out = Path(args.out)
    t0 = time.perf_counter()
    simulate(s, out)
    detect(s, out, out / "detections.csv", _workers(args))
    track(s, out / "detections.csv", out / "tracks.jsonl", _modes(args.mode or "both", s))
    report = evaluate(s, out / "detections.csv", out / "tracks.jsonl", out / "truth.csv",
                      out / "metrics.json")
    print(report.table(), end="")
    print(f"elapsed {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipase", description="Passive bistatic radar simulation, detection and tracking.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, overrides=True):
        sp.add_argument("--config", default="reference",
                        help="scenario YAML path or built-in name (reference, paper)")
        if overrides:
            sp.add_argument("--seed", type=int, help="override the scenario seed")
            sp.add_argument("--slots", type=int, help="override the number of slots")

    def faults(sp):
        sp.add_argument("--threads", type=int, help="FFT worker threads (default: all cores)")
        sp.add_argument("--doppler-window", type=float, help="CFAR Doppler half-window in Hz")
        sp.add_argument("--drop-prob", type=float, help="probability of dropping each detection")
        sp.add_argument("--false-alarm-rate", type=float, help="injected false alarms as a fraction of observations")

    sp = sub.add_parser("simulate", help="write ref.iq, sur.iq and truth.csv")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--threads", type=int, help="accepted for symmetry; simulation is sequential")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("detect", help="detections CSV from an IQ directory")
    common(sp, overrides=False)
    sp.add_argument("--seed", type=int, help="override the seed of the fault injection")
    sp.add_argument("--iq", required=True, help="directory holding ref.iq and sur.iq")
    sp.add_argument("--out", required=True, help="detections CSV path")
    faults(sp)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("track", help="tracks JSONL from a detections CSV")
    common(sp, overrides=False)
    sp.add_argument("--slots", type=int, help="number of slots to step through (default: from the config)")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--mode", choices=MODES + ("both",), help="state model (default: from the config)")
    sp.add_argument("--out", required=True, help="tracks JSONL path")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("evaluate", help="metrics report from detections, tracks and truth")
    common(sp, overrides=False)
    sp.add_argument("--detections", required=True)
    sp.add_argument("--tracks", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--out", required=True, help="metrics JSON path (a per-slot CSV is written beside it)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("run", help="simulate, detect, track in both modes and evaluate")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--mode", choices=MODES + ("both",), help="tracker modes to run (default: both)")
    faults(sp)
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, InputError) as exc:
        print(f"lipase: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"lipase: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoConfirmedTrackError as exc:
        print(f"lipase: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit 1
        log.debug("unhandled error", exc_info=True)
        print(f"lipase: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
