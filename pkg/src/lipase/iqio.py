"""On-disk formats: the IQ container, truth CSV, detections CSV and tracks JSONL.

IQ files are little-endian: a fixed header (magic ``LIPS``, version u16,
sample rate f64, carrier f64, antenna count u16, slot length u32, slot count
u32) followed by complex64 samples, slot-major then antenna-major.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detect import Detection
from .geometry import CartesianState, Observation
from .simulate import ArraySlot, TrajectoryTruth
from .track import Track, TrackRecord, state_to_cartesian

MAGIC = b"LIPS"
VERSION = 1
HEADER = struct.Struct("<4sHddHII")

TRUTH_COLUMNS = ("slot", "x", "y", "vx", "vy", "R", "Rdot_mps", "theta_rad")
DETECTION_COLUMNS = ("slot", "R_m", "Rdot_mps", "theta_rad", "beam", "l", "p", "magnitude")


class FormatError(ValueError):
    """A file does not follow its declared format."""


@dataclass(frozen=True)
class IqHeader:
    sample_rate: float
    carrier_freq: float
    antennas: int
    slot_samples: int
    slots: int
    version: int = VERSION

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.sample_rate, self.carrier_freq,
                           self.antennas, self.slot_samples, self.slots)

    @property
    def payload_bytes(self) -> int:
        return self.slots * self.antennas * self.slot_samples * 8


def read_header(path) -> IqHeader:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, fs, fc, ant, n, slots = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if not (fs > 0 and math.isfinite(fs) and math.isfinite(fc)) or ant < 1 or n < 1:
        raise FormatError(f"{path}: invalid header fields")
    hdr = IqHeader(fs, fc, ant, n, slots, version)
    size = Path(path).stat().st_size
    if size != HEADER.size + hdr.payload_bytes:
        raise FormatError(f"{path}: payload is {size - HEADER.size} bytes, header implies {hdr.payload_bytes}")
    return hdr


class IqWriter:
    """Appends slots to an IQ file; the slot count in the header is fixed up on close."""

    def __init__(self, path, sample_rate: float, carrier_freq: float, antennas: int, slot_samples: int):
        self.path = Path(path)
        self.header = IqHeader(sample_rate, carrier_freq, antennas, slot_samples, 0)
        self._fh = open(self.path, "wb")
        self._fh.write(self.header.pack())
        self.slots = 0

    def write(self, samples: np.ndarray) -> None:
        a = np.asarray(samples)
        if a.shape != (self.header.antennas, self.header.slot_samples):
            raise FormatError(f"slot shape {a.shape} does not match the header")
        self._fh.write(np.ascontiguousarray(a, dtype="<c8").tobytes())
        self.slots += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        h = self.header
        self._fh.write(IqHeader(h.sample_rate, h.carrier_freq, h.antennas, h.slot_samples, self.slots).pack())
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class IqReader:
    """Memory-mapped random access to the slots of an IQ file."""

    def __init__(self, path):
        self.path = Path(path)
        self.header = read_header(path)
        h = self.header
        if h.slots:
            self._data = np.memmap(path, dtype="<c8", mode="r", offset=HEADER.size,
                                   shape=(h.slots, h.antennas, h.slot_samples))
        else:
            self._data = np.zeros((0, h.antennas, h.slot_samples), dtype="<c8")

    def __len__(self) -> int:
        return self.header.slots

    def slot(self, m: int) -> ArraySlot:
        if not 0 <= m < len(self):
            raise IndexError(m)
        return ArraySlot(m, np.asarray(self._data[m], dtype=np.complex128))

    def __iter__(self):
        for m in range(len(self)):
            yield self.slot(m)


# -- truth ------------------------------------------------------------------------


def write_truth(path, truth: TrajectoryTruth) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for m, (s, z) in enumerate(zip(truth.states, truth.observations)):
            w.writerow([m, *map(repr, (s.pos[0], s.pos[1], s.vel[0], s.vel[1],
                                       z.bistatic_range, z.range_rate, z.aoa))])


def _read_csv(path, columns) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or tuple(head) != tuple(columns):
            raise FormatError(f"{path}: expected columns {','.join(columns)}")
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                raise FormatError(f"{path}:{i}: expected {len(columns)} fields")
            rows.append(row)
    return rows


def read_truth(path, slot_duration: float) -> TrajectoryTruth:
    states, obs = [], []
    try:
        for i, row in enumerate(_read_csv(path, TRUTH_COLUMNS)):
            if int(row[0]) != i:
                raise FormatError(f"{path}: slots must be 0, 1, 2, ... in order")
            x, y, vx, vy, R, Rd, th = map(float, row[1:])
            states.append(CartesianState((x, y), (vx, vy)))
            obs.append(Observation(R, Rd, th))
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    return TrajectoryTruth(slot_duration, states, obs)


# -- detections -------------------------------------------------------------------


def write_detections(path, detections_per_slot) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_COLUMNS)
        for dets in detections_per_slot:
            for d in dets:
                z = d.observation
                w.writerow([d.slot, repr(z.bistatic_range), repr(z.range_rate), repr(z.aoa),
                            d.beam, d.lag, d.doppler_bin, repr(float(d.magnitude))])


def read_detections(path, n_slots=None) -> list:
    """Per-slot detection lists; ``n_slots`` pads trailing empty slots."""
    try:
        dets = [
            Detection(int(r[0]), Observation(float(r[1]), float(r[2]), float(r[3])),
                      int(r[4]), int(r[5]), int(r[6]), float(r[7]))
            for r in _read_csv(path, DETECTION_COLUMNS)
        ]
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    if any(d.slot < 0 for d in dets):
        raise FormatError(f"{path}: negative slot index")
    last = max((d.slot for d in dets), default=-1)
    n = max(last + 1, n_slots or 0)
    out = [[] for _ in range(n)]
    for d in dets:
        out[d.slot].append(d)
    return out


# -- tracks -----------------------------------------------------------------------


def track_records(tracker, geometry) -> list:
    """JSON-ready dicts, one per (slot, track), ordered by slot then track id."""
    mode = tracker.cfg.mode
    rows = []
    for t in tracker.all_tracks():
        for rec in t.history:
            try:
                pos = list(state_to_cartesian(rec.state, mode, geometry).pos)
            except ValueError:
                pos = None
            rows.append({
                "slot": rec.slot,
                "id": t.id,
                "status": rec.status,
                "mode": mode,
                "associated": rec.associated,
                "state": [float(v) for v in rec.state],
                "covariance": [float(v) for v in rec.cov.ravel()],
                "position": pos,
            })
    rows.sort(key=lambda r: (r["slot"], r["id"]))
    return rows


def write_tracks(path, trackers, geometry) -> None:
    """Write one tracker or a sequence of them (e.g. both modes) to one JSONL file."""
    if not isinstance(trackers, (list, tuple)):
        trackers = [trackers]
    with open(path, "w") as fh:
        for tracker in trackers:
            for r in track_records(tracker, geometry):
                fh.write(json.dumps(r) + "\n")


def read_tracks(path) -> dict:
    """Tracks grouped by mode: ``{mode: [Track, ...]}`` rebuilt from JSONL records."""
    by_mode: dict = {}
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                state = np.asarray(r["state"], dtype=float)
                k = state.size
                cov = np.asarray(r["covariance"], dtype=float).reshape(k, k)
                rec = TrackRecord(int(r["slot"]), state, cov, str(r["status"]), bool(r["associated"]))
                mode, tid = str(r["mode"]), int(r["id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{i}: {exc}") from exc
            tracks = by_mode.setdefault(mode, {})
            if tid not in tracks:
                tracks[tid] = Track(tid, state, cov, rec.slot)
            t = tracks[tid]
            t.history.append(rec)
            t.state, t.cov, t.status = state, cov, rec.status
    return {m: [ts[k] for k in sorted(ts)] for m, ts in by_mode.items()}
