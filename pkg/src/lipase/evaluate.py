"""Scoring of detections and tracks against the simulated truth.

Detection scoring matches each slot's observations to truth inside a gate;
tracking scoring follows the one confirmed track that survives to the end of
the run. Every report is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import EvaluationConfig
from .geometry import CartesianState, Geometry, GeometryError, Observation, invert, wrap_angle
from .track import state_to_cartesian, state_to_observation

QUANTITIES = ("range", "doppler", "aoa", "x", "y", "vx", "vy", "localization")
UNITS = {
    "range": "m",
    "doppler": "Hz",
    "aoa": "deg",
    "x": "m",
    "y": "m",
    "vx": "m/s",
    "vy": "m/s",
    "localization": "m",
}
ROWS = ("detection_hit", "bistatic_tracking", "cartesian_tracking")


class EvaluationError(ValueError):
    pass


class NoConfirmedTrackError(EvaluationError):
    pass


def mae_rmse(estimates, truth) -> tuple:
    """Mean absolute error and root mean squared error of two equal-length sequences."""
    e = np.asarray(estimates, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if e.shape != t.shape:
        raise EvaluationError("estimates and truth differ in length")
    if e.size == 0:
        raise EvaluationError("cannot score an empty sequence")
    err = e - t
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2)))


def _as_observation(d) -> Observation:
    return d if isinstance(d, Observation) else d.observation


# -- detection --------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionStats:
    detection_rate: float
    missed_rate: float
    false_alarm_rate: float
    n_slots: int
    n_hits: int
    n_observations: int
    n_false_alarms: int
    hits: tuple  # per slot: index of the hit observation, or None


def _gate_distance(z: Observation, truth: Observation, gate: EvaluationConfig, wavelength: float):
    dr = abs(z.bistatic_range - truth.bistatic_range)
    df = abs(z.range_rate - truth.range_rate) / wavelength
    da = abs(wrap_angle(z.aoa - truth.aoa))
    if dr > gate.match_range_m or df > gate.match_doppler_hz or da > math.radians(gate.match_aoa_deg):
        return None
    return (dr / gate.match_range_m) ** 2 + (df / gate.match_doppler_hz) ** 2 + (
        da / math.radians(gate.match_aoa_deg)
    ) ** 2


def detection_stats(detections_per_slot, truth_per_slot, gate: Optional[EvaluationConfig] = None,
                    wavelength: float = 1.0) -> DetectionStats:
    """Hit, miss and false-alarm rates.

    A slot is a hit when some observation lies inside the gate of the truth in
    range, Doppler (Hz, via ``wavelength``) and AoA together; the nearest one in
    gate-normalised distance is the slot's hit. Observations outside the gate
    are false alarms; extra in-gate observations are neither hits nor false
    alarms. With no observations at all the false-alarm rate is 0.
    """
    gate = gate or EvaluationConfig()
    gate.validate()
    if len(detections_per_slot) != len(truth_per_slot):
        raise EvaluationError("detections and truth cover different numbers of slots")
    hits = []
    n_obs = n_in_gate = 0
    for dets, truth in zip(detections_per_slot, truth_per_slot):
        obs = [_as_observation(d) for d in dets]
        n_obs += len(obs)
        best, best_d = None, math.inf
        for i, z in enumerate(obs):
            d = _gate_distance(z, truth, gate, wavelength)
            if d is None:
                continue
            n_in_gate += 1
            if d < best_d:
                best, best_d = i, d
        hits.append(best)
    n_slots = len(hits)
    n_hits = sum(h is not None for h in hits)
    n_false = n_obs - n_in_gate
    rate = n_hits / n_slots if n_slots else 0.0
    return DetectionStats(
        detection_rate=rate,
        missed_rate=1.0 - rate if n_slots else 0.0,
        false_alarm_rate=n_false / n_obs if n_obs else 0.0,
        n_slots=n_slots,
        n_hits=n_hits,
        n_observations=n_obs,
        n_false_alarms=n_false,
        hits=tuple(hits),
    )


# -- per-slot errors --------------------------------------------------------------


def _errors(z: Observation, s: Optional[CartesianState], truth_z: Observation,
            truth_s: CartesianState, wavelength: float) -> dict:
    row = {
        "range": z.bistatic_range - truth_z.bistatic_range,
        "doppler": -(z.range_rate - truth_z.range_rate) / wavelength,
        "aoa": math.degrees(wrap_angle(z.aoa - truth_z.aoa)),
    }
    if s is not None:
        row["x"] = s.pos[0] - truth_s.pos[0]
        row["y"] = s.pos[1] - truth_s.pos[1]
        row["vx"] = s.vel[0] - truth_s.vel[0]
        row["vy"] = s.vel[1] - truth_s.vel[1]
        row["localization"] = math.hypot(row["x"], row["y"])
    return row


def _summarise(rows: Sequence[dict]) -> dict:
    out = {}
    for q in QUANTITIES:
        errs = [r[q] for r in rows if q in r]
        if not errs:
            continue
        mae, rmse = mae_rmse(errs, np.zeros(len(errs)))
        out[q] = {"mae": mae, "rmse": rmse, "n": len(errs)}
    return out


def select_track(tracks, final_slot: int):
    """The confirmed track alive at ``final_slot``; the longest-lived one on ties."""
    alive = [
        t for t in tracks
        if t.history and t.history[-1].slot == final_slot and t.history[-1].status == "confirmed"
    ]
    if not alive:
        raise NoConfirmedTrackError("no confirmed track survives to the final slot")
    return min(alive, key=lambda t: (-len(t.history), t.id))


def track_errors(track, truth, geometry: Geometry, mode: str, wavelength: float) -> list:
    rows = []
    for rec in track.history:
        if not 0 <= rec.slot < len(truth.states):
            continue
        try:
            s = state_to_cartesian(rec.state, mode, geometry)
        except GeometryError:
            s = None
        z = state_to_observation(rec.state, mode, geometry)
        row = _errors(z, s, truth.observations[rec.slot], truth.states[rec.slot], wavelength)
        row["slot"] = rec.slot
        rows.append(row)
    return rows


def hit_errors(detections_per_slot, stats: DetectionStats, truth, geometry: Geometry,
               wavelength: float) -> list:
    rows = []
    for m, h in enumerate(stats.hits):
        if h is None:
            continue
        z = _as_observation(detections_per_slot[m][h])
        try:
            s = invert(z, geometry)
        except GeometryError:
            s = None
        row = _errors(z, s, truth.observations[m], truth.states[m], wavelength)
        row["slot"] = m
        rows.append(row)
    return rows


# -- report -----------------------------------------------------------------------


@dataclass
class MetricsReport:
    rows: dict  # row name -> quantity -> {"mae", "rmse", "n"}
    detection_rate: float
    missed_rate: float
    false_alarm_rate: float
    n_slots: int
    tracks: dict = field(default_factory=dict)  # row name -> {"id", "first_slot", "n_slots"}
    per_slot: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "n_slots": self.n_slots,
            "detection_rate": self.detection_rate,
            "missed_rate": self.missed_rate,
            "false_alarm_rate": self.false_alarm_rate,
            "rows": self.rows,
            "tracks": self.tracks,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            rows={k: {q: dict(v) for q, v in r.items()} for k, r in data["rows"].items()},
            detection_rate=float(data["detection_rate"]),
            missed_rate=float(data["missed_rate"]),
            false_alarm_rate=float(data["false_alarm_rate"]),
            n_slots=int(data["n_slots"]),
            tracks={k: dict(v) for k, v in data.get("tracks", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def per_slot_csv(self) -> str:
        buf = io.StringIO()
        cols = ["row", "slot"] + [f"{q}_err" for q in QUANTITIES]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.per_slot:
            w.writerow([r["row"], r["slot"]] + [repr(r[q]) if q in r else "" for q in QUANTITIES])
        return buf.getvalue()

    def table(self) -> str:
        """Plain-text summary with one line per scored row."""
        head = f"{'':20s}" + "".join(f"{q + ' [' + UNITS[q] + ']':>22s}" for q in QUANTITIES)
        lines = [
            f"slots {self.n_slots}  detection rate {self.detection_rate:.3f}  "
            f"missed rate {self.missed_rate:.3f}  false alarm rate {self.false_alarm_rate:.3f}",
            "MAE / RMSE",
            head,
        ]
        for name in ROWS:
            if name not in self.rows:
                continue
            cells = []
            for q in QUANTITIES:
                v = self.rows[name].get(q)
                cells.append(f"{v['mae']:>10.3f} /{v['rmse']:>9.3f}" if v else f"{'-':>22s}")
            lines.append(f"{name:20s}" + "".join(f"{c:>22s}" for c in cells))
        return "\n".join(lines) + "\n"


def score_run(detections_per_slot, truth, geometry: Geometry, wavelength: float,
              tracks: Optional[dict] = None, gate: Optional[EvaluationConfig] = None) -> MetricsReport:
    """Detection-hit and tracking error rows for one run.

    ``tracks`` maps a tracker mode (``"bistatic"``/``"cartesian"``) to the list
    of all tracks that mode produced. Each mode is scored on its one confirmed
    track alive at the final slot.
    """
    stats = detection_stats(detections_per_slot, truth.observations, gate, wavelength)
    per_slot = []
    rows = {}
    hit_rows = hit_errors(detections_per_slot, stats, truth, geometry, wavelength)
    if hit_rows:
        rows["detection_hit"] = _summarise(hit_rows)
    per_slot += [{**r, "row": "detection_hit"} for r in hit_rows]
    track_info = {}
    final_slot = len(truth.states) - 1
    for mode, mode_tracks in sorted((tracks or {}).items()):
        t = select_track(mode_tracks, final_slot)
        trk_rows = track_errors(t, truth, geometry, mode, wavelength)
        name = f"{mode}_tracking"
        rows[name] = _summarise(trk_rows)
        track_info[name] = {"id": t.id, "first_slot": t.history[0].slot, "n_slots": len(t.history)}
        per_slot += [{**r, "row": name} for r in trk_rows]
    return MetricsReport(
        rows=rows,
        detection_rate=stats.detection_rate,
        missed_rate=stats.missed_rate,
        false_alarm_rate=stats.false_alarm_rate,
        n_slots=stats.n_slots,
        tracks=track_info,
        per_slot=per_slot,
    )


def truth_tracks(truth, mode: str = "cartesian", geometry: Optional[Geometry] = None):
    """Tracks that reproduce the truth exactly; useful as a scoring baseline.

    The bistatic mode needs ``geometry`` for the AoA rate.
    """
    from .track import Track, TrackRecord

    if mode == "bistatic" and geometry is None:
        raise EvaluationError("bistatic truth tracks need the geometry")
    recs = []
    for m, (s, z) in enumerate(zip(truth.states, truth.observations)):
        if mode == "cartesian":
            state = s.as_vector()
        else:
            d = np.asarray(s.pos) - geometry.rx
            thetadot = (d[0] * s.vel[1] - d[1] * s.vel[0]) / float(d @ d)
            state = np.array([z.bistatic_range, z.range_rate, 0.0, z.aoa, thetadot])
        recs.append(TrackRecord(m, state, np.zeros((state.size, state.size)), "confirmed", True))
    return [Track(1, recs[0].state, recs[0].cov, 0, "confirmed", history=recs)]


__all__ = [
    "DetectionStats",
    "EvaluationError",
    "MetricsReport",
    "NoConfirmedTrackError",
    "detection_stats",
    "mae_rmse",
    "score_run",
    "select_track",
    "truth_tracks",
]
