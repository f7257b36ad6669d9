"""Scenario-level drivers shared by the CLI and the end-to-end tests."""

from __future__ import annotations

import logging
from typing import Iterable, Optional

import numpy as np

from .config import Scenario, replace_config
from .detect import Detection, Detector, inject_faults
from .evaluate import MetricsReport, score_run
from .simulate import Scene, simulate_scene
from .track import Tracker

log = logging.getLogger(__name__)

# Stream tag separating the fault-injection RNG from the scene's own streams.
_FAULT_STREAM = 0xFA17


def make_detector(scenario: Scenario, workers: Optional[int] = None) -> Detector:
    return Detector(scenario.radio, scenario.cc, scenario.cfar, scenario.geometry,
                    scenario.aoa_grid_step, workers)


def detect_slots(detector: Detector, slots: Iterable) -> list:
    """Detections per slot from an iterable of ``(ref, sur)`` ArraySlot pairs, in order."""
    out = []
    prev = None
    for ref, sur in slots:
        out.append(detector.process(ref, sur, prev))
        prev = ref
    return out


def detect_scene(scenario: Scenario, scene: Optional[Scene] = None, workers: Optional[int] = None) -> list:
    scene = scene or simulate_scene(scenario)
    return detect_slots(make_detector(scenario, workers), scene.iter_slots())


def fault_rng(scenario: Scenario) -> np.random.Generator:
    return np.random.default_rng([scenario.seed, _FAULT_STREAM])


def apply_faults(scenario: Scenario, detections: list, drop_prob: Optional[float] = None,
                 false_alarm_rate: Optional[float] = None) -> list:
    """Scenario fault settings (or the given overrides) applied to per-slot detections."""
    drop = scenario.faults.drop_prob if drop_prob is None else drop_prob
    fa = scenario.faults.false_alarm_rate if false_alarm_rate is None else false_alarm_rate
    if drop == 0 and fa == 0:
        return [list(d) for d in detections]
    return inject_faults(detections, drop, fa, scenario.radio, scenario.cc, scenario.cfar,
                         scenario.geometry, fault_rng(scenario))


def run_tracker(scenario: Scenario, detections: list, mode: Optional[str] = None) -> Tracker:
    cfg = scenario.tracker if mode is None else replace_config(scenario.tracker, mode=mode)
    tracker = Tracker(cfg, scenario.geometry)
    for m, dets in enumerate(detections):
        tracker.step([_observation(d) for d in dets], m)
    return tracker


def _observation(d):
    return d.observation if isinstance(d, Detection) else d


def evaluate_run(scenario: Scenario, truth, detections: list, trackers: dict) -> MetricsReport:
    tracks = {mode: t.all_tracks() for mode, t in trackers.items()}
    return score_run(detections, truth, scenario.geometry, scenario.radio.wavelength, tracks,
                     scenario.evaluation)
