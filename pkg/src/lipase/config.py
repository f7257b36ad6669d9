"""Configuration records and the scenario file loader.

Scenario files are YAML. Angles are written in degrees in the file (keys
ending in ``_deg``) and held in radians in memory.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .geometry import SPEED_OF_LIGHT, Geometry


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class RadioConfig:
    carrier_freq: float = 2.123e9
    sample_rate: float = 25e6
    bandwidth: float = 5e6
    cit: float = 0.2
    ref_array_size: int = 4
    sur_array_size: int = 8
    element_spacing: float = 0.5
    oversample: int = 4
    band_center: Optional[float] = None

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def slot_samples(self) -> int:
        return int(round(self.cit * self.sample_rate))

    @property
    def doppler_bin_hz(self) -> float:
        return self.sample_rate / self.slot_samples

    @property
    def range_bin_m(self) -> float:
        return SPEED_OF_LIGHT / self.sample_rate

    def validate(self, path: str = "radio") -> None:
        for name in ("carrier_freq", "sample_rate", "bandwidth", "cit"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{path}.{name}", "must be positive")
        if self.bandwidth > self.sample_rate:
            raise ConfigError(f"{path}.bandwidth", "must not exceed the sample rate")
        n = self.cit * self.sample_rate
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(f"{path}.cit", "cit * sample_rate must be an integer")
        if self.ref_array_size < 1:
            raise ConfigError(f"{path}.ref_array_size", "must be >= 1")
        if self.sur_array_size < 2:
            raise ConfigError(f"{path}.sur_array_size", "must be >= 2")
        if not self.element_spacing > 0:
            raise ConfigError(f"{path}.element_spacing", "must be positive")
        if self.oversample < 2:
            raise ConfigError(f"{path}.oversample", "must be >= 2")
        sps = self.sample_rate * self.oversample / self.bandwidth
        if abs(sps - round(sps)) > 1e-9:
            raise ConfigError(
                f"{path}.bandwidth", "sample_rate * oversample / bandwidth must be an integer"
            )


@dataclass(frozen=True)
class CcConfig:
    max_doppler_bins: int = 0
    max_delay_samples: int = 20

    @property
    def n_columns(self) -> int:
        return (2 * self.max_doppler_bins + 1) * (self.max_delay_samples + 1)

    def validate(self, n_samples: Optional[int] = None, path: str = "cc") -> None:
        if self.max_doppler_bins < 0:
            raise ConfigError(f"{path}.max_doppler_bins", "must be >= 0")
        if self.max_delay_samples < 0:
            raise ConfigError(f"{path}.max_delay_samples", "must be >= 0")
        if n_samples is not None and self.n_columns >= n_samples:
            raise ConfigError(path, "(2P+1)(L+1) must be smaller than the slot length")


@dataclass(frozen=True)
class CfarConfig:
    guard: tuple = (60, 1)  # (Doppler bins, range bins)
    train: tuple = (60, 1)
    threshold_db: float = 15.0
    doppler_window: float = 500.0  # Hz, one-sided search limit

    def __post_init__(self):
        object.__setattr__(self, "guard", tuple(int(v) for v in self.guard))
        object.__setattr__(self, "train", tuple(int(v) for v in self.train))

    @property
    def alpha(self) -> float:
        """Linear threshold factor applied to CAF magnitudes."""
        return 10.0 ** (self.threshold_db / 20.0)

    def validate(self, path: str = "cfar") -> None:
        if len(self.guard) != 2 or min(self.guard) < 0:
            raise ConfigError(f"{path}.guard", "needs two non-negative counts")
        if len(self.train) != 2 or min(self.train) < 0:
            raise ConfigError(f"{path}.train", "needs two non-negative counts")
        if not self.threshold_db > 0:
            raise ConfigError(f"{path}.threshold_db", "threshold factor must exceed 1")
        if not self.doppler_window > 0:
            raise ConfigError(f"{path}.doppler_window", "must be positive")


@dataclass(frozen=True)
class TrackerConfig:
    mode: str = "cartesian"
    gate: float = 20.0
    confirm_slots: int = 5
    delete_slots: int = 14
    sigma_range: float = 7.0
    sigma_range_rate: float = 1.0
    sigma_aoa: float = math.radians(3.0)
    sigma_range_acc: float = 10.0
    sigma_aoa_acc: float = math.radians(3.0)
    sigma_x_acc: float = 4.0
    sigma_y_acc: float = 4.0
    sigma0_range_acc: float = 10.0
    sigma0_aoa_rate: float = math.radians(3.0)
    v_max: float = 15.0
    slot_duration: float = 0.2
    velocity_inversion: str = "exact"

    @property
    def meas_noise(self) -> np.ndarray:
        return np.diag([self.sigma_range**2, self.sigma_range_rate**2, self.sigma_aoa**2])

    def validate(self, path: str = "tracker") -> None:
        if self.mode not in ("bistatic", "cartesian"):
            raise ConfigError(f"{path}.mode", "must be 'bistatic' or 'cartesian'")
        if not self.gate > 0:
            raise ConfigError(f"{path}.gate", "must be positive")
        if self.confirm_slots < 1:
            raise ConfigError(f"{path}.confirm_slots", "must be >= 1")
        if self.confirm_slots > self.delete_slots:
            raise ConfigError(f"{path}.confirm_slots", "must not exceed delete_slots")
        for f in fields(self):
            if f.name.startswith("sigma") and not getattr(self, f.name) > 0:
                raise ConfigError(f"{path}.{f.name}", "variances must be positive")
        if not self.slot_duration > 0:
            raise ConfigError(f"{path}.slot_duration", "must be positive")
        if self.velocity_inversion not in ("exact", "paper"):
            raise ConfigError(f"{path}.velocity_inversion", "must be 'exact' or 'paper'")


@dataclass(frozen=True)
class ClutterSpec:
    position: tuple
    excess_db: float = 20.0  # surveillance echo power relative to the target echo
    ref_excess_db: float = -30.0  # reference-array echo power relative to the LoS


@dataclass(frozen=True)
class NoiseConfig:
    sur_snr_db: float = -30.0  # target echo power per surveillance antenna over noise
    ref_snr_db: float = 10.0  # LoS power per reference antenna over noise


@dataclass(frozen=True)
class TargetSpec:
    """Piecewise trajectory: a start point and a list of legs.

    Each leg is ``{"kind": "line", "length": m, "speed": m/s}`` or
    ``{"kind": "arc", "radius": m, "turn_deg": deg, "speed": m/s}`` (positive
    turns are counterclockwise). ``heading`` is the initial course.
    """

    start: tuple = (100.0, 300.0)
    heading: float = math.pi
    legs: tuple = ()


@dataclass(frozen=True)
class FaultConfig:
    drop_prob: float = 0.0
    false_alarm_rate: float = 0.0

    def validate(self, path: str = "faults") -> None:
        if not 0.0 <= self.drop_prob < 1.0:
            raise ConfigError(f"{path}.drop_prob", "must be in [0, 1)")
        if not 0.0 <= self.false_alarm_rate < 1.0:
            raise ConfigError(f"{path}.false_alarm_rate", "must be in [0, 1)")


@dataclass(frozen=True)
class EvaluationConfig:
    """Hit-matching gate used when scoring detections against truth."""

    match_range_m: float = 30.0
    match_doppler_hz: float = 10.0
    match_aoa_deg: float = 5.0

    def validate(self, path: str = "evaluation") -> None:
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"{path}.{f.name}", "must be positive")


@dataclass(frozen=True)
class Scenario:
    radio: RadioConfig = field(default_factory=RadioConfig)
    geometry: Geometry = field(default_factory=Geometry)
    clutter: tuple = ()
    direct_path_excess_db: float = 40.0
    target: TargetSpec = field(default_factory=TargetSpec)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    cc: CcConfig = field(default_factory=CcConfig)
    cfar: CfarConfig = field(default_factory=CfarConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    faults: FaultConfig = field(default_factory=FaultConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    aoa_grid_step: float = math.radians(0.1)
    slots: int = 30
    seed: int = 0

    def validate(self) -> None:
        self.radio.validate()
        self.cc.validate(self.radio.slot_samples)
        self.cfar.validate()
        self.tracker.validate()
        self.faults.validate()
        self.evaluation.validate()
        if self.slots < 1:
            raise ConfigError("slots", "must be >= 1")
        if not self.aoa_grid_step > 0:
            raise ConfigError("detect.aoa_grid_step_deg", "must be positive")
        if abs(self.tracker.slot_duration - self.radio.cit) > 1e-12:
            raise ConfigError("tracker.slot_duration", "must equal radio.cit")
        window_bins = int(self.cfar.doppler_window * self.radio.cit)
        if window_bins >= self.radio.slot_samples // 2:
            raise ConfigError("cfar.doppler_window", "exceeds the unambiguous Doppler range")
        if not self.target.legs:
            raise ConfigError("target.legs", "needs at least one leg")
        for i, leg in enumerate(self.target.legs):
            p = f"target.legs[{i}]"
            if leg.get("kind") not in ("line", "arc"):
                raise ConfigError(f"{p}.kind", "must be 'line' or 'arc'")
            if not leg.get("speed", 0) > 0:
                raise ConfigError(f"{p}.speed", "must be positive")
            if leg["kind"] == "line" and not leg.get("length", 0) > 0:
                raise ConfigError(f"{p}.length", "must be positive")
            if leg["kind"] == "arc" and not leg.get("radius", 0) > 0:
                raise ConfigError(f"{p}.radius", "must be positive")
        for i, c in enumerate(self.clutter):
            if np.allclose(c.position, self.geometry.rx_pos) or np.allclose(
                c.position, self.geometry.tx_pos
            ):
                raise ConfigError(f"clutter[{i}].position", "coincides with a station")


# -- YAML mapping ------------------------------------------------------------

_SECTION_TYPES = {
    "radio": RadioConfig,
    "cc": CcConfig,
    "cfar": CfarConfig,
    "noise": NoiseConfig,
    "faults": FaultConfig,
    "evaluation": EvaluationConfig,
}

_TRACKER_DEG_KEYS = ("sigma_aoa", "sigma_aoa_acc", "sigma0_aoa_rate")


def _build(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _angle(data: dict, key: str, default_deg, path: str):
    """Read ``key_deg`` (degrees) or ``key`` (radians); at most one may be given."""
    if key in data and f"{key}_deg" in data:
        raise ConfigError(f"{path}.{key}", "give the angle in degrees or radians, not both")
    if key in data:
        return None if data[key] is None else float(data[key])
    deg = data.get(f"{key}_deg", default_deg)
    return None if deg is None else math.radians(deg)


def _geometry_from(data: Any) -> Geometry:
    data = dict(data or {})
    allowed = {"tx_pos", "rx_pos"}
    allowed |= {k + sfx for k in ("sur_broadside", "ref_broadside", "ref_aoa") for sfx in ("", "_deg")}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"geometry.{sorted(unknown)[0]}", "unknown key")
    angles = {
        "sur_broadside": _angle(data, "sur_broadside", 0.0, "geometry"),
        "ref_broadside": _angle(data, "ref_broadside", 0.0, "geometry"),
        "ref_aoa": _angle(data, "ref_aoa", None, "geometry"),
    }
    try:
        return Geometry(
            tx_pos=tuple(data.get("tx_pos", (255.0, 0.0))),
            rx_pos=tuple(data.get("rx_pos", (0.0, 0.0))),
            **angles,
        )
    except ValueError as exc:
        raise ConfigError("geometry", str(exc)) from exc


def _tracker_from(data: Any) -> TrackerConfig:
    data = dict(data or {})
    for key in _TRACKER_DEG_KEYS:
        if f"{key}_deg" in data:
            data[key] = _angle(data, key, None, "tracker")
            data.pop(f"{key}_deg")
    return _build(TrackerConfig, data, "tracker")


def _target_from(data: Any) -> TargetSpec:
    data = dict(data or {})
    allowed = {"start", "heading", "heading_deg", "legs"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"target.{sorted(unknown)[0]}", "unknown key")
    legs = data.get("legs", [])
    if not isinstance(legs, list):
        raise ConfigError("target.legs", "expected a list")
    return TargetSpec(
        start=tuple(float(v) for v in data.get("start", (100.0, 300.0))),
        heading=_angle(data, "heading", 180.0, "target"),
        legs=tuple(dict(leg) for leg in legs),
    )


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    allowed = {
        "radio", "geometry", "clutter", "direct_path_excess_db", "target", "noise",
        "cc", "cfar", "detect", "tracker", "faults", "evaluation", "slots", "seed",
    }
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    kwargs = {name: _build(cls, data.get(name), name) for name, cls in _SECTION_TYPES.items()}
    clutter = []
    for i, item in enumerate(data.get("clutter") or []):
        c = _build(ClutterSpec, item, f"clutter[{i}]")
        clutter.append(ClutterSpec(tuple(float(v) for v in c.position), c.excess_db, c.ref_excess_db))
    detect = dict(data.get("detect") or {})
    unknown = set(detect) - {"aoa_grid_step", "aoa_grid_step_deg"}
    if unknown:
        raise ConfigError(f"detect.{sorted(unknown)[0]}", "unknown key")
    tracker = _tracker_from(data.get("tracker"))
    radio = kwargs["radio"]
    if "slot_duration" not in (data.get("tracker") or {}):
        tracker = _replace(tracker, slot_duration=radio.cit)
    scenario = Scenario(
        geometry=_geometry_from(data.get("geometry")),
        clutter=tuple(clutter),
        direct_path_excess_db=float(data.get("direct_path_excess_db", 40.0)),
        target=_target_from(data.get("target")),
        tracker=tracker,
        aoa_grid_step=_angle(detect, "aoa_grid_step", 0.1, "detect"),
        slots=int(data.get("slots", 30)),
        seed=int(data.get("seed", 0)),
        **kwargs,
    )
    scenario.validate()
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    g = s.geometry
    # angles are written in radians so that load(dump(s)) == s exactly
    tracker = asdict(s.tracker)
    cfar = asdict(s.cfar)
    cfar["guard"] = list(cfar["guard"])
    cfar["train"] = list(cfar["train"])
    return {
        "seed": s.seed,
        "slots": s.slots,
        "radio": asdict(s.radio),
        "geometry": {
            "tx_pos": list(g.tx_pos),
            "rx_pos": list(g.rx_pos),
            "sur_broadside": g.sur_broadside,
            "ref_broadside": g.ref_broadside,
            "ref_aoa": g.ref_aoa,
        },
        "clutter": [
            {"position": list(c.position), "excess_db": c.excess_db, "ref_excess_db": c.ref_excess_db}
            for c in s.clutter
        ],
        "direct_path_excess_db": s.direct_path_excess_db,
        "target": {
            "start": list(s.target.start),
            "heading": s.target.heading,
            "legs": [dict(leg) for leg in s.target.legs],
        },
        "noise": asdict(s.noise),
        "cc": asdict(s.cc),
        "cfar": cfar,
        "detect": {"aoa_grid_step": s.aoa_grid_step},
        "tracker": tracker,
        "faults": asdict(s.faults),
        "evaluation": asdict(s.evaluation),
    }


def _replace(obj, **changes):
    return type(obj)(**{**{f.name: getattr(obj, f.name) for f in fields(obj)}, **changes})


def replace_config(obj, **changes):
    """``dataclasses.replace`` that also works for the frozen configs here."""
    return _replace(obj, **changes)


BUILTIN_SCENARIOS = ("reference", "paper")


def load_scenario(path_or_name) -> Scenario:
    """Load a scenario from a YAML path or a built-in name (``reference``, ``paper``)."""
    name = str(path_or_name)
    if name in BUILTIN_SCENARIOS:
        text = resources.files("lipase.scenarios").joinpath(f"{name}.yaml").read_text()
    else:
        p = Path(name)
        if not p.is_file():
            raise ConfigError("<config>", f"no such file: {name}")
        text = p.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<config>", f"malformed YAML: {exc}") from exc
    return scenario_from_dict(copy.deepcopy(data))


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False)
