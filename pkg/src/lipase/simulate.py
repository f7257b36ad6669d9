"""Signal-level synthesis of the reference and surveillance array slots.

The illuminator waveform is a seeded, root-raised-cosine shaped QPSK stream.
It is evaluated lazily on an oversampled grid, so any time span can be
produced without materialising the whole run; all random streams are keyed
by counters so slots can be synthesised in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.signal import upfirdn

from . import kernels
from .config import RadioConfig, Scenario
from .geometry import SPEED_OF_LIGHT, CartesianState, Geometry, Observation, measure, wrap_angle

ROLL_OFF = 0.25
RRC_SPAN = 16  # symbols on each side of the pulse peak
_SYMBOL_BLOCK = 4096
_WAVEFORM_STREAM = 0x57A7
_ARRAY_IDS = {"reference": 1, "surveillance": 2}


class SimulationError(ValueError):
    pass


def rrc_taps(sps: int, beta: float = ROLL_OFF, span: int = RRC_SPAN) -> np.ndarray:
    """Root-raised-cosine impulse response, scaled so unit-power symbols give unit power."""
    t = np.arange(-span * sps, span * sps + 1) / sps
    taps = np.empty_like(t)
    center = t == 0.0
    edge = np.isclose(np.abs(t), 1.0 / (4.0 * beta))
    rest = ~(center | edge)
    taps[center] = 1.0 + beta * (4.0 / np.pi - 1.0)
    taps[edge] = (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )
    tr = t[rest]
    taps[rest] = (
        np.sin(np.pi * tr * (1.0 - beta)) + 4.0 * beta * tr * np.cos(np.pi * tr * (1.0 + beta))
    ) / (np.pi * tr * (1.0 - (4.0 * beta * tr) ** 2))
    return taps * np.sqrt(sps / np.sum(taps**2))


class Waveform:
    """Lazily evaluated transmit waveform on the oversampled grid.

    Oversampled index ``j`` corresponds to time ``j / (sample_rate * oversample)``;
    negative indices are valid. The symbol rate equals the configured bandwidth.
    """

    def __init__(self, seed: int, cfg: RadioConfig, oversample: Optional[int] = None):
        self.seed = int(seed)
        self.oversample = int(oversample or cfg.oversample)
        if self.oversample < 2:
            raise SimulationError("oversample must be >= 2")
        sps = cfg.sample_rate * self.oversample / cfg.bandwidth
        if abs(sps - round(sps)) > 1e-9:
            raise SimulationError("sample_rate * oversample / bandwidth must be an integer")
        self.sps = int(round(sps))
        self.taps = rrc_taps(self.sps)
        self._half = RRC_SPAN * self.sps

    def _block(self, b: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, _WAVEFORM_STREAM, b + (1 << 40)])
        bits = rng.integers(0, 2, size=(2, _SYMBOL_BLOCK))
        return ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2.0)

    def symbols(self, k0: int, k1: int) -> np.ndarray:
        """QPSK symbols with indices ``k0 <= k < k1``."""
        b0, b1 = k0 // _SYMBOL_BLOCK, (k1 - 1) // _SYMBOL_BLOCK
        blocks = np.concatenate([self._block(b) for b in range(b0, b1 + 1)])
        off = k0 - b0 * _SYMBOL_BLOCK
        return blocks[off: off + (k1 - k0)]

    def segment(self, start: int, n: int) -> np.ndarray:
        """Oversampled samples with indices ``start <= j < start + n``."""
        k0 = (start - self._half) // self.sps - 1
        k1 = -(-(start + n + self._half) // self.sps) + 1
        y = upfirdn(self.taps, self.symbols(k0, k1), up=self.sps)
        i0 = start - k0 * self.sps + self._half
        return y[i0: i0 + n]


def generate_waveform(seed: int, cfg: RadioConfig, n_slots: int, oversample: int = 4) -> np.ndarray:
    """Oversampled transmit waveform covering ``n_slots`` slots from t = 0."""
    wf = Waveform(seed, cfg, oversample)
    return wf.segment(0, n_slots * cfg.slot_samples * wf.oversample)


@dataclass(frozen=True)
class ScattererPath:
    kind: str  # "los", "clutter" or "target"
    attenuation: complex
    delay: float  # seconds
    aoa: float  # radians, relative to the receiving array's broadside
    doppler: float = 0.0  # Hz

    def __post_init__(self):
        if self.kind not in ("los", "clutter", "target"):
            raise SimulationError(f"unknown path kind {self.kind!r}")
        if self.kind != "target" and self.doppler != 0.0:
            raise SimulationError("only target paths carry Doppler")
        if self.delay < 0:
            raise SimulationError("path delay must be non-negative")


@dataclass
class ArraySlot:
    slot_index: int
    samples: np.ndarray  # (n_antennas, N) complex


def _segment_bounds(m: int, n: int, delay_samples: float, os: int):
    first = (m * n - delay_samples) * os
    last = (m * n + n - 1 - delay_samples) * os
    return first, last


def render_path(waveform: Waveform, path: ScattererPath, m: int, cfg: RadioConfig,
                segment: Optional[tuple] = None) -> np.ndarray:
    """``a * x(t - tau) * exp(j 2 pi f_D t)`` at the N sample instants of slot ``m``.

    ``t`` for the Doppler term is measured from the start of the slot. The
    fractional delay is realised by linear interpolation on the oversampled
    waveform. ``segment`` may pass a pre-fetched ``(start_index, samples)``.
    """
    n = cfg.slot_samples
    if path.attenuation == 0:
        return np.zeros(n, dtype=np.complex128)
    os = waveform.oversample
    first, last = _segment_bounds(m, n, path.delay * cfg.sample_rate, os)
    if segment is None:
        seg_start = math.floor(first) - 1
        segment = (seg_start, waveform.segment(seg_start, math.ceil(last) - seg_start + 2))
    seg_start, seg = segment
    try:
        x = kernels.lerp_uniform(seg, first - seg_start, float(os), n)
    except IndexError as exc:
        raise SimulationError("path delay is outside the generated waveform span") from exc
    out = path.attenuation * x
    if path.doppler != 0.0:
        out *= np.exp(2j * np.pi * path.doppler * np.arange(n) / cfg.sample_rate)
    return out


def steering(phi: float, n: int, spacing: float) -> np.ndarray:
    return np.exp(-2j * np.pi * spacing * np.arange(n) * np.sin(phi))


def slot_noise(seed: int, array: str, m: int, antenna: int, n: int, power: float) -> np.ndarray:
    rng = np.random.default_rng([int(seed), _ARRAY_IDS[array], int(m), int(antenna)])
    w = rng.standard_normal((2, n))
    return np.sqrt(power / 2.0) * (w[0] + 1j * w[1])


def synthesize_slot(paths, noise_power: float, array: str, m: int, cfg: RadioConfig,
                    seed: int, waveform: Optional[Waveform] = None) -> ArraySlot:
    """One slot of array samples: steered path renderings plus white noise."""
    if array not in _ARRAY_IDS:
        raise SimulationError(f"unknown array {array!r}")
    n_ant = cfg.ref_array_size if array == "reference" else cfg.sur_array_size
    n = cfg.slot_samples
    for p in paths:
        if not abs(p.aoa) < np.pi / 2:
            raise SimulationError(f"{p.kind} path at {p.aoa:.4f} rad is outside the {array} array FoV")
    out = np.zeros((n_ant, n), dtype=np.complex128)
    live = [p for p in paths if p.attenuation != 0]
    if live:
        wf = waveform if waveform is not None else Waveform(seed, cfg)
        os = wf.oversample
        bounds = [_segment_bounds(m, n, p.delay * cfg.sample_rate, os) for p in live]
        seg_start = math.floor(min(b[0] for b in bounds)) - 1
        seg_end = math.ceil(max(b[1] for b in bounds)) + 1
        segment = (seg_start, wf.segment(seg_start, seg_end - seg_start + 1))
        for p in live:
            sig = render_path(wf, p, m, cfg, segment)
            out += steering(p.aoa, n_ant, cfg.element_spacing)[:, None] * sig[None, :]
    if noise_power > 0:
        for i in range(n_ant):
            out[i] += slot_noise(seed, array, m, i, n, noise_power)
    return ArraySlot(m, out)


# -- trajectories -------------------------------------------------------------


class Trajectory:
    """Constant-speed piecewise path made of straight legs and circular arcs."""

    def __init__(self, start, heading: float, legs):
        self._legs = []
        pos = np.asarray(start, dtype=float)
        t = 0.0
        for leg in legs:
            speed = float(leg["speed"])
            if leg["kind"] == "line":
                length = float(leg["length"])
                turn = 0.0
                radius = math.inf
            else:
                radius = float(leg["radius"])
                turn = math.radians(float(leg["turn_deg"]))
                length = radius * abs(turn)
            duration = length / speed
            self._legs.append((t, duration, pos.copy(), heading, speed, turn, radius))
            pos, heading = self._advance(pos, heading, speed, turn, radius, duration, duration)
            t += duration
        self.duration = t
        self._end = (pos, heading, self._legs[-1][4] if self._legs else 0.0)

    @staticmethod
    def _advance(pos, heading, speed, turn, radius, duration, dt):
        if turn == 0.0:
            direction = np.array([math.cos(heading), math.sin(heading)])
            return pos + speed * dt * direction, heading
        sign = math.copysign(1.0, turn)
        omega = sign * speed / radius
        h1 = heading + omega * dt
        center = pos + sign * radius * np.array([-math.sin(heading), math.cos(heading)])
        new_pos = center + sign * radius * np.array([math.sin(h1), -math.cos(h1)])
        return new_pos, h1

    def state(self, t: float) -> CartesianState:
        """Target state at time ``t``; past the last leg it keeps a straight course."""
        for t0, dur, pos, heading, speed, turn, radius in self._legs:
            if t <= t0 + dur:
                p, h = self._advance(pos, heading, speed, turn, radius, dur, max(t - t0, 0.0))
                return CartesianState(tuple(p), (speed * math.cos(h), speed * math.sin(h)))
        pos, heading, speed = self._end
        extra = t - self.duration
        p = pos + speed * extra * np.array([math.cos(heading), math.sin(heading)])
        return CartesianState(tuple(p), (speed * math.cos(heading), speed * math.sin(heading)))

    def max_acceleration(self) -> float:
        acc = [speed**2 / radius for (_, _, _, _, speed, turn, radius) in self._legs if turn]
        return max(acc, default=0.0)


@dataclass
class TrajectoryTruth:
    slot_duration: float
    states: list
    observations: list
    max_acceleration: float = 0.0

    def __len__(self):
        return len(self.states)

    def check_consistency(self) -> bool:
        """Consecutive positions agree with the velocities within the acceleration bound."""
        T = self.slot_duration
        for a, b in zip(self.states, self.states[1:]):
            drift = np.asarray(b.pos) - np.asarray(a.pos) - T * np.asarray(a.vel)
            if np.hypot(*drift) > 0.5 * self.max_acceleration * T**2 + 1e-9:
                return False
        return True


def build_truth(scenario: Scenario, n_slots: int) -> TrajectoryTruth:
    traj = Trajectory(scenario.target.start, scenario.target.heading, scenario.target.legs)
    T = scenario.radio.cit
    states = [traj.state(m * T) for m in range(n_slots)]
    observations = [measure(s, scenario.geometry) for s in states]
    return TrajectoryTruth(T, states, observations, traj.max_acceleration())


# -- scene --------------------------------------------------------------------


def _carrier_phase(cfg: RadioConfig, delay: float) -> complex:
    return complex(np.exp(-2j * np.pi * ((cfg.carrier_freq * delay) % 1.0)))


@dataclass
class Scene:
    scenario: Scenario
    truth: TrajectoryTruth
    ref_paths: list
    sur_static_paths: list
    target_paths: list
    seed: int
    waveform: Waveform = field(repr=False)

    @property
    def n_slots(self) -> int:
        return len(self.truth)

    def slot(self, m: int):
        cfg = self.scenario.radio
        ref = synthesize_slot(self.ref_paths, 1.0, "reference", m, cfg, self.seed, self.waveform)
        target = self.target_paths[m]
        paths = self.sur_static_paths + ([target] if target.attenuation != 0 else [])
        sur = synthesize_slot(paths, 1.0, "surveillance", m, cfg, self.seed, self.waveform)
        return ref, sur

    def iter_slots(self) -> Iterator:
        for m in range(self.n_slots):
            yield self.slot(m)


def target_path(obs: Observation, g: Geometry, cfg: RadioConfig, amplitude: float) -> ScattererPath:
    delay = obs.bistatic_range / SPEED_OF_LIGHT
    return ScattererPath(
        kind="target",
        attenuation=amplitude * _carrier_phase(cfg, delay),
        delay=delay,
        aoa=wrap_angle(obs.aoa - g.sur_broadside),
        doppler=-obs.range_rate / cfg.wavelength,
    )


def simulate_scene(scenario: Scenario, slots: Optional[int] = None, seed: Optional[int] = None,
                   include_target: bool = True) -> Scene:
    """Paths and truth for a scenario; slot samples are produced on demand by ``Scene.slot``."""
    cfg = scenario.radio
    g = scenario.geometry
    seed = scenario.seed if seed is None else int(seed)
    n_slots = scenario.slots if slots is None else int(slots)
    truth = build_truth(scenario, n_slots)

    tgt_amp = 10.0 ** (scenario.noise.sur_snr_db / 20.0)
    ref_amp = 10.0 ** (scenario.noise.ref_snr_db / 20.0)
    los_delay = g.baseline_len / SPEED_OF_LIGHT
    los_phase = _carrier_phase(cfg, los_delay)

    ref_paths = [ScattererPath("los", ref_amp * los_phase, los_delay, wrap_angle(g.ref_aoa - g.ref_broadside))]
    sur_paths = []
    if scenario.direct_path_excess_db is not None:
        amp = tgt_amp * 10.0 ** (scenario.direct_path_excess_db / 20.0)
        sur_paths.append(ScattererPath("los", amp * los_phase, los_delay, wrap_angle(g.ref_aoa - g.sur_broadside)))
    for c in scenario.clutter:
        q = np.asarray(c.position)
        delay = (np.hypot(*(q - g.tx)) + np.hypot(*(q - g.rx))) / SPEED_OF_LIGHT
        direction = math.atan2(q[1] - g.rx[1], q[0] - g.rx[0])
        phase = _carrier_phase(cfg, delay)
        sur_aoa = wrap_angle(direction - g.sur_broadside)
        if abs(sur_aoa) < np.pi / 2:
            sur_paths.append(ScattererPath("clutter", tgt_amp * 10 ** (c.excess_db / 20) * phase, delay, sur_aoa))
        ref_aoa = wrap_angle(direction - g.ref_broadside)
        if abs(ref_aoa) < np.pi / 2:
            ref_paths.append(ScattererPath("clutter", ref_amp * 10 ** (c.ref_excess_db / 20) * phase, delay, ref_aoa))

    amp = tgt_amp if include_target else 0.0
    targets = [target_path(z, g, cfg, amp) for z in truth.observations]
    for m, p in enumerate(targets):
        if not abs(p.aoa) < np.pi / 2:
            raise SimulationError(f"target leaves the surveillance FoV at slot {m}")
    return Scene(scenario, truth, ref_paths, sur_paths, targets, seed, Waveform(seed, cfg))
