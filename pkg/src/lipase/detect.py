"""Per-slot detection chain.

Reference beamforming, a surveillance beam bank, least-squares clutter
cancellation, cross-ambiguity maps, CA-CFAR with connected-component
clustering, interferometric AoA search and observation construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft
import scipy.linalg
from scipy import ndimage

from . import kernels
from .config import CcConfig, CfarConfig, RadioConfig
from .geometry import SPEED_OF_LIGHT, Geometry, Observation, wrap_angle
from .simulate import ArraySlot

log = logging.getLogger(__name__)


class DetectionError(ValueError):
    pass


class RankDeficientError(DetectionError):
    """The clutter regressor matrix has (numerically) dependent columns."""


def steering_vector(phi: float, n: int, spacing: float = 0.5) -> np.ndarray:
    """ULA response ``exp(-j 2 pi k d sin(phi))`` for k = 0..n-1 (``d`` in wavelengths)."""
    if n < 1:
        raise ValueError("array needs at least one element")
    return np.exp(-2j * np.pi * spacing * np.arange(n) * np.sin(phi))


def beam_grid(n_sur: int) -> np.ndarray:
    """Beam directions ``arcsin(2(k-1)/N - 1)`` for k = 1..N, spaced uniformly in sine."""
    if n_sur < 2:
        raise ValueError("beam grid needs at least two beams")
    k = np.arange(1, n_sur + 1)
    return np.arcsin(2.0 * (k - 1) / n_sur - 1.0)


def beamform(slot, weight: np.ndarray) -> np.ndarray:
    """``w^H y[n]`` for every sample of a slot (``ArraySlot`` or (antennas, N) array)."""
    samples = slot.samples if isinstance(slot, ArraySlot) else np.asarray(slot)
    weight = np.asarray(weight)
    if weight.ndim != 1 or weight.shape[0] != samples.shape[0]:
        raise DetectionError(
            f"weight length {weight.shape} does not match {samples.shape[0]} antennas"
        )
    return np.conj(weight) @ samples


# -- clutter cancellation ---------------------------------------------------------


class ClutterCanceller:
    """Least-squares projection onto the complement of the clutter subspace.

    The regressor holds the reference delayed by 0..L samples and shifted by
    -P..P Doppler bins. It is factored once (thin QR) and the residual
    ``w - Q Q^H w`` is formed without materialising the N x N projector.
    """

    def __init__(self, ref_history: np.ndarray, cc: CcConfig, n: Optional[int] = None,
                 rank_tol: float = 1e-10):
        ref_history = np.asarray(ref_history, dtype=np.complex128)
        L, P = cc.max_delay_samples, cc.max_doppler_bins
        n = ref_history.shape[0] - L if n is None else n
        if ref_history.shape[0] < n + L:
            raise DetectionError("reference history must cover samples -L..N-1")
        if cc.n_columns >= n:
            raise DetectionError("clutter regressor has more columns than samples")
        hist = ref_history.shape[0] - n
        idx = np.arange(n)
        omega = np.empty((n, cc.n_columns), dtype=np.complex128)
        for p in range(-P, P + 1):
            shift = np.exp(2j * np.pi * p * idx / n) if p else None
            for lag in range(L + 1):
                col = ref_history[hist - lag: hist - lag + n]
                omega[:, (p + P) * (L + 1) + lag] = col if shift is None else col * shift
        q, r = scipy.linalg.qr(omega, mode="economic", overwrite_a=True, check_finite=False)
        diag = np.abs(np.diag(r))
        if diag.size and (diag.max() == 0.0 or diag.min() < rank_tol * diag.max()):
            raise RankDeficientError("clutter regressor is rank deficient (degenerate reference?)")
        self.q = q
        self.n = n

    def __call__(self, signals: np.ndarray) -> np.ndarray:
        signals = np.asarray(signals, dtype=np.complex128)
        single = signals.ndim == 1
        y = np.atleast_2d(signals)
        if y.shape[1] != self.n:
            raise DetectionError("sequence length does not match the regressor")
        coeff = np.conj(self.q.T) @ y.T
        resid = y - (self.q @ coeff).T
        return resid[0] if single else resid


def clutter_cancel(sur_seq: np.ndarray, ref_history: np.ndarray, cc: CcConfig) -> np.ndarray:
    """Residual of ``sur_seq`` after removing its least-squares fit on the clutter regressors.

    ``ref_history`` covers samples -L..N-1 of the beamformed reference.
    """
    n = np.shape(sur_seq)[-1]
    return ClutterCanceller(ref_history, cc, n)(sur_seq)


# -- range-Doppler maps -----------------------------------------------------------


@dataclass
class RdMap:
    values: np.ndarray  # (L+1, n_doppler) complex
    delay_axis: np.ndarray  # lag in samples
    doppler_axis: np.ndarray  # Doppler bin index p (frequency p * fs / N)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def caf(sur_seq: np.ndarray, ref_history: np.ndarray, max_delay: int, doppler_bins,
        workers: Optional[int] = None) -> RdMap:
    """Cross-ambiguity of ``sur_seq`` against the delayed reference.

    ``A[l, p] = sum_n sur[n] conj(ref[n - l]) exp(-j 2 pi p n / N)`` for
    ``0 <= l <= max_delay`` and the requested Doppler bins, one length-N FFT
    per delay row.
    """
    sur_seq = np.asarray(sur_seq, dtype=np.complex128)
    ref_history = np.asarray(ref_history, dtype=np.complex128)
    n = sur_seq.shape[0]
    hist = ref_history.shape[0] - n
    if hist < max_delay:
        raise DetectionError("reference history shorter than the maximum delay")
    bins = np.asarray(doppler_bins, dtype=np.int64)
    if bins.size == 0 or bins.min() < -n // 2 or bins.max() >= n - n // 2:
        raise DetectionError("Doppler window outside [-N/2, N/2)")
    values = np.empty((max_delay + 1, bins.size), dtype=np.complex128)
    cols = np.mod(bins, n)
    for lag in range(max_delay + 1):
        prod = sur_seq * np.conj(ref_history[hist - lag: hist - lag + n])
        values[lag] = scipy.fft.fft(prod, workers=workers)[cols]
    return RdMap(values, np.arange(max_delay + 1), bins)


def caf_direct(sur_seq, ref_history, lags, dopplers) -> np.ndarray:
    """CAF at explicit cells by direct summation, for one or several sequences."""
    sur = np.atleast_2d(np.asarray(sur_seq, dtype=np.complex128))
    return kernels.caf_cells(sur, ref_history, np.asarray(lags), np.asarray(dopplers), sur.shape[1])


# -- CFAR and clustering ----------------------------------------------------------


def cfar_mask(rd: RdMap, cfg: CfarConfig) -> np.ndarray:
    """Boolean detection mask: ``|A| >= alpha * mean(|A| over training cells)``.

    Training windows are clipped at the first and last delay rows and wrap
    around the Doppler axis of the map.
    """
    mag = np.ascontiguousarray(rd.magnitude, dtype=np.float64)
    p_guard, l_guard = cfg.guard
    p_train, l_train = cfg.train
    if mag.shape[1] < 2 * (p_guard + p_train) + 1:
        raise DetectionError("map is narrower than the CFAR window in Doppler")
    noise, count = kernels.cfar_noise(mag, l_guard, p_guard, l_train, p_train)
    if np.any(count == 0):
        raise DetectionError("CFAR training set is empty after edge clipping")
    return mag >= cfg.alpha * noise


def cfar(rd: RdMap, cfg: CfarConfig) -> set:
    """Detected cells as a set of ``(lag, doppler_bin)`` pairs."""
    rows, cols = np.nonzero(cfar_mask(rd, cfg))
    return {(int(rd.delay_axis[r]), int(rd.doppler_axis[c])) for r, c in zip(rows, cols)}


@dataclass(frozen=True)
class Candidate:
    lag: int
    doppler_bin: int
    beam: int
    magnitude: float


def cluster(masks, maps) -> list:
    """Merge per-beam detections into candidates.

    The union of the beam masks is split into 8-connected components; each
    component is reduced to its strongest (beam, cell) response.
    """
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if not masks:
        return []
    union = np.logical_or.reduce(masks)
    labels, n_comp = ndimage.label(union, structure=np.ones((3, 3), dtype=int))
    if n_comp == 0:
        return []
    mags = np.stack([np.where(m, rd.magnitude, -np.inf) for m, rd in zip(masks, maps)])
    out = []
    for comp in range(1, n_comp + 1):
        sel = labels == comp
        masked = np.where(sel[None, :, :], mags, -np.inf)
        beam, r, c = np.unravel_index(np.argmax(masked), masked.shape)
        rd = maps[beam]
        out.append(Candidate(int(rd.delay_axis[r]), int(rd.doppler_axis[c]), int(beam),
                             float(masked[beam, r, c])))
    out.sort(key=lambda cand: (cand.lag, cand.doppler_bin))
    return out


# -- AoA and observations -----------------------------------------------------------


def aoa_grid(step: float) -> np.ndarray:
    """Search directions ``k * step`` strictly inside (-pi/2, pi/2)."""
    kmax = int(np.ceil((np.pi / 2) / step)) - 1
    if (kmax + 1) * step < np.pi / 2:
        kmax += 1
    return np.arange(-kmax, kmax + 1) * step


def aoa_from_snapshot(snapshot: np.ndarray, grid_step: float, spacing: float = 0.5) -> float:
    """Argmax over the search grid of ``|a^H steering(theta)|``."""
    snapshot = np.asarray(snapshot)
    grid = aoa_grid(grid_step)
    k = np.arange(snapshot.shape[0])
    steer = np.exp(-2j * np.pi * spacing * np.outer(np.sin(grid), k))
    objective = np.abs(steer @ np.conj(snapshot))
    return float(grid[np.argmax(objective)])


def estimate_aoa(antenna_residuals: np.ndarray, ref_history: np.ndarray, candidate,
                 grid_step: float, spacing: float = 0.5, sur_broadside: float = 0.0) -> float:
    """AoA of a candidate from the per-antenna CAF responses at its cell.

    Returns ``sur_broadside`` plus the array-relative estimate; leave the
    default of 0 to get the array-relative angle.
    """
    lag, p = (candidate.lag, candidate.doppler_bin) if isinstance(candidate, Candidate) else candidate
    snapshot = caf_direct(antenna_residuals, ref_history, [lag], [p])[:, 0]
    return sur_broadside + aoa_from_snapshot(snapshot, grid_step, spacing)


def to_observation(candidate, aoa: float, geometry: Geometry, cfg: RadioConfig) -> Observation:
    """Bistatic range, range rate and absolute AoA from a (lag, Doppler) cell.

    ``aoa`` is relative to the surveillance-array broadside.
    """
    lag, p = (candidate.lag, candidate.doppler_bin) if isinstance(candidate, Candidate) else candidate
    return Observation(
        bistatic_range=lag * SPEED_OF_LIGHT / cfg.sample_rate + geometry.baseline_len,
        range_rate=-cfg.wavelength * p * cfg.sample_rate / cfg.slot_samples,
        aoa=wrap_angle(geometry.sur_broadside + aoa),
    )


@dataclass(frozen=True)
class Detection:
    slot: int
    observation: Observation
    beam: int = -1
    lag: int = -1
    doppler_bin: int = 0
    magnitude: float = 0.0


class Detector:
    """Runs the detection chain slot by slot.

    The reference beam of the previous slot supplies the L samples of history
    that the first delay rows need; before the first slot that history is zero.
    """

    def __init__(self, radio: RadioConfig, cc: CcConfig, cfar_cfg: CfarConfig, geometry: Geometry,
                 aoa_grid_step: float = np.radians(0.1), workers: Optional[int] = None):
        self.radio = radio
        self.cc = cc
        self.cfar_cfg = cfar_cfg
        self.geometry = geometry
        self.aoa_grid_step = aoa_grid_step
        self.workers = workers
        self.w_ref = steering_vector(geometry.ref_aoa - geometry.ref_broadside,
                                     radio.ref_array_size, radio.element_spacing)
        self.beams = beam_grid(radio.sur_array_size)
        self.w_sur = np.stack([steering_vector(b, radio.sur_array_size, radio.element_spacing)
                               for b in self.beams])
        self.window_bins = int(np.floor(cfar_cfg.doppler_window * radio.cit + 1e-9))
        self.pad_bins = cfar_cfg.guard[0] + cfar_cfg.train[0]

    def reference_beam(self, ref: ArraySlot) -> np.ndarray:
        return beamform(ref, self.w_ref)

    def history(self, ref_beam: np.ndarray, prev_ref_beam: Optional[np.ndarray]) -> np.ndarray:
        L = self.cc.max_delay_samples
        if prev_ref_beam is None:
            head = np.zeros(L, dtype=np.complex128)
        else:
            head = prev_ref_beam[prev_ref_beam.shape[0] - L:] if L else prev_ref_beam[:0]
        return np.concatenate([head, ref_beam])

    def process(self, ref: ArraySlot, sur: ArraySlot,
                prev_ref: Optional[ArraySlot] = None) -> list:
        n = self.radio.slot_samples
        if ref.samples.shape != (self.radio.ref_array_size, n):
            raise DetectionError(f"reference slot has shape {ref.samples.shape}")
        if sur.samples.shape != (self.radio.sur_array_size, n):
            raise DetectionError(f"surveillance slot has shape {sur.samples.shape}")
        m = sur.slot_index
        ref_beam = self.reference_beam(ref)
        prev_beam = None if prev_ref is None else self.reference_beam(prev_ref)
        ref_hist = self.history(ref_beam, prev_beam)

        raw = np.conj(self.w_sur) @ sur.samples
        canceller = ClutterCanceller(ref_hist, self.cc, n)
        cleaned = canceller(np.vstack([raw, sur.samples]))
        beams_cf = cleaned[: len(self.beams)]
        antennas_cf = cleaned[len(self.beams):]
        del canceller, cleaned

        half = self.window_bins + self.pad_bins
        half = min(half, n // 2 - 1)
        bins = np.arange(-half, half + 1)
        keep = np.abs(bins) <= self.window_bins
        maps, masks = [], []
        for k in range(len(self.beams)):
            rd = caf(beams_cf[k], ref_hist, self.cc.max_delay_samples, bins, self.workers)
            mask = cfar_mask(rd, self.cfar_cfg)
            maps.append(RdMap(rd.values[:, keep], rd.delay_axis, rd.doppler_axis[keep]))
            masks.append(mask[:, keep])

        out = []
        for cand in cluster(masks, maps):
            theta = estimate_aoa(antennas_cf, ref_hist, cand, self.aoa_grid_step,
                                 self.radio.element_spacing)
            z = to_observation(cand, theta, self.geometry, self.radio)
            out.append(Detection(m, z, cand.beam, cand.lag, cand.doppler_bin, cand.magnitude))
        log.debug("slot %d: %d candidates", m, len(out))
        return out


def detect_slot(ref: ArraySlot, sur: ArraySlot, radio: RadioConfig, cc: CcConfig,
                cfar_cfg: CfarConfig, geometry: Geometry, prev_ref: Optional[ArraySlot] = None,
                aoa_grid_step: float = np.radians(0.1)) -> list:
    """Observations detected in one slot (see ``Detector``)."""
    return Detector(radio, cc, cfar_cfg, geometry, aoa_grid_step).process(ref, sur, prev_ref)


def inject_faults(detections_per_slot, drop_prob: float, false_alarm_rate: float,
                  radio: RadioConfig, cc: CcConfig, cfar_cfg: CfarConfig, geometry: Geometry,
                  rng: np.random.Generator) -> list:
    """Drop detections at random and add uniformly scattered false alarms.

    False alarms are drawn per slot from a Poisson law whose mean makes them
    ``false_alarm_rate`` of all surviving observations on average; they lie on
    the detection grid (integer lag and Doppler bin) with a uniform AoA inside
    the surveillance field of view and carry ``beam = -1``.
    """
    kept = [[d for d in dets if rng.random() >= drop_prob] for dets in detections_per_slot]
    n_true = sum(len(d) for d in kept)
    n_slots = max(len(kept), 1)
    lam = false_alarm_rate / (1.0 - false_alarm_rate) * n_true / n_slots if false_alarm_rate else 0.0
    window = int(np.floor(cfar_cfg.doppler_window * radio.cit + 1e-9))
    out = []
    for m, dets in enumerate(kept):
        slot = m
        extra = []
        for _ in range(rng.poisson(lam) if lam > 0 else 0):
            lag = int(rng.integers(0, cc.max_delay_samples + 1))
            p = int(rng.integers(-window, window + 1))
            theta = float(rng.uniform(-np.pi / 2, np.pi / 2))
            extra.append(Detection(slot, to_observation((lag, p), theta, geometry, radio), -1, lag, p, 0.0))
        out.append(dets + extra)
    return out
