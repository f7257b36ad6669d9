"""Pure numpy versions of the compiled kernels (same signatures and results)."""

import numpy as np


def cfar_noise(mag, guard_l, guard_p, train_l, train_p):
    """Mean of the training cells around every cell of a magnitude map.

    Windows are clipped at the first/last row (range) and wrap around the
    columns (Doppler). Returns ``(mean, count)``; ``mean`` is NaN where the
    clipped training set is empty.
    """
    mag = np.ascontiguousarray(mag, dtype=np.float64)
    n_rows, n_cols = mag.shape
    outer_l = guard_l + train_l
    outer_p = guard_p + train_p

    def box_sums(values, half_l, half_p):
        # rows padded with zeros (clipping), columns padded by wrapping
        padded = np.pad(values, ((half_l, half_l), (0, 0)))
        padded = np.concatenate([padded[:, n_cols - half_p:], padded, padded[:, :half_p]], axis=1)
        sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
        sat[1:, 1:] = padded.cumsum(0).cumsum(1)
        h = 2 * half_l + 1
        w = 2 * half_p + 1
        return sat[h:h + n_rows, w:w + n_cols] - sat[:n_rows, w:w + n_cols] - sat[h:h + n_rows, :n_cols] + sat[:n_rows, :n_cols]

    ones = np.ones_like(mag)
    total = box_sums(mag, outer_l, outer_p) - box_sums(mag, guard_l, guard_p)
    count = box_sums(ones, outer_l, outer_p) - box_sums(ones, guard_l, guard_p)
    count = np.rint(count).astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return mean, count


def caf_cells(signals, ref_hist, lags, dopplers, n_fft):
    """Cross-ambiguity values at selected (lag, Doppler-bin) cells.

    ``signals`` is (k, N); ``ref_hist`` holds the reference with ``max(lags)``
    or more samples of history in front, laid out so that ``ref_hist[-N:]`` is
    the current slot.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=np.complex128))
    ref_hist = np.asarray(ref_hist, dtype=np.complex128)
    n = signals.shape[1]
    hist = ref_hist.shape[0] - n
    idx = np.arange(n)
    out = np.empty((signals.shape[0], len(lags)), dtype=np.complex128)
    for c, (lag, p) in enumerate(zip(lags, dopplers)):
        ref = ref_hist[hist - lag: hist - lag + n]
        phasor = np.exp(-2j * np.pi * p * idx / n_fft)
        out[:, c] = signals @ (np.conj(ref) * phasor)
    return out


def lerp_uniform(wave, start, step, n):
    """Linearly interpolate ``wave`` at positions ``start + k*step``, k < n."""
    wave = np.asarray(wave, dtype=np.complex128)
    pos = start + step * np.arange(n, dtype=np.float64)
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    if n and (i0[0] < 0 or i0[-1] + 1 >= wave.shape[0] + (frac[-1] == 0)):
        raise IndexError("interpolation positions fall outside the waveform")
    i1 = np.minimum(i0 + 1, wave.shape[0] - 1)
    return wave[i0] * (1.0 - frac) + wave[i1] * frac
