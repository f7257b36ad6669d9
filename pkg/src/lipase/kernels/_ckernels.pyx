# cython: language_level=3
"""Compiled versions of the hot loops; see _fallback.py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, floor, M_PI

cnp.import_array()

DEF _ANCHOR = 256


def cfar_noise(double[:, ::1] mag, Py_ssize_t guard_l, Py_ssize_t guard_p,
               Py_ssize_t train_l, Py_ssize_t train_p):
    cdef Py_ssize_t n_rows = mag.shape[0], n_cols = mag.shape[1]
    cdef Py_ssize_t outer_l = guard_l + train_l, outer_p = guard_p + train_p
    cdef Py_ssize_t r, c, rr, lo, hi
    cdef double total
    cdef long cnt

    # circular prefix sums along Doppler: pre[r, k] = sum(mag[r, :k]), k in [0, n_cols]
    pre_arr = np.zeros((n_rows, n_cols + 1), dtype=np.float64)
    cdef double[:, ::1] pre = pre_arr
    for r in range(n_rows):
        for c in range(n_cols):
            pre[r, c + 1] = pre[r, c] + mag[r, c]

    mean_arr = np.empty((n_rows, n_cols), dtype=np.float64)
    count_arr = np.empty((n_rows, n_cols), dtype=np.int64)
    cdef double[:, ::1] mean = mean_arr
    cdef cnp.int64_t[:, ::1] count = count_arr

    for r in range(n_rows):
        for c in range(n_cols):
            total = 0.0
            cnt = 0
            lo = r - outer_l
            if lo < 0:
                lo = 0
            hi = r + outer_l
            if hi > n_rows - 1:
                hi = n_rows - 1
            for rr in range(lo, hi + 1):
                if rr >= r - guard_l and rr <= r + guard_l:
                    total += _wrap_sum(pre, rr, c - outer_p, c - guard_p - 1, n_cols)
                    total += _wrap_sum(pre, rr, c + guard_p + 1, c + outer_p, n_cols)
                    cnt += 2 * train_p
                else:
                    total += _wrap_sum(pre, rr, c - outer_p, c + outer_p, n_cols)
                    cnt += 2 * outer_p + 1
            count[r, c] = cnt
            if cnt > 0:
                mean[r, c] = total / cnt
            else:
                mean[r, c] = np.nan
    return mean_arr, count_arr


cdef inline double _wrap_sum(double[:, ::1] pre, Py_ssize_t row, Py_ssize_t a,
                             Py_ssize_t b, Py_ssize_t n) nogil:
    # inclusive column range [a, b] taken modulo n; requires b - a + 1 <= n
    cdef double s = 0.0
    if b < a:
        return 0.0
    while a < 0:
        a += n
        b += n
    if b < n:
        return pre[row, b + 1] - pre[row, a]
    if a >= n:
        a -= n
        b -= n
        return pre[row, b + 1] - pre[row, a]
    s = pre[row, n] - pre[row, a]
    s += pre[row, b - n + 1]
    return s


def caf_cells(signals, ref_hist, lags, dopplers, Py_ssize_t n_fft):
    cdef double complex[:, ::1] sig = np.ascontiguousarray(np.atleast_2d(signals), dtype=np.complex128)
    cdef double complex[::1] ref = np.ascontiguousarray(ref_hist, dtype=np.complex128)
    cdef cnp.int64_t[::1] lag_v = np.ascontiguousarray(lags, dtype=np.int64)
    cdef cnp.int64_t[::1] dop_v = np.ascontiguousarray(dopplers, dtype=np.int64)
    cdef Py_ssize_t k = sig.shape[0], n = sig.shape[1], n_cells = lag_v.shape[0]
    cdef Py_ssize_t hist = ref.shape[0] - n
    cdef Py_ssize_t i, j, cell, off
    cdef double complex ph, step, v, acc
    cdef double ang
    if hist < 0:
        raise ValueError("reference history shorter than the slot")
    out_arr = np.zeros((k, n_cells), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    w_arr = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] w = w_arr
    for cell in range(n_cells):
        if lag_v[cell] > hist or lag_v[cell] < 0:
            raise ValueError("lag outside the reference history")
        off = hist - lag_v[cell]
        ang = -2.0 * M_PI * <double>(dop_v[cell] % n_fft) / n_fft
        step = cos(ang) + 1j * sin(ang)
        for j in range(n):
            if j % _ANCHOR == 0:
                # re-anchor on the exact phase so the running phasor cannot drift
                ang = -2.0 * M_PI * <double>((dop_v[cell] * j) % n_fft) / n_fft
                ph = cos(ang) + 1j * sin(ang)
            v = ref[off + j]
            w[j] = ph * (v.real - 1j * v.imag)
            ph = ph * step
        for i in range(k):
            acc = 0.0
            for j in range(n):
                acc = acc + sig[i, j] * w[j]
            out[i, cell] = acc
    return out_arr


def lerp_uniform(wave, double start, double step, Py_ssize_t n):
    cdef double complex[::1] w = np.ascontiguousarray(wave, dtype=np.complex128)
    cdef Py_ssize_t m = w.shape[0], k, i0, i1
    cdef double pos, frac
    out_arr = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] out = out_arr
    if n == 0:
        return out_arr
    pos = start + step * (n - 1)
    if start < 0 or floor(pos) > m - 1 or (floor(pos) == m - 1 and pos != floor(pos)):
        raise IndexError("interpolation positions fall outside the waveform")
    for k in range(n):
        pos = start + step * k
        i0 = <Py_ssize_t>floor(pos)
        frac = pos - i0
        i1 = i0 + 1
        if i1 > m - 1:
            i1 = m - 1
        out[k] = w[i0] * (1.0 - frac) + w[i1] * frac
    return out_arr
