"""Numeric kernels with a numba path and a pure-numpy fallback.

Set ``VDTN_DISABLE_NUMBA=1`` to force the numpy implementations. Both
paths are always importable as ``nb_<name>`` / ``np_<name>`` so tests and
the benchmark can compare them directly; the bare names dispatch to
whichever path is active.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("VDTN_DISABLE_NUMBA", "") not in ("1", "true", "yes")


def _maybe_njit(fn):
    if HAVE_NUMBA:
        return njit(cache=True)(fn)
    return fn


# --- effective priorities -------------------------------------------------


def np_effective_priorities(base, enqueue, now, interval, step, floor):
    base = np.asarray(base, dtype=np.float64)
    waited = now - np.asarray(enqueue, dtype=np.int64)
    if np.any(waited < 0):
        raise ValueError("now precedes an enqueue time")
    aged = base - step * (waited // interval)
    return np.maximum(aged, floor)


@_maybe_njit
def _nb_effective_priorities(base, enqueue, now, interval, step, floor):
    out = np.empty(base.shape[0], dtype=np.float64)
    for i in range(base.shape[0]):
        waited = now - enqueue[i]
        if waited < 0:
            return out, False
        v = base[i] - step * (waited // interval)
        out[i] = v if v > floor else floor
    return out, True


def nb_effective_priorities(base, enqueue, now, interval, step, floor):
    out, ok = _nb_effective_priorities(
        np.ascontiguousarray(base, dtype=np.float64),
        np.ascontiguousarray(enqueue, dtype=np.int64),
        np.int64(now), np.int64(interval), np.float64(step), np.float64(floor),
    )
    if not ok:
        raise ValueError("now precedes an enqueue time")
    return out


# --- stable argsort for the compiled path ----------------------------------


@_maybe_njit
def _nb_before(a, b, c, i, j):
    if a[i] != a[j]:
        return a[i] < a[j]
    if b[i] != b[j]:
        return b[i] < b[j]
    return c[i] < c[j]


@_maybe_njit
def _nb_argsort3(a, b, c):
    """Stable bottom-up merge sort of indices by (a, b, c); numba's own mergesort is slow."""
    n = a.shape[0]
    src = np.arange(n)
    dst = np.empty(n, dtype=np.int64)
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            # already ordered runs (common for near-sorted input) are copied straight through
            if mid < hi and not _nb_before(a, b, c, src[mid], src[mid - 1]):
                for m in range(lo, hi):
                    dst[m] = src[m]
                continue
            while i < mid and j < hi:
                if _nb_before(a, b, c, src[j], src[i]):
                    dst[k] = src[j]
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    return src


# --- pop order (effective priority, enqueue time, id) ----------------------


def np_priority_order(eff, enqueue, ids):
    # lexsort keys: last one is primary
    return np.lexsort((np.asarray(ids), np.asarray(enqueue), np.asarray(eff)))


@_maybe_njit
def _nb_priority_order(eff, enqueue, ids):
    return _nb_argsort3(eff, enqueue, ids)


def nb_priority_order(eff, enqueue, ids):
    return _nb_priority_order(
        np.ascontiguousarray(eff, dtype=np.float64),
        np.ascontiguousarray(enqueue, dtype=np.int64),
        np.ascontiguousarray(ids, dtype=np.int64),
    )


# --- channel capacity window ---------------------------------------------


def _served_knots(starts, ends, sizes):
    """Knot times and cumulative served data for piecewise-linear service."""
    dur = ends - starts
    rate = np.where(dur > 0, sizes / np.where(dur > 0, dur, 1.0), 0.0)
    times = np.concatenate([starts, ends])
    slope = np.concatenate([rate, -rate])
    order = np.argsort(times, kind="mergesort")
    times, slope = times[order], slope[order]
    cum = np.zeros(times.size)
    cur = np.cumsum(slope)
    cum[1:] = np.cumsum(cur[:-1] * np.diff(times))
    return times, cum


def np_max_window_served(starts, ends, sizes, window):
    """Most data served in any window of length ``window``.

    Each interval serves its size at a constant rate. The cumulative curve
    is piecewise linear, so the maximum has a window edge on a knot.
    """
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    if starts.size == 0:
        return 0.0
    times, cum = _served_knots(starts, ends, sizes)
    cand = np.concatenate([times, times - window])
    covered = np.interp(cand + window, times, cum) - np.interp(cand, times, cum)
    return float(covered.max())


@_maybe_njit
def _nb_interp_walk(x, xp, fp, j):
    """np.interp at ``x`` for ascending queries; ``j`` is the cursor from the previous query."""
    n = xp.shape[0]
    if x <= xp[0]:
        return fp[0], j
    if x >= xp[n - 1]:
        return fp[n - 1], j
    while xp[j + 1] <= x:
        j += 1
    lo, hi = j, j + 1
    return fp[lo] + (fp[hi] - fp[lo]) * (x - xp[lo]) / (xp[hi] - xp[lo]), j


@_maybe_njit
def _nb_max_window_served(starts, ends, sizes, window):
    n = starts.shape[0]
    times = np.empty(2 * n)
    slope = np.empty(2 * n)
    for i in range(n):
        d = ends[i] - starts[i]
        r = sizes[i] / d if d > 0 else 0.0
        times[i] = starts[i]
        times[n + i] = ends[i]
        slope[i] = r
        slope[n + i] = -r
    order = _nb_argsort3(times, slope * 0.0, np.zeros(2 * n, dtype=np.int64))
    t = times[order]
    s = slope[order]
    cum = np.zeros(2 * n)
    cur = 0.0
    for i in range(1, 2 * n):
        cur += s[i - 1]
        cum[i] = cum[i - 1] + cur * (t[i] - t[i - 1])
    # window starts at each knot and each knot minus the window; both sequences ascend
    best = 0.0
    j1 = j2 = j3 = j4 = 0
    for i in range(2 * n):
        hi1, j1 = _nb_interp_walk(t[i] + window, t, cum, j1)
        lo1, j2 = _nb_interp_walk(t[i], t, cum, j2)
        hi2, j3 = _nb_interp_walk(t[i], t, cum, j3)
        lo2, j4 = _nb_interp_walk(t[i] - window, t, cum, j4)
        best = max(best, hi1 - lo1, hi2 - lo2)
    return best


def nb_max_window_served(starts, ends, sizes, window):
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    if starts.size == 0:
        return 0.0
    return float(_nb_max_window_served(
        starts,
        np.ascontiguousarray(ends, dtype=np.float64),
        np.ascontiguousarray(sizes, dtype=np.float64),
        float(window),
    ))


# --- z-score standardization ------------------------------------------------


def np_standardize_columns(x):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    out = np.zeros_like(x)
    nz = std > 0
    out[:, nz] = (x[:, nz] - mean[nz]) / std[nz]
    return out


@_maybe_njit
def _nb_standardize_columns(x):
    n, m = x.shape
    out = np.zeros((n, m), dtype=np.float64)
    for j in range(m):
        mean = 0.0
        for i in range(n):
            mean += x[i, j]
        mean /= n
        var = 0.0
        for i in range(n):
            d = x[i, j] - mean
            var += d * d
        std = np.sqrt(var / n)
        if std > 0.0:
            for i in range(n):
                out[i, j] = (x[i, j] - mean) / std
    return out


def nb_standardize_columns(x):
    return _nb_standardize_columns(np.ascontiguousarray(x, dtype=np.float64))


# --- per-VM busy totals -------------------------------------------------------


def np_busy_per_slot(slot, starts, ends, n_slots):
    slot = np.asarray(slot, dtype=np.int64)
    dur = np.asarray(ends, dtype=np.float64) - np.asarray(starts, dtype=np.float64)
    return np.bincount(slot, weights=dur, minlength=n_slots).astype(np.float64)


@_maybe_njit
def _nb_busy_per_slot(slot, starts, ends, n_slots):
    out = np.zeros(n_slots, dtype=np.float64)
    for i in range(slot.shape[0]):
        out[slot[i]] += ends[i] - starts[i]
    return out


def nb_busy_per_slot(slot, starts, ends, n_slots):
    return _nb_busy_per_slot(
        np.ascontiguousarray(slot, dtype=np.int64),
        np.ascontiguousarray(starts, dtype=np.float64),
        np.ascontiguousarray(ends, dtype=np.float64),
        int(n_slots),
    )


if USE_NUMBA:
    effective_priorities = nb_effective_priorities
    priority_order = nb_priority_order
    max_window_served = nb_max_window_served
    standardize_columns = nb_standardize_columns
    busy_per_slot = nb_busy_per_slot
else:
    effective_priorities = np_effective_priorities
    priority_order = np_priority_order
    max_window_served = np_max_window_served
    standardize_columns = np_standardize_columns
    busy_per_slot = np_busy_per_slot

BACKEND = "numba" if USE_NUMBA else "numpy"
