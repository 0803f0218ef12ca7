from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdtn import kernels


def test_backend_is_named():
    assert kernels.BACKEND in ("numba", "numpy")


def test_env_flag_selects_numpy():
    env = dict(os.environ, VDTN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from vdtn import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_max_window_served_examples():
    # two back-to-back transfers of 8 units over 2 ticks each, window 3
    assert kernels.np_max_window_served([0, 2], [2, 4], [8, 8], 3) == 12.0
    assert kernels.np_max_window_served([], [], [], 5) == 0.0


def test_effective_priorities_clock_check():
    with pytest.raises(ValueError):
        kernels.np_effective_priorities(np.array([35.0]), np.array([10]), 5, 100, 1.0, 11.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(11, 35), st.integers(0, 5000), st.integers(0, 10**6)),
                min_size=1, max_size=200, unique_by=lambda t: t[2]),
       st.integers(0, 5000))
def test_numba_and_numpy_agree_on_ordering(rows, extra):
    base = np.array([r[0] for r in rows], dtype=np.float64)
    enq = np.array([r[1] for r in rows], dtype=np.int64)
    ids = np.array([r[2] for r in rows], dtype=np.int64)
    now = int(enq.max()) + extra
    e_np = kernels.np_effective_priorities(base, enq, now, 100, 1.0, 11.0)
    e_nb = kernels.nb_effective_priorities(base, enq, now, 100, 1.0, 11.0)
    assert np.array_equal(e_np, e_nb)
    assert np.array_equal(kernels.np_priority_order(e_np, enq, ids), kernels.nb_priority_order(e_nb, enq, ids))
    keys = sorted(range(len(rows)), key=lambda i: (e_np[i], enq[i], ids[i]))
    assert list(kernels.np_priority_order(e_np, enq, ids)) == keys


spans = st.lists(st.tuples(st.integers(0, 500), st.integers(1, 20), st.integers(1, 40)), max_size=60)


@settings(max_examples=60, deadline=None)
@given(spans, st.integers(1, 80))
def test_numba_and_numpy_agree_on_windows(rows, window):
    starts = np.array([s for s, _, _ in rows], dtype=np.float64)
    ends = starts + np.array([d for _, d, _ in rows], dtype=np.float64)
    sizes = np.array([z for _, _, z in rows], dtype=np.float64)
    a = kernels.np_max_window_served(starts, ends, sizes, window)
    b = kernels.nb_max_window_served(starts, ends, sizes, window)
    assert a == pytest.approx(b, abs=1e-9)
    # brute force over integer window starts (knots are integer here)
    grid = np.arange(-window, 521)
    def served(t):
        frac = np.clip((t - starts) / (ends - starts), 0, 1)
        return float((frac * sizes).sum())
    brute = max((served(t + window) - served(t) for t in grid), default=0.0)
    assert a == pytest.approx(brute, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3), min_size=2, max_size=40))
def test_numba_and_numpy_agree_on_standardize(rows):
    x = np.array(rows, dtype=np.float64)
    assert np.allclose(kernels.np_standardize_columns(x), kernels.nb_standardize_columns(x), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 100), st.integers(0, 30)), max_size=50))
def test_numba_and_numpy_agree_on_busy(rows):
    slot = np.array([r[0] for r in rows], dtype=np.int64)
    start = np.array([r[1] for r in rows], dtype=np.float64)
    end = start + np.array([r[2] for r in rows], dtype=np.float64)
    a = kernels.np_busy_per_slot(slot, start, end, 5)
    b = kernels.nb_busy_per_slot(slot, start, end, 5)
    assert np.array_equal(a, b)
