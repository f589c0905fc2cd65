"""Compiled inner loops for decoding: separable upsampling and peak scan.

Kept free of package types on purpose; everything here takes and returns
plain ndarrays so the compiled signatures stay simple.  Determinism does not
depend on the thread count: the parallel loops partition disjoint output
rows and never reduce across threads.
"""

from __future__ import annotations

import os

import numpy as np
from numba import config as _numba_config
from numba import njit, prange, set_num_threads


def _apply_thread_cap():
    cap = os.environ.get("GOG_THREADS")
    if not cap:
        return
    try:
        n = int(cap)
    except ValueError:
        return
    if n >= 1:
        set_num_threads(min(n, _numba_config.NUMBA_NUM_THREADS))


_apply_thread_cap()


def keys_weights(t: float) -> np.ndarray:
    """Cubic convolution weights (a = -0.5) for taps at offsets -1..2."""
    a = -0.5

    def k(s):
        s = abs(s)
        if s <= 1.0:
            return (a + 2.0) * s ** 3 - (a + 3.0) * s ** 2 + 1.0
        if s < 2.0:
            return a * (s ** 3 - 5.0 * s ** 2 + 8.0 * s - 4.0)
        return 0.0

    return np.array([k(t + 1.0), k(t), k(1.0 - t), k(2.0 - t)])


def linear_weights(t: float) -> np.ndarray:
    """Two-point linear weights padded to the same 4-tap layout."""
    return np.array([0.0, 1.0 - t, t, 0.0])


def plan_axis(n_in: int, n_out: int, stride: int, interpolation: str = "bicubic"):
    """Precompute per-output-sample tap indices and weights for one axis.

    Output sample x lies at source coordinate (x - stride/2 + 0.5) / stride,
    so cell centers map exactly onto themselves and stride 1 is the
    identity.  Taps outside the grid clamp to the border (edge replication).
    """
    u = (np.arange(n_out) - stride / 2.0 + 0.5) / stride
    i0 = np.floor(u).astype(np.int64)
    t = u - i0
    idx = np.clip(i0[:, None] + np.arange(-1, 3)[None, :], 0, n_in - 1).astype(np.int32)
    if interpolation == "bicubic":
        w = np.stack([keys_weights(tt) for tt in t])
    elif interpolation == "bilinear":
        w = np.stack([linear_weights(tt) for tt in t])
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return idx, np.ascontiguousarray(w.astype(np.float32))


@njit(cache=True, parallel=True, nogil=True)
def upsample_kernel(grid, idx_x, w_x, idx_y, w_y):  # pragma: no cover - compiled
    C, Hg, Wg = grid.shape
    Wo = idx_x.shape[0]
    Ho = idx_y.shape[0]
    tmp = np.empty((C, Hg, Wo), dtype=np.float32)
    for ch in prange(C * Hg):
        c = ch // Hg
        r = ch % Hg
        row = grid[c, r]
        out = tmp[c, r]
        for x in range(Wo):
            acc = np.float32(0.0)
            for m in range(4):
                acc += w_x[x, m] * row[idx_x[x, m]]
            out[x] = acc
    full = np.empty((C, Ho, Wo), dtype=np.float32)
    for cy in prange(C * Ho):
        c = cy // Ho
        y = cy % Ho
        r0 = tmp[c, idx_y[y, 0]]
        r1 = tmp[c, idx_y[y, 1]]
        r2 = tmp[c, idx_y[y, 2]]
        r3 = tmp[c, idx_y[y, 3]]
        w0 = w_y[y, 0]
        w1 = w_y[y, 1]
        w2 = w_y[y, 2]
        w3 = w_y[y, 3]
        out = full[c, y]
        for x in range(Wo):
            out[x] = w0 * r0[x] + w1 * r1[x] + w2 * r2[x] + w3 * r3[x]
    return full


@njit(cache=True, parallel=True, nogil=True)
def collect_peaks(full, thresh, radius, cap):  # pragma: no cover - compiled
    """One-pass local-maximum scan.

    A pixel survives if its value meets thresh and dominates its window:
    strictly greater than neighbors that precede it in row-major order,
    greater-or-equal to the rest.  On a plateau of equal values only the
    lexicographically first (smallest y, then x) pixel survives.  Each
    channel writes at most cap peaks; counts reports how many it found so
    the caller can re-run with a larger cap on overflow.
    """
    C, H, W = full.shape
    coords = np.empty((C, cap, 2), dtype=np.int32)
    scores = np.empty((C, cap), dtype=np.float32)
    counts = np.zeros(C, dtype=np.int64)
    for c in prange(C):
        plane = full[c]
        n = 0
        for y in range(H):
            row = plane[y]
            for x in range(W):
                v = row[x]
                if v < thresh:
                    continue
                ok = True
                for dy in range(-radius, radius + 1):
                    yy = y + dy
                    if yy < 0 or yy >= H:
                        continue
                    nrow = plane[yy]
                    for dx in range(-radius, radius + 1):
                        if dy == 0 and dx == 0:
                            continue
                        xx = x + dx
                        if xx < 0 or xx >= W:
                            continue
                        nv = nrow[xx]
                        if dy < 0 or (dy == 0 and dx < 0):
                            if not (v > nv):
                                ok = False
                                break
                        else:
                            if not (v >= nv):
                                ok = False
                                break
                    if not ok:
                        break
                if ok:
                    if n < cap:
                        coords[c, n, 0] = y
                        coords[c, n, 1] = x
                        scores[c, n] = v
                    n += 1
        counts[c] = n
    return coords, scores, counts
