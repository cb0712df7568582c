"""Compiled inner loops of the rasterizer.

All kernels are nopython + nogil so the renderer can fan work out over
Python threads (tile bands within one image, or whole poses in a batch)
while each kernel runs single-threaded and deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# a contribution is treated as zero beyond 3 sigma; keeps per-pixel results
# independent of tile size and thread count
CUTOFF_QF = 9.0


@njit(cache=True, nogil=True)
def build_tile_lists(rects, width, height, tile_size):
    """Bucket splats (given in composite order) into the tiles their
    screen rect touches. Returns (starts, items) in CSR layout; each tile's
    item list preserves the input order."""
    n = rects.shape[0]
    ntx = (width + tile_size - 1) // tile_size
    nty = (height + tile_size - 1) // tile_size
    counts = np.zeros(ntx * nty + 1, dtype=np.int64)
    for i in range(n):
        tx0 = rects[i, 0] // tile_size
        ty0 = rects[i, 1] // tile_size
        tx1 = rects[i, 2] // tile_size
        ty1 = rects[i, 3] // tile_size
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * ntx + tx + 1] += 1
    starts = np.cumsum(counts)
    items = np.empty(starts[-1], dtype=np.int64)
    cursor = starts[:-1].copy()
    for i in range(n):
        tx0 = rects[i, 0] // tile_size
        ty0 = rects[i, 1] // tile_size
        tx1 = rects[i, 2] // tile_size
        ty1 = rects[i, 3] // tile_size
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * ntx + tx
                items[cursor[t]] = i
                cursor[t] += 1
    return starts, items


@njit(cache=True, nogil=True)
def composite_tiles(ty_begin, ty_end, width, height, tile_size,
                    means2d, conics, colors, alphas,
                    tile_starts, tile_items, background, term, out):
    """Front-to-back alpha compositing of the tile rows [ty_begin, ty_end).

    For each pixel: weight g = exp(-0.5 d^T Sigma'^-1 d), contribution
    color * alpha * g * T, transmittance T *= (1 - alpha * g), stopping once
    T < term; the remaining T is filled with the background color.
    """
    ntx = (width + tile_size - 1) // tile_size
    for ty in range(ty_begin, ty_end):
        y_end = min((ty + 1) * tile_size, height)
        for tx in range(ntx):
            t = ty * ntx + tx
            s0 = tile_starts[t]
            s1 = tile_starts[t + 1]
            x_end = min((tx + 1) * tile_size, width)
            for py in range(ty * tile_size, y_end):
                for px in range(tx * tile_size, x_end):
                    trans = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    for k in range(s0, s1):
                        i = tile_items[k]
                        dx = px - means2d[i, 0]
                        dy = py - means2d[i, 1]
                        qf = (conics[i, 0] * dx * dx
                              + 2.0 * conics[i, 1] * dx * dy
                              + conics[i, 2] * dy * dy)
                        if qf > CUTOFF_QF:
                            continue
                        a = alphas[i] * np.exp(-0.5 * qf)
                        w = a * trans
                        r += colors[i, 0] * w
                        g += colors[i, 1] * w
                        b += colors[i, 2] * w
                        trans *= 1.0 - a
                        if trans < term:
                            break
                    out[py, px, 0] = r + trans * background[0]
                    out[py, px, 1] = g + trans * background[1]
                    out[py, px, 2] = b + trans * background[2]
