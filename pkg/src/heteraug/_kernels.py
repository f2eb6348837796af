"""Loop-bound kernels with a numba path and a pure-numpy fallback.

Set ``HETERAUG_DISABLE_NUMBA=1`` before import to force the numpy path.
Both paths consume identical pre-drawn random arrays, so they produce the
same values (bit-identical for the swap kernel, to rounding for the fractal).

Convolutions are not here: shifted-slice matmuls on BLAS beat hand-written
loops at the channel widths used in this package (see benchmarks/).
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get(
    "HETERAUG_DISABLE_NUMBA", ""
).lower() not in ("1", "true", "yes")


def glass_shuffle_np(img, offsets, delta):
    """Sequential neighbour swaps, scanning bottom-right to top-left.

    ``offsets`` is an integer array of shape ``(iters, h - 2*delta,
    w - 2*delta, 2)`` holding the (dy, dx) partner for each visited pixel.
    """
    img = img.copy()
    h, w = img.shape[:2]
    for it in range(offsets.shape[0]):
        for a, y in enumerate(range(h - delta - 1, delta - 1, -1)):
            for b, x in enumerate(range(w - delta - 1, delta - 1, -1)):
                yy = y + offsets[it, a, b, 0]
                xx = x + offsets[it, a, b, 1]
                tmp = img[y, x].copy()
                img[y, x] = img[yy, xx]
                img[yy, xx] = tmp
    return img


def plasma_fractal_np(noise, decay):
    """Toroidal diamond-square height map normalised to [0, 1].

    ``noise`` is a square power-of-two array of uniforms in [-1, 1); the
    displacement added at a point is ``wibble * noise[point]`` where wibble
    starts at 100 and is divided by ``decay`` after every level.
    """
    size = noise.shape[0]
    grid = np.zeros((size, size), dtype=np.float64)
    step = size
    wibble = 100.0
    while step >= 2:
        half = step // 2
        # squares: centre = mean of 4 corners
        corners = grid[0:size:step, 0:size:step]
        acc = corners + np.roll(corners, -1, axis=0)
        acc = acc + np.roll(acc, -1, axis=1)
        grid[half:size:step, half:size:step] = (
            acc / 4 + wibble * noise[half:size:step, half:size:step]
        )
        # diamonds: edge midpoints = mean of 2 corners and 2 centres
        centres = grid[half:size:step, half:size:step]
        corners = grid[0:size:step, 0:size:step]
        top = centres + np.roll(centres, 1, axis=0) + corners + np.roll(corners, -1, axis=1)
        grid[0:size:step, half:size:step] = top / 4 + wibble * noise[0:size:step, half:size:step]
        left = centres + np.roll(centres, 1, axis=1) + corners + np.roll(corners, -1, axis=0)
        grid[half:size:step, 0:size:step] = left / 4 + wibble * noise[half:size:step, 0:size:step]
        step = half
        wibble /= decay
    grid -= grid.min()
    peak = grid.max()
    return grid / peak if peak > 0 else grid


if numba is not None:

    @numba.njit(cache=True)
    def _glass_shuffle_inplace(img, offsets, delta):
        h, w, ch = img.shape
        for it in range(offsets.shape[0]):
            a = 0
            for y in range(h - delta - 1, delta - 1, -1):
                b = 0
                for x in range(w - delta - 1, delta - 1, -1):
                    yy = y + offsets[it, a, b, 0]
                    xx = x + offsets[it, a, b, 1]
                    for c in range(ch):
                        tmp = img[y, x, c]
                        img[y, x, c] = img[yy, xx, c]
                        img[yy, xx, c] = tmp
                    b += 1
                a += 1

    def glass_shuffle_nb(img, offsets, delta):
        out = np.ascontiguousarray(img, dtype=np.float64).copy()
        _glass_shuffle_inplace(out, np.ascontiguousarray(offsets, dtype=np.int64), delta)
        return out

    @numba.njit(cache=True)
    def _plasma_loops(noise, decay):
        size = noise.shape[0]
        grid = np.zeros((size, size))
        step = size
        wibble = 100.0
        while step >= 2:
            half = step // 2
            for y in range(half, size, step):
                for x in range(half, size, step):
                    y0, x0 = y - half, x - half
                    y1, x1 = (y + half) % size, (x + half) % size
                    s = grid[y0, x0] + grid[y1, x0] + grid[y0, x1] + grid[y1, x1]
                    grid[y, x] = s / 4 + wibble * noise[y, x]
            for y in range(0, size, step):
                for x in range(half, size, step):
                    s = (grid[(y + half) % size, x] + grid[(y - half) % size, x]
                         + grid[y, x - half] + grid[y, (x + half) % size])
                    grid[y, x] = s / 4 + wibble * noise[y, x]
            for y in range(half, size, step):
                for x in range(0, size, step):
                    s = (grid[y, (x + half) % size] + grid[y, (x - half) % size]
                         + grid[y - half, x] + grid[(y + half) % size, x])
                    grid[y, x] = s / 4 + wibble * noise[y, x]
            step = half
            wibble /= decay
        return grid

    def plasma_fractal_nb(noise, decay):
        grid = _plasma_loops(np.ascontiguousarray(noise, dtype=np.float64), float(decay))
        grid -= grid.min()
        peak = grid.max()
        return grid / peak if peak > 0 else grid


if USE_NUMBA:
    glass_shuffle = glass_shuffle_nb
    plasma_fractal = plasma_fractal_nb
else:
    glass_shuffle = glass_shuffle_np
    plasma_fractal = plasma_fractal_np
