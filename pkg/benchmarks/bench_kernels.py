"""Time the numba and numpy kernel paths, and the convolution choice.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 224]

Kernels: the glass-blur neighbour swap and the plasma fractal used by fog.
Convolution: the shifted-slice BLAS form used by the random network and the
toy segmenter, against a direct numba loop written here for comparison.
"""
import argparse
import time

import numpy as np

from heteraug import _kernels
from heteraug._conv import conv2d
from heteraug.core import derive_rng

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def best_of(fn, repeat):
    fn()  # warm-up, includes numba compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


if numba is not None:

    @numba.njit(cache=True)
    def conv_loops(xp, w):
        n, hp, wp, cin = xp.shape
        kh, kw, _, cout = w.shape
        h, wd = hp - kh + 1, wp - kw + 1
        out = np.zeros((n, h, wd, cout))
        for b in range(n):
            for y in range(h):
                for x in range(wd):
                    for i in range(kh):
                        for j in range(kw):
                            for c in range(cin):
                                v = xp[b, y + i, x + j, c]
                                for o in range(cout):
                                    out[b, y, x, o] += v * w[i, j, c, o]
        return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--size", type=int, default=224, help="image side in pixels")
    args = p.parse_args()
    g = derive_rng(0, ["bench"])
    s = args.size
    rows = []

    img = g.random((s, s, 3))
    off = g.integers(-2, 3, size=(2, s - 4, s - 4, 2))
    noise = g.uniform(-1, 1, size=(256, 256))
    paths = [("glass_shuffle", _kernels.glass_shuffle_np, getattr(_kernels, "glass_shuffle_nb", None),
              (img, off, 2)),
             ("plasma_fractal", _kernels.plasma_fractal_np, getattr(_kernels, "plasma_fractal_nb", None),
              (noise, 2.0))]
    for name, slow, fast, fargs in paths:
        t_np = best_of(lambda: slow(*fargs), args.repeat)
        t_nb = best_of(lambda: fast(*fargs), args.repeat) if fast else float("nan")
        rows.append((name, "numpy", t_np, "numba", t_nb))

    for cin, cout in ((3, 16), (4, 4), (16, 3), (16, 16), (3, 8), (8, 8)):
        x = g.random((1, s, s, cin))
        w = g.normal(size=(3, 3, cin, cout))
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        t_blas = best_of(lambda: conv2d(x, w), args.repeat)
        if numba is not None:
            np.testing.assert_allclose(conv_loops(xp, w), conv2d(x, w), atol=1e-9)
            t_loop = best_of(lambda: conv_loops(xp, w), args.repeat)
        else:
            t_loop = float("nan")
        rows.append((f"conv3x3 {cin}->{cout}", "blas", t_blas, "numba loops", t_loop))

    print(f"numba {'enabled' if _kernels.USE_NUMBA else 'disabled'} for the package; "
          f"image {s}x{s}, best of {args.repeat}")
    print(f"{'kernel':<18} {'path a':<12} {'ms':>9}   {'path b':<12} {'ms':>9}   {'a/b':>6}")
    for name, a, ta, b, tb in rows:
        print(f"{name:<18} {a:<12} {1e3 * ta:9.2f}   {b:<12} {1e3 * tb:9.2f}   {ta / tb:6.1f}")


if __name__ == "__main__":
    main()
