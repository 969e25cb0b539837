"""Benchmark the compiled conv kernels against the numpy fallback.

Run:  python benchmarks/bench_conv.py [--repeat 0.3]

Shapes mirror the solver's hot loop (N observation batches of 16x16
images through 5x5 banks) plus a denser channel case where BLAS tends to
win; the import-time backend selection picks whichever module is built,
so both paths are timed here explicitly.
"""

from __future__ import annotations

import argparse
import time

from blindinv import kernels
from blindinv.rng import Pcg32

SHAPES = [
    ("solver fwd 1->16", (25, 1, 16, 16), (16, 1, 5, 5)),
    ("solver fwd 16->1", (25, 16, 16, 16), (1, 16, 5, 5)),
    ("dense channels", (25, 16, 16, 16), (16, 16, 5, 5)),
    ("large image", (4, 1, 64, 64), (8, 1, 5, 5)),
]


def _time(fn, repeat_s: float) -> float:
    fn()  # warm up
    n = 0
    start = time.perf_counter()
    while time.perf_counter() - start < repeat_s:
        fn()
        n += 1
    return (time.perf_counter() - start) / n * 1000


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=float, default=0.3,
                        help="seconds of timing per case")
    args = parser.parse_args()

    compiled = kernels._convkern
    print(f"active backend: {kernels.backend()}")
    if compiled is None:
        print("compiled extension not built; timing the numpy path only")

    rng = Pcg32(0)
    header = f"{'case':<18} {'shape':<22} {'numpy ms':>9}"
    if compiled is not None:
        header += f" {'compiled ms':>12} {'speedup':>8}"
    print(header)
    for name, xs, fs in SHAPES:
        x = rng.normal(0, 1, xs)
        f = rng.normal(0, 1, fs)
        g = rng.normal(0, 1, (xs[0], fs[0], xs[2], xs[3]))
        ah, aw = fs[2] // 2, fs[3] // 2
        rows = [
            (f"{name} corr", lambda: kernels._correlate2d_numpy(x, f, ah, aw),
             None if compiled is None else lambda: compiled.correlate2d(x, f, ah, aw)),
            (f"{name} fgrad",
             lambda: kernels._filter_grad_numpy(x, g, fs[2], fs[3], ah, aw),
             None if compiled is None
             else lambda: compiled.filter_grad(x, g, fs[2], fs[3], ah, aw)),
        ]
        for label, numpy_fn, compiled_fn in rows:
            t_np = _time(numpy_fn, args.repeat)
            line = f"{label:<18} {str(xs):<22} {t_np:9.3f}"
            if compiled_fn is not None:
                t_c = _time(compiled_fn, args.repeat)
                line += f" {t_c:12.3f} {t_np / t_c:7.2f}x"
            print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
