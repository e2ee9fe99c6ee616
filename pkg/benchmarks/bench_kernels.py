"""Time the numba and numpy backends of the hot kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--sizes 1000 10000] [--grid 1024] [--repeat 3]
"""

import argparse
import time

import numpy as np

from mslab import _accel, kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def bench(name, fn, repeat):
    rows = {}
    for backend in ("numpy", "numba"):
        if backend == "numba" and not _accel.HAS_NUMBA:
            continue
        prev = _accel.set_backend(backend)
        try:
            fn()  # warm-up, includes compilation for numba
            rows[backend] = best_of(fn, repeat)
        finally:
            _accel.set_backend(prev)
    t_np, out_np = rows["numpy"]
    line = f"{name:34s} numpy {t_np * 1e3:9.2f} ms"
    if "numba" in rows:
        t_nb, out_nb = rows["numba"]
        a = np.concatenate([np.ravel(x) for x in (out_np if isinstance(out_np, tuple) else (out_np,))])
        b = np.concatenate([np.ravel(x) for x in (out_nb if isinstance(out_nb, tuple) else (out_nb,))])
        diff = float(np.nanmax(np.abs(a - b)))
        line += f"   numba {t_nb * 1e3:9.2f} ms   speedup {t_np / t_nb:6.2f}x   max|diff| {diff:.1e}"
    print(line)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000, 100000])
    p.add_argument("--grid", type=int, default=1024)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    grid = np.linspace(-12, 12, args.grid).reshape(-1, 1)
    print(f"backend default: {_accel.backend()}  (set MSLAB_DISABLE_NUMBA=1 to force numpy)")
    for n in args.sizes:
        samples = rng.normal(0, 1.4, (n, 1))
        w = np.ones(n)
        bench(f"kde_sum gaussian N={n}", lambda: kernels.kde_sum(grid, samples, w, 0.3, kernels.GAUSSIAN), args.repeat)
        m = min(n, 4000)
        q = samples[:m]
        bench(f"shift_points gaussian N={m}", lambda: kernels.shift_points(q, q, w[:m], 0.5, kernels.GAUSSIAN), args.repeat)
        bench(f"shift_points flat-ball N={m}", lambda: kernels.shift_points(q, q, w[:m], 0.5, kernels.FLAT_BALL), args.repeat)


if __name__ == "__main__":
    main()
