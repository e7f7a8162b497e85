"""Numba loop kernels vs vectorised numpy fallbacks on synthetic-world sized inputs.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
With IHID_DISABLE_NUMBA=1 the ``_nb`` functions run as plain python loops.
"""
import argparse
import json
import time

import numpy as np

from ihid import _accel, kernels


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm-up, includes jit compilation
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        ts.append(time.perf_counter() - t)
    return float(np.median(ts)) * 1e3


def cases(rng):
    walk = np.cumsum(rng.normal(size=(400, 2)) * 0.01, axis=0)
    centers = rng.uniform(-1, 1, size=(40, 2))
    radii = np.full(40, 0.05)
    pts = np.concatenate([rng.normal(c, 0.03, size=(100, 2)) for c in rng.uniform(-1, 1, (10, 2))])
    return {
        "resample_polyline": ((walk, 64), kernels.resample_polyline_nb, kernels.resample_polyline_np),
        "region_hits": ((walk, centers, radii), kernels.region_hits_nb, kernels.region_hits_np),
        "mean_shift": ((pts, 0.1, 1e-6, 300), kernels.mean_shift_nb, kernels.mean_shift_np),
        "heading_change": ((walk, 5), kernels.heading_change_nb, kernels.heading_change_np),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"backend: {_accel.backend_name()}")
    print(f"{'kernel':<20}{'loop (ms)':>12}{'numpy (ms)':>12}{'ratio':>8}")
    rows = {}
    for name, (a, nb, npf) in cases(rng).items():
        t_nb = timeit(nb, *a, repeat=args.repeat)
        t_np = timeit(npf, *a, repeat=args.repeat)
        rows[name] = {"loop_ms": t_nb, "numpy_ms": t_np}
        print(f"{name:<20}{t_nb:>12.3f}{t_np:>12.3f}{t_np / t_nb:>8.2f}")
    print(json.dumps({"backend": _accel.backend_name(), "kernels": rows}))


if __name__ == "__main__":
    main()
