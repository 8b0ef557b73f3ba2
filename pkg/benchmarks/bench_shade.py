"""Time the compiled and numpy shading kernels on the same frames.

    python3 benchmarks/bench_shade.py [--resolution 64] [--lights 1] [--repeat 5]
"""

import argparse
import time

import numpy as np

from lumiforge import render


def bench(backend: str, scene, lights, repeat: int) -> float:
    render.shade_components(scene, lights, backend)  # warm caches
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        render.shade_components(scene, lights, backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--lights", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    scene = render.build_subject(0, resolution=args.resolution)
    rng = np.random.default_rng(0)
    lights = [((float(x), 30.0, float(z)), 2000.0) for x, z in rng.uniform(-60, 60, size=(args.lights, 2)) + (0, 80)]
    rows = [(name, bench(name, scene, lights, args.repeat)) for name in render.KERNELS]
    ref = dict(rows)["numpy"]
    print(f"{args.resolution}x{args.resolution}, {args.lights} light(s), best of {args.repeat}")
    for name, t in rows:
        print(f"  {name:<7} {t * 1e3:9.2f} ms   x{ref / t:5.2f}")
    if "cython" not in render.KERNELS:
        print("  (compiled kernel not built; run `pip install -e . --no-build-isolation`)")


if __name__ == "__main__":
    main()
