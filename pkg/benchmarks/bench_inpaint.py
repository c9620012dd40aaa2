"""Benchmark the two inpainting backends and verify they agree bitwise.

Usage: python benchmarks/bench_inpaint.py [--repeats N]

Times the harmonic fill at several image sizes and mask coverages. The
compiled kernel and the numpy fallback perform identical arithmetic, so
besides speed this doubles as an equality check across every measured cell.
"""

import argparse
import sys
import time

import numpy as np

from regrade.inpaint import available_backends, inpaint

SIZES = (64, 128, 256)
FRACTIONS = (0.05, 0.20, 0.50)


def disc_mask(size: int, fraction: float) -> np.ndarray:
    """Centered disc covering roughly the requested pixel fraction."""
    radius = np.sqrt(fraction * size * size / np.pi)
    yy, xx = np.mgrid[:size, :size]
    return (yy - size / 2) ** 2 + (xx - size / 2) ** 2 <= radius**2


def fundus_like(size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.integers(60, 200, size=(size, size, 3))
    texture = rng.normal(0, 12, size=(size, size, 3))
    return np.clip(base + texture, 0, 255).astype(np.uint8)


def time_backend(image, mask, backend: str, repeats: int):
    result = inpaint(image, mask, backend=backend)  # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        result = inpaint(image, mask, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best, result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3, help="timed runs per cell")
    args = parser.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend unavailable; timing the python backend only")

    header = f"{'size':>6} {'mask':>6} {'sweeps':>7}"
    for name in backends:
        header += f" {name + ' (ms)':>14}"
    if len(backends) == 2:
        header += f" {'speedup':>8} {'equal':>6}"
    print(header)

    mismatches = 0
    for size in SIZES:
        image = fundus_like(size, seed=size)
        for fraction in FRACTIONS:
            mask = disc_mask(size, fraction)
            row = f"{size:>6} {fraction:>6.2f}"
            timings = {}
            results = {}
            for name in backends:
                timings[name], results[name] = time_backend(image, mask, name, args.repeats)
            row += f" {results[backends[0]].sweeps:>7}"
            for name in backends:
                row += f" {1000 * timings[name]:>14.2f}"
            if len(backends) == 2:
                equal = (
                    np.array_equal(results["python"].image, results["compiled"].image)
                    and results["python"].sweeps == results["compiled"].sweeps
                )
                mismatches += not equal
                row += f" {timings['python'] / timings['compiled']:>8.1f}x {'yes' if equal else 'NO':>5}"
            print(row)

    if mismatches:
        print(f"\n{mismatches} cells disagree between backends", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
