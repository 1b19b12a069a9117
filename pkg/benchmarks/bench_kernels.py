"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time per call for each backend and the speedup. The
compiled columns read ``n/a`` when the extension is not built.
"""

import argparse
import math
import timeit

import numpy as np

from artifact import _kernels_py
from artifact.covariance import IsotropicCovariance
from artifact.fieldsim import AffineModel, sample_field

try:
    from artifact import _kernels as _compiled
except ImportError:
    _compiled = None


def _march_case(n: float, h: float):
    field = sample_field(IsotropicCovariance(), AffineModel.from_theta(1.0, 0.5, math.pi / 6), n, h, 7,
                         with_gradient=False)
    return f"march_squares n={n:g} h={h:g} ({field.values.shape[0]}^2 nodes)", \
        lambda mod: mod.march_squares(field.values, 0.0, -field.half_width, field.spacing)


def _mehler_case(q: int, points: int):
    rng = np.random.default_rng(q)
    gam = rng.uniform(-0.6, 0.6, (9, points))
    powers = np.empty((q + 1, 9, points))
    powers[0] = 1.0
    for e in range(1, q + 1):
        powers[e] = powers[e - 1] * gam
    weights = rng.uniform(0.0, 1.0, points)
    return f"mehler_table q={q} ({points} points)", lambda mod: mod.mehler_table(q, powers, weights)


def _best(func, repeat: int) -> float:
    func()  # warm-up
    number = max(1, int(0.2 / max(timeit.timeit(func, number=1), 1e-6)))
    return min(timeit.repeat(func, number=number, repeat=repeat)) / number


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    cases = [_march_case(10, 0.25), _march_case(20, 0.125), _mehler_case(4, 2000), _mehler_case(8, 2000)]
    print(f"{'case':48s} {'python':>12s} {'compiled':>12s} {'speedup':>8s}")
    for label, call in cases:
        slow = _best(lambda: call(_kernels_py), args.repeat)
        if _compiled is None:
            print(f"{label:48s} {slow * 1e3:10.3f}ms {'n/a':>12s} {'n/a':>8s}")
            continue
        fast = _best(lambda: call(_compiled), args.repeat)
        print(f"{label:48s} {slow * 1e3:10.3f}ms {fast * 1e3:10.3f}ms {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
