"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time for each backend and
the speed-up. Also checks that both backends agree on the inputs used.
"""

import argparse
import timeit

import numpy as np

from owcl import _pykernels

try:
    from owcl import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    z_main = rng.normal(size=(4096, 16))
    z_mod = rng.normal(size=(3, 4096, 16))
    mu, sd = rng.normal(size=3), rng.uniform(0.5, 1.5, size=3)
    alpha = np.full((4096, 3), 1.0 / 3)
    known = rng.normal(1.0, 1.0, size=2000)
    novel = rng.normal(0.0, 1.0, size=2000)
    ranks = np.arange(2, 42, 2, dtype=np.int64)  # doubled ranks, n = 20
    return {
        "moas_batch": (z_main, z_mod, mu, sd),
        "combine_batch": (z_main, z_mod, alpha),
        "logsumexp_rows": (z_main,),
        "mann_whitney_count": (known, novel),
        "signed_rank_counts": (ranks,),
    }


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'python ms':>10} {'cython ms':>10} {'speed-up':>9}  agree")
    for name, inp in cases(rng).items():
        py, cy = getattr(_pykernels, name), getattr(_kernels, name)
        t_py = min(timeit.repeat(lambda: py(*inp), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: cy(*inp), number=1, repeat=args.repeat))
        ok = agree(py(*inp), cy(*inp))
        print(f"{name:<20} {t_py * 1e3:10.2f} {t_cy * 1e3:10.2f} {t_py / t_cy:8.1f}x  {ok}")


if __name__ == "__main__":
    main()
