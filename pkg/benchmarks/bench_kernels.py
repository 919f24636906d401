"""Compare the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Times the identity-design posterior statistics (one sweep of the toy and
wavelet denoising problems) and the scale-mixture quadrature used by the
one-variable oracle.  Each kernel is checked for agreement before timing.
Set GROUPWEIGHTS_DISABLE_NUMBA=1 to see the library fall back to numpy
for everything.
"""
import argparse
import time

import numpy as np

from groupweights import _kernels
from groupweights.datagen.wavelets import WaveletTree, wavelet_path_groups
from groupweights.model import GroupFamily


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def identity_case(K, family, rng):
    Y = rng.standard_normal((K, family.n_features)) * 3
    h = rng.uniform(0.1, 2.0, (K, family.n_groups))
    act = np.ones(family.n_groups, dtype=bool)
    return (Y, h, family.ptr, family.indices, family.sizes, act, 1.0)


def gsm_case(K, rng, n_points=4001):
    y = rng.standard_normal(K) * 2
    t = np.linspace(-4.1, 30, n_points)
    return (y, np.logaddexp(0.0, t), -1.5 * t - np.exp(-t))


def run(repeat):
    rng = np.random.default_rng(0)
    cases = [
        ("identity, toy prefixes K=5000 G=19", _kernels.identity_stats,
         identity_case(5000, GroupFamily.prefixes(10), rng)),
        ("identity, wavelet paths K=841 G=2047", _kernels.identity_stats,
         identity_case(841, wavelet_path_groups(WaveletTree(5)), rng)),
        ("quadrature, K=10000 n=4001", _kernels.gsm_loglik, gsm_case(10000, rng)),
    ]
    backends = ["numpy"] + (["numba"] if _kernels.numba_enabled() else [])
    print(f"numba available: {_kernels.numba_enabled()}")
    print(f"{'kernel':40s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}")
    for label, kern, args in cases:
        ref = kern(*args, backend="numpy")
        res = {}
        for b in backends:
            out = kern(*args, backend=b)          # also triggers compilation
            for x, y in zip(out, ref):
                np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)
            res[b] = best_of(lambda: kern(*args, backend=b), repeat)
        nb = res.get("numba")
        speed = f"{res['numpy'] / nb:8.1f}" if nb else "     n/a"
        nb_txt = f"{nb:10.4f}" if nb else "       n/a"
        print(f"{label:40s} {res['numpy']:10.4f} {nb_txt} {speed}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    run(ap.parse_args().repeat)
