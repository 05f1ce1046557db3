"""Time the compiled and NumPy random-walk kernels on the same substrate.

Usage::

    python3 benchmarks/bench_walker.py --spins 2000 --steps 1000 --threads 1

Both kernels consume identical random streams, so the script also reports the
largest difference between their final positions.
"""
import argparse
import time

import numpy as np

from dmrisim.geometry import icosphere
from dmrisim.oracles import walker
from dmrisim.sequences import PGSE


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spins", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--radius", type=float, default=5.0)
    ap.add_argument("--level", type=int, default=3)
    ap.add_argument("--kappa", type=float, default=1e-5)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    v, t = icosphere(args.level)
    v = np.asarray(v) * args.radius
    seq = PGSE(10000.0, 13000.0)
    sub = walker.make_substrate(v, t, args.kappa, 2e-3, seq.TE / args.steps)
    orc = walker.WalkerOracle(sub, v, t, 2e-3, args.spins, args.steps, seed=11)

    backends = ["numpy"] + (["compiled"] if walker._walker_ext is not None else [])
    results, times = {}, {}
    for name in backends:
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            results[name] = walker.run_walk(orc, seq, [[1.0, 0.0, 0.0]], backend=name,
                                            threads=args.threads)
            best = min(best, time.perf_counter() - t0)
        times[name] = best
        rate = args.spins * args.steps / best
        print(f"{name:9s} {best:8.3f} s  {rate / 1e6:7.2f} M spin-steps/s")
    if "compiled" in times:
        diff = np.abs(results["compiled"].positions - results["numpy"].positions).max()
        print(f"speed-up  {times['numpy'] / times['compiled']:.1f}x   max |dx| = {diff:.2e} µm")
    else:
        print("compiled kernel not built; only the NumPy kernel was timed")


if __name__ == "__main__":
    main()
