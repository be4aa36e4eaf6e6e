"""Time the compiled and numpy histogram kernels on identical inputs.

    python3 benchmarks/bench_histogram.py --bags 32 --size 100 --z 16 --bins 64
"""
import argparse
import time

import numpy as np

from symquant.neural.kernels import VARIANTS, backends


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bags", type=int, default=32)
    ap.add_argument("--size", type=int, default=100)
    ap.add_argument("--z", type=int, default=16)
    ap.add_argument("--bins", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    x = rng.random((args.bags, args.size, args.z))
    mu = np.tile((np.arange(1, args.bins + 1) - 0.5) / args.bins, (args.z, 1))
    gout = rng.standard_normal((args.bags, args.z, args.bins))
    widths = {"hard": 0.5 / args.bins, "soft": float(args.bins), "softrbf": 1.0 / args.bins,
              "sigmoid": 1.0 / args.bins}
    impls = backends()
    print(f"input ({args.bags}, {args.size}, {args.z}), {args.bins} bins; best of {args.repeat}")
    print(f"{'variant':8s} {'pass':8s} " + " ".join(f"{k:>12s}" for k in impls) + "   speedup")
    for name, code in VARIANTS.items():
        w = np.full((args.z, args.bins), widths[name])
        for label in ("forward", "backward"):
            row = {}
            for key, mod in impls.items():
                if label == "forward":
                    row[key] = best_of(lambda: mod.hist_forward(x, mu, w, code, 100.0), args.repeat)
                else:
                    row[key] = best_of(lambda: mod.hist_backward(x, mu, w, code, 100.0, gout),
                                       args.repeat)
            speed = row["python"] / row["cython"] if "cython" in row else float("nan")
            print(f"{name:8s} {label:8s} " + " ".join(f"{row[k] * 1e3:10.2f}ms" for k in impls)
                  + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
