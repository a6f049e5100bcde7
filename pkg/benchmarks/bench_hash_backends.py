"""Compare the compiled hash-grid encoder against the torch fallback.

Both backends produce identical features (up to float32 rounding); this
script verifies that first, then times forward and forward+backward passes
over a range of batch sizes.

    python3 benchmarks/bench_hash_backends.py --points 4096 65536
"""

import argparse
import time

import numpy as np
import torch

from scenegen.field import HashGridConfig
from scenegen.field.hashgrid import compiled_available, encode


def time_ms(fn, repeats):
    fn()   # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def bench(config, n_points, repeats, seed=0):
    gen = torch.Generator().manual_seed(seed)
    pos = torch.rand(n_points, 3, generator=gen)
    table = torch.randn(config.total_rows, config.features_per_level,
                        generator=gen) * 1e-2

    out = {}
    for backend in ("torch", "cython"):
        if backend == "cython" and not compiled_available():
            continue

        def fwd():
            with torch.no_grad():
                return encode(pos, table, config, config.n_levels,
                              backend=backend)

        def fwd_bwd():
            t = table.clone().requires_grad_(True)
            p = pos.clone().requires_grad_(True)
            feats = encode(p, t, config, config.n_levels, backend=backend)
            feats.square().sum().backward()

        out[backend] = (time_ms(fwd, repeats), time_ms(fwd_bwd, repeats),
                        fwd())
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, nargs="+",
                    default=[1024, 8192, 65536])
    ap.add_argument("--levels", type=int, default=8)
    ap.add_argument("--table-log2", type=int, default=14)
    ap.add_argument("--repeats", type=int, default=9)
    args = ap.parse_args()

    config = HashGridConfig(n_levels=args.levels,
                            table_size_log2=args.table_log2)
    torch.set_num_threads(1)
    print(f"grid: {args.levels} levels, 2^{args.table_log2} rows/level, "
          f"{config.features_per_level} features "
          f"(compiled available: {compiled_available()})")
    print(f"{'points':>8}  {'backend':>7}  {'fwd ms':>8}  {'fwd+bwd ms':>10}"
          f"  {'speedup':>7}")

    for n in args.points:
        res = bench(config, n, args.repeats)
        if "cython" in res:
            diff = (res["torch"][2] - res["cython"][2]).abs().max().item()
            assert diff < 1e-5, f"backend outputs disagree by {diff}"
        base = res["torch"][0]
        for backend, (f, fb, _) in res.items():
            print(f"{n:>8}  {backend:>7}  {f:>8.2f}  {fb:>10.2f}"
                  f"  {base / f:>6.1f}x")


if __name__ == "__main__":
    main()
