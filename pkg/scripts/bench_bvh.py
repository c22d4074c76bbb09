"""Time BVH queries against the exhaustive scan on a random triangle soup."""

import argparse
import time

import numpy as np

from bridgecause.geometry import build_bvh, nearest_hits, scan_hits
from bridgecause.harness import random_rays, random_soup


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--triangles", type=int, default=100_000)
    ap.add_argument("--rays", type=int, default=10_000)
    ap.add_argument("--leaf-size", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-scan", action="store_true", help="only time the BVH")
    args = ap.parse_args()

    mesh = random_soup(args.triangles, args.seed)
    o, d = random_rays(args.rays, args.seed + 1)

    t0 = time.perf_counter()
    indexed = build_bvh(mesh, leaf_size=args.leaf_size)
    print(f"build      {time.perf_counter() - t0:8.3f}s  depth {indexed.bvh.depth()}")
    nearest_hits(indexed, o[:2], d[:2])

    t0 = time.perf_counter()
    idx, t, _, _ = nearest_hits(indexed, o, d)
    print(f"bvh query  {time.perf_counter() - t0:8.3f}s  hits {(idx >= 0).sum()}/{args.rays}")

    if not args.skip_scan:
        t0 = time.perf_counter()
        ref_idx, ref_t, _, _ = scan_hits(mesh, o, d)
        print(f"scan query {time.perf_counter() - t0:8.3f}s")
        agree = np.array_equal(idx, ref_idx) and np.array_equal(t[idx >= 0], ref_t[idx >= 0])
        print(f"agreement  {agree}")


if __name__ == "__main__":
    main()
