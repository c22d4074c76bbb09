"""How many surrounding images the field fixture keeps as the ball radius grows."""

import argparse

import numpy as np

from bridgecause.harness import field_test_fixture
from bridgecause.neighborhood import select_surrounding, shooting_points
from bridgecause.scene import Scene, parse_mesh_obj, parse_poses


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--max-radius", type=float, default=5.0)
    ap.add_argument("--steps", type=int, default=21)
    args = ap.parse_args()

    gen = field_test_fixture(args.seed)
    scene = Scene(parse_mesh_obj(gen.mesh_obj), parse_poses(gen.poses_json))
    pts = shooting_points(scene)
    print(f"{'radius':>7}  {'surrounding':>11}  {'excluded':>8}")
    for r in np.linspace(0.0, args.max_radius, args.steps):
        sel = select_surrounding(pts, gen.interest_id, float(r))
        print(f"{r:7.2f}  {len(sel.surrounding):11d}  {len(sel.excluded):8d}")


if __name__ == "__main__":
    main()
