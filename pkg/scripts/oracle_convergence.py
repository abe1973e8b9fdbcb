"""Grid refinement of the FD heat oracle: how far the desk grid is from finer solves."""
import argparse
import json
import time

import numpy as np

from lmdpinn import desk
from lmdpinn.oracle import Grid, fd_heat_solve


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--factors", type=int, nargs="+", default=[2, 4])
    args = p.parse_args()
    s = desk.DESK_SETUP
    g = Grid.for_setup(s, desk.DESK_GRID)
    base = desk.heat_oracle(s)
    rise = desk.peak_rise(base, s)
    j = (g.shape[1] - 1) // 2
    out = {"peak_rise": rise}
    for f in args.factors:
        t0 = time.perf_counter()
        fine = fd_heat_solve(g.refined(f), s)
        sub = fine.T[:, ::f, ::f, ::f]
        err = base.T - sub
        line = err[-1, :, j, -1]
        out[f"x{f}"] = {
            "wall_s": time.perf_counter() - t0,
            "peak_rise": float(fine.T.max() - s.T0),
            "rmse_all_K": float(np.sqrt((err ** 2).mean())),
            "rmse_centerline_K": float(np.sqrt((line ** 2).mean())),
            "centerline_fraction": float(np.sqrt((line ** 2).mean()) / rise),
        }
        print(f"x{f}", json.dumps(out[f"x{f}"]), flush=True)
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
