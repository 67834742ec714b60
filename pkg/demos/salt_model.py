"""Frequency-domain solve over a salt-body velocity model.

Generates a small synthetic velocity model (background gradient plus a
fast ellipsoidal salt body), reads it back through the raw float32 reader,
and runs a low-frequency solve with a point source at the surface. The
real workflow is identical with a full-size velocity file:

    helmfree gen-salt-surrogate salt.bin 641x641x193
    helmfree solve salt.ini --set problem.velocity_file=salt.bin

Run:  python3 demos/salt_model.py
"""

import os

import numpy as np

from helmfree.config import parse_config
from helmfree.io import read_field
from helmfree.problems import gen_salt_surrogate
from helmfree.runner import run_solve

DIMS = (33, 33, 17)


def main():
    path = "out/demo_salt/velocity.bin"
    os.makedirs("out/demo_salt", exist_ok=True)
    v = gen_salt_surrogate(path, DIMS)
    print(f"velocity model {DIMS[0]}x{DIMS[1]}x{DIMS[2]}: "
          f"{v.min():.0f}..{v.max():.0f} m/s")

    cfg = parse_config("", overrides=[
        "problem.name=Salt",
        f"problem.shape={DIMS[0]},{DIMS[1]},{DIMS[2]}",
        "problem.domain=0,12800,0,12800,0,6400",
        f"problem.velocity_file={path}",
        "problem.frequency=0.25",
        "problem.source=6400,6400,0",
        "output.dir=out/demo_salt", "output.verbosity=0",
    ])
    report = run_solve(cfg)
    conv = report.convergence
    print(f"solve: converged={conv.converged} matvecs={conv.matvec_count} "
          f"relres={conv.final_relres:.2e} wall={conv.wall_time:.1f}s")
    u = read_field("out/demo_salt/field.hff")
    mid = np.abs(u[:, DIMS[1] // 2, :])
    print(f"pressure magnitude on the mid slice: "
          f"peak {mid.max():.3e} at surface, {mid[:, -1].max():.3e} at depth")


if __name__ == "__main__":
    main()
