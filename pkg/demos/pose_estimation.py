"""Relative rotation of a box from two point clouds: closed-form Kabsch with
known correspondences, then a small learned encoder that sees only the
unordered clouds.

    python3 demos/pose_estimation.py [iterations]
"""

from __future__ import annotations

import sys

import numpy as np

from cherlab.pose import (axis_angle_from_rotation, evaluate_encoder, geodesic_loss, kabsch_estimate,
                          make_rotation_pair, sample_surface, train_encoder)

DIMS = (1.0, 0.6, 0.35)


def main(iterations: int = 300) -> None:
    cloud = sample_surface("box", 128, 0.0, seed=0, dims=DIMS)
    for noise in (0.0, 0.01, 0.03):
        a, b, R = make_rotation_pair(cloud, seed=1, noise=noise, max_angle=1.0)
        R_k = kabsch_estimate(a, b)
        est = axis_angle_from_rotation(R_k)
        print(f"Kabsch, noise {noise:.2f} m: error {geodesic_loss(R, R_k):.2e} rad, "
              f"recovered angle {est.angle:.4f} rad about {np.round(est.axis, 3)}")
    tr = train_encoder("box", dims=DIMS, iterations=iterations, seed=0)
    errs = evaluate_encoder(tr.net, "box", dims=DIMS, n_pairs=100)
    print(f"encoder after {iterations} iterations: training loss {np.mean(tr.losses[-50:]):.3f}, "
          f"held-out mean error {errs.mean():.3f} rad (median {np.median(errs):.3f})")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 300)
