"""Adjoint gradients against central finite differences (both models, both coefficients)."""

import argparse
import time

import numpy as np

from sp2pat import adjoint as ad
from sp2pat import mesh as fem
from sp2pat.acoustic import AcousticMedium, WaveSolver
from sp2pat.optical import OpticalMedium, side_midpoint_sources, simulate_internal_data


def smooth_medium(n):
    """Smooth absorption and scattering bumps on (0, 2)^2."""
    m = fem.build_rect_mesh(0, 2, 0, 2, n, n)
    x, y = m.nodes.T
    sa = 0.1 + 0.1 * np.exp(-((x - 1) ** 2 + (y - 1.2) ** 2) / 0.1)
    ss = 80 + 20 * np.exp(-((x - 0.8) ** 2 + (y - 1) ** 2) / 0.1)
    return OpticalMedium(m, sa, ss, 0.5)


def check(n=24, T=10.0, directions=10, seed=0):
    """Worst relative mismatch for each (model, coefficient) pair."""
    truth = smooth_medium(n)
    m = truth.mesh
    srcs = side_midpoint_sources(m)
    wave = WaveSolver(AcousticMedium(m, 1.0, T))
    a0, s0 = np.full(m.node_count, 0.12), np.full(m.node_count, 90.0)
    worst = {}
    for model in ("sp2", "p1"):
        data = wave.forward(simulate_internal_data(truth, srcs, model))
        prob = ad.ReconstructionProblem(m, srcs, data, ad.ObjectiveConfig(1e-6, 1e-9, model), 0.5, 0.9, wave)
        for which in ("sigma_a", "sigma_s"):
            worst[model, which] = float(ad.gradient_check(prob, a0, s0, which, directions, seed=seed).max())
    return worst


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=24)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--directions", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    t0 = time.perf_counter()
    for (model, which), err in check(args.n, args.T, args.directions, args.seed).items():
        print(f"{model} {which}: max relative error over {args.directions} directions {err:.2e}")
    print(f"elapsed {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
