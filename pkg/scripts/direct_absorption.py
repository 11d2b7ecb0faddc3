"""Direct absorption reconstruction from internal data on the exp1 phantom.

Prints the relative L2 error for same-mesh data and for data computed on a
finer mesh, with and without noise.
"""

import argparse

from sp2pat import harness as hz
from sp2pat import quantitative as qt
from sp2pat.optical import side_midpoint_sources


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--n-data", type=int, default=96)
    p.add_argument("--noise", type=float, nargs="+", default=[0.0, 2.0, 5.0])
    p.add_argument("--phantom", default="exp1")
    args = p.parse_args()
    ph = hz.get_phantom(args.phantom)
    mesh = ph.mesh(args.n)
    truth = ph.medium(mesh)
    srcs = side_midpoint_sources(mesh)
    datasets = {"same mesh": hz.internal_data(ph, mesh),
                f"{args.n_data} -> {args.n}": hz.sample_internal_data(ph, ph.mesh(args.n_data), mesh)}
    for label, H in datasets.items():
        for eta in args.noise:
            Hn = hz.add_noise(H, hz.NoiseModel(eta, 0))
            res = qt.direct_sigma_a(mesh, ph.xi, truth.sigma_s, ph.g, Hn, srcs)
            err = hz.relative_l2_error(res.sigma_a, truth.sigma_a, mesh)
            print(f"{label:>12}  eta={eta:<4g} E_a={err:.3e}  masked={int(res.mask.sum())}")


if __name__ == "__main__":
    main()
