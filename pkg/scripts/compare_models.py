"""Cross-model comparison: SP2 internal data inverted with SP2 and with diffusion.

Also prints the absorption gap between the two direct reconstructions and
how well the second-moment closed form (with and without the first-moment
correction) explains it, for several mesh sizes.
"""

import argparse
import dataclasses
import logging

from sp2pat import harness as hz
from sp2pat import quantitative as qt
from sp2pat.optical import side_midpoint_sources


def gap_table(sizes):
    ph = hz.get_phantom("exp3")
    print(f"{'n':>5} {'phi2 form':>10} {'full form':>10}")
    for n in sizes:
        mesh = ph.mesh(n)
        truth = ph.medium(mesh)
        H = hz.internal_data(ph, mesh)
        gap = qt.cross_model_sigma_a_gap(mesh, ph.xi, truth.sigma_s, ph.g, H[:, 0],
                                         side_midpoint_sources(mesh)[0], truth.sigma_a)
        print(f"{n:>5} {gap.discrepancy(mesh):>10.4f} {gap.discrepancy(mesh, full=True):>10.2e}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="scripts/configs/exp3.cfg")
    p.add_argument("--n-inv", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--gap-sizes", type=int, nargs="+", default=[32, 64, 128])
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = hz.load_config(args.config)
    over = {k: v for k, v in [("n_inv", args.n_inv), ("max_iters", args.max_iters)] if v is not None}
    base = dataclasses.replace(base, **over)
    results = {}
    for model in ("sp2", "p1"):
        out = f"{base.output}_{model}" if base.output else ""
        results[model] = hz.run_experiment(dataclasses.replace(base, inversion_model=model, output=out)).rows
    print(f"{'eta':>5} {'SP2 E_a':>8} {'SP2 E_s':>8} {'P1 E_a':>8} {'P1 E_s':>8}")
    for a, b in zip(results["sp2"], results["p1"]):
        print(f"{a['eta']:>5g} {a['E_a']:>8.4f} {a['E_s']:>8.4f} {b['E_a']:>8.4f} {b['E_s']:>8.4f}")
    gap_table(args.gap_sizes)


if __name__ == "__main__":
    main()
