"""Run one experiment config and print its error table.

    python scripts/run_experiment.py scripts/configs/exp1.cfg [--n-inv 32] [--max-iters 100]
"""

import argparse
import dataclasses
import logging

from sp2pat import harness as hz


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config")
    p.add_argument("--n-inv", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--noise", type=float, nargs="+")
    p.add_argument("--output")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = hz.load_config(args.config)
    over = {k: v for k, v in [("n_inv", args.n_inv), ("max_iters", args.max_iters), ("noise", args.noise),
                              ("output", args.output)] if v is not None}
    cfg = dataclasses.replace(cfg, **over)
    rep = hz.run_experiment(cfg)
    print(f"{cfg.name}: {cfg.phantom}, {cfg.data_model}->{cfg.inversion_model}, {cfg.data_type} data, "
          f"n={cfg.n_inv}, inverse crime={cfg.inverse_crime}")
    print(f"{'eta':>5} {'E_a':>8} {'E_s':>8} {'iters':>6} {'secs':>7} status")
    for r in rep.rows:
        print(f"{r['eta']:>5g} {r['E_a']:>8.4f} {r['E_s']:>8.4f} {r['iterations']:>6} {r['seconds']:>7.1f} {r['status']}")


if __name__ == "__main__":
    main()
