"""Linearized two-stage reconstructions and Taylor test on the exp1 background."""

import argparse

import numpy as np

from sp2pat import harness as hz


def taylor(n):
    for name in ("sigma_a", "sigma_s"):
        rems = hz.taylor_remainders("exp1", n, name)
        print(f"taylor {name}: remainders {' '.join(f'{r:.2e}' for r in rems)}, "
              f"slopes {' '.join(f'{s:.3f}' for s in -np.diff(np.log10(rems)))}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--beta", type=float, default=1e-6)
    p.add_argument("--method", default="normal", choices=["normal", "optimizer"])
    p.add_argument("--noise", type=float, nargs="+", default=[0.0])
    args = p.parse_args()
    taylor(args.n)
    for unknowns in ("xi-a", "a-s"):
        for eta in args.noise:
            res = hz.run_linearized("exp1", args.n, unknowns, args.beta, args.method, eta)
            errs = " ".join(f"{k}={v:.3e}" for k, v in res.items() if k.startswith("E_"))
            print(f"{unknowns} eta={eta:g}: {errs}")


if __name__ == "__main__":
    main()
