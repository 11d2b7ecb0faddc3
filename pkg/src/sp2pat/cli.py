"""Command-line entry point (``sp2pat`` / ``python -m sp2pat``)."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness as hz
from . import io
from . import quantitative as qt
from .acoustic import AcousticMedium, WaveSolver
from .optical import side_midpoint_sources, simulate_internal_data


def _out(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_phantom(args) -> int:
    ph = hz.get_phantom(args.name)
    mesh = ph.mesh(args.n)
    med = ph.medium(mesh)
    out = _out(args.out)
    io.write_field_csv(mesh, np.column_stack([med.sigma_a, med.sigma_s]), out / "truth.csv", "sigma")
    io.write_grid(mesh, med.sigma_a, out / "sigma_a.txt")
    io.write_grid(mesh, med.sigma_s, out / "sigma_s.txt")
    print(f"wrote {args.name} truth fields on a {args.n}x{args.n} mesh to {out}")
    return 0


def cmd_forward(args) -> int:
    ph = hz.get_phantom(args.phantom)
    mesh = ph.mesh(args.n)
    H = simulate_internal_data(ph.medium(mesh), side_midpoint_sources(mesh), args.model)
    out = _out(args.out)
    nm = hz.NoiseModel(args.noise, args.seed)
    io.write_field_csv(mesh, hz.add_noise(H, nm), out / "internal.csv", "H")
    if args.T > 0:
        records = WaveSolver(AcousticMedium(mesh, 1.0, args.T)).forward(H)
        for j, rec in enumerate(hz.add_noise(records, nm)):
            io.write_record_binary(rec, out / f"record_{j}.bin")
            if args.csv:
                io.write_record_csv(rec, out / f"record_{j}.csv")
    print(f"wrote {args.model} data for {H.shape[1]} sources to {out}")
    return 0


def _config_from_args(args) -> hz.ExperimentConfig:
    cfg = hz.load_config(args.config) if args.config else hz.ExperimentConfig()
    overrides = {}
    for key in ("phantom", "unknowns", "n_inv", "n_data", "T", "seed", "max_iters", "output"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.noise is not None:
        overrides["noise"] = args.noise
    if args.model is not None:
        overrides["inversion_model"] = args.model
    return dataclasses.replace(cfg, **overrides)


def cmd_invert(args) -> int:
    cfg = _config_from_args(args)
    report = hz.run_experiment(cfg)
    _print_table(report.rows)
    return 0


def cmd_direct(args) -> int:
    ph = hz.get_phantom(args.phantom)
    mesh = ph.mesh(args.n)
    truth = ph.medium(mesh)
    if args.n_data and args.n_data != args.n:
        H = hz.sample_internal_data(ph, ph.mesh(args.n_data), mesh)
    else:
        H = hz.internal_data(ph, mesh)
    H = hz.add_noise(H, hz.NoiseModel(args.noise, args.seed))
    res = qt.direct_sigma_a(mesh, ph.xi, truth.sigma_s, ph.g, H, side_midpoint_sources(mesh))
    err = hz.relative_l2_error(res.sigma_a, truth.sigma_a, mesh)
    if args.out:
        out = _out(args.out)
        io.write_field_csv(mesh, res.sigma_a, out / "sigma_a.csv", "sigma_a")
        io.write_grid(mesh, res.sigma_a, out / "sigma_a.txt")
    print(f"direct absorption: relative L2 error {err:.3e} (masked nodes: {int(res.mask.sum())})")
    return 0


def cmd_linearized(args) -> int:
    res = hz.run_linearized(args.phantom, args.n, args.unknowns, args.beta, args.method, args.noise, args.seed)
    mesh = res.pop("mesh")
    errs = {k: v for k, v in res.items() if k.startswith("E_")}
    if args.out:
        out = _out(args.out)
        for k, v in res.items():
            if k.startswith("delta_"):
                io.write_field_csv(mesh, v, out / f"{k}.csv", k)
    print(" ".join(f"{k}={v:.4g}" for k, v in errs.items()))
    return 0


def cmd_compare(args) -> int:
    rows = []
    base = hz.ExperimentConfig(
        name="exp3", phantom="exp3", data_type="internal", unknowns="as", n_inv=args.n, n_data=args.n_data,
        alpha=1e-3, beta=1e-8, normalize=True, bounds=[0.0, 1.0, 10.0, 100.0], start_a=0.1, start_s=50.0,
        noise=args.noise, seed=args.seed, max_iters=args.max_iters, grad_tol=1e-10, step_tol=1e-14,
    )
    for model in ("sp2", "p1"):
        rep = hz.run_experiment(dataclasses.replace(base, inversion_model=model))
        for r in rep.rows:
            rows.append({"model": model, **r})
    ph = hz.get_phantom("exp3")
    mesh = ph.mesh(args.n)
    truth = ph.medium(mesh)
    H = hz.internal_data(ph, mesh)
    src = side_midpoint_sources(mesh)[0]
    gap = qt.cross_model_sigma_a_gap(mesh, ph.xi, truth.sigma_s, ph.g, H[:, 0], src, truth.sigma_a)
    if args.out:
        out = _out(args.out)
        with open(out / "errors.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["model", "eta", "E_a", "E_s"])
            for r in rows:
                wr.writerow([r["model"], r["eta"], f"{r['E_a']:.6g}", f"{r['E_s']:.6g}"])
        io.write_field_csv(mesh, np.column_stack([gap.gap, gap.gap_phi2, gap.gap_full, gap.mask]),
                           out / "gap.csv", "gap")
    for r in rows:
        print(f"{r['model']:>4} eta={r['eta']:<4g} E_a={r['E_a']:.4f} E_s={r['E_s']:.4f}")
    print(f"gap vs second-moment form: {gap.discrepancy(mesh):.4f}; with first-moment term: "
          f"{gap.discrepancy(mesh, full=True):.2e}")
    return 0


def _print_table(rows):
    print(f"{'eta':>6} {'E_a':>10} {'E_s':>10} {'iters':>6} status")
    for r in rows:
        print(f"{r['eta']:>6g} {r['E_a']:>10.4f} {r['E_s']:>10.4f} {r['iterations']:>6} {r['status']}")


def cmd_report(args) -> int:
    for d in args.dirs:
        path = Path(d) / "errors.csv"
        if not path.exists():
            raise FileNotFoundError(f"no errors.csv in {d}")
        print(f"== {d}")
        print(path.read_text().rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sp2pat", description="Quantitative photoacoustic reconstruction toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="write truth coefficient fields")
    s.add_argument("name", choices=sorted(hz.PHANTOMS))
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--out", default="phantom_out")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("forward", help="generate internal and boundary acoustic data")
    s.add_argument("--phantom", default="exp1", choices=sorted(hz.PHANTOMS))
    s.add_argument("--n", type=int, default=48)
    s.add_argument("--model", default="sp2", choices=["sp2", "p1"])
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--T", type=float, default=20.0, help="final time; 0 skips the wave solve")
    s.add_argument("--csv", action="store_true", help="also write records as CSV")
    s.add_argument("--out", default="forward_out")
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("invert", help="full adjoint-based reconstruction")
    s.add_argument("--config")
    s.add_argument("--phantom", choices=sorted(hz.PHANTOMS))
    s.add_argument("--model", choices=["sp2", "p1"])
    s.add_argument("--unknowns", choices=["a", "as"])
    s.add_argument("--n-inv", dest="n_inv", type=int)
    s.add_argument("--n-data", dest="n_data", type=int)
    s.add_argument("--T", type=float)
    s.add_argument("--noise", type=float, nargs="+")
    s.add_argument("--seed", type=int)
    s.add_argument("--max-iters", dest="max_iters", type=int)
    s.add_argument("--out", dest="output")
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("direct", help="direct absorption reconstruction from internal data")
    s.add_argument("--phantom", default="exp1", choices=sorted(hz.PHANTOMS))
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--n-data", dest="n_data", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_direct)

    s = sub.add_parser("linearized", help="two-stage linearized reconstruction")
    s.add_argument("--unknowns", required=True, choices=["xi-a", "a-s"])
    s.add_argument("--phantom", default="exp1", choices=sorted(hz.PHANTOMS))
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--beta", type=float, default=1e-6)
    s.add_argument("--method", default="optimizer", choices=["optimizer", "normal"])
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_linearized)

    s = sub.add_parser("compare-models", help="SP2 versus diffusion inversion of internal data")
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--n-data", dest="n_data", type=int, default=96, help="0: same mesh as the inversion")
    s.add_argument("--noise", type=float, nargs="+", default=[0.0])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", dest="max_iters", type=int, default=3000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", help="print error tables from output directories")
    s.add_argument("dirs", nargs="+")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except hz.ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
