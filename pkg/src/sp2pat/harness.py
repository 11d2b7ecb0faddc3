"""Phantoms, noise, error metrics and experiment orchestration."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from . import mesh as fem
from . import quantitative as qt
from .acoustic import AcousticMedium, WaveRecord, WaveSolver, resample_record
from .adjoint import ObjectiveConfig, ReconstructionProblem
from .optical import (DiffusionOperator, OpticalMedium, Sp2Operator, side_midpoint_sources,
                      simulate_internal_data, source_traces)
from .optimizer import OptimizerConfig, minimize

log = logging.getLogger(__name__)

XI = 0.5
G = 0.9


# ------------------------------------------------------------------ phantoms


def _disk(x, y, cx, cy, r):
    return ((x - cx) ** 2 + (y - cy) ** 2 <= r * r).astype(float)


@dataclass(frozen=True)
class Phantom:
    name: str
    domain: tuple[float, float, float, float]
    sigma_a: object
    sigma_s: object
    xi: float = XI
    g: float = G

    def mesh(self, n: int) -> fem.Mesh2D:
        return fem.build_rect_mesh(*self.domain, n, n)

    def medium(self, mesh: fem.Mesh2D) -> OpticalMedium:
        x, y = mesh.nodes.T
        return OpticalMedium(mesh, self.sigma_a(x, y), self.sigma_s(x, y), self.xi, self.g, warn_regime=False)


def _exp1_a(x, y):
    return 0.1 + 0.1 * _disk(x, y, 1.0, 1.5, 0.2) + 0.2 * _disk(x, y, 1.5, 1.0, 0.3)


PHANTOMS = {
    "exp1": Phantom("exp1", (0, 2, 0, 2), _exp1_a, lambda x, y: np.full_like(x, 80.0)),
    "exp1-smooth": Phantom(
        "exp1-smooth", (0, 2, 0, 2),
        lambda x, y: 0.2 + 0.1 * np.cos(np.pi * x - np.pi) * np.cos(np.pi * y - np.pi),
        lambda x, y: np.full_like(x, 80.0),
    ),
    "exp2": Phantom(
        "exp2", (0, 2, 0, 2), _exp1_a,
        lambda x, y: 85.0 + 260.0 * _disk(x, y, 0.5, 0.8, 0.3) + 260.0 * _disk(x, y, 1.4, 1.6, 0.2),
    ),
    "exp3": Phantom(
        "exp3", (0, 1, 0, 1),
        lambda x, y: 0.2 + 0.1 * _disk(x, y, 0.5, 0.25, 0.2),
        lambda x, y: 20.0 + 60.0 * _disk(x, y, 0.25, 0.75, 0.15) + 60.0 * _disk(x, y, 0.75, 0.75, 0.15),
    ),
}


def get_phantom(name: str) -> Phantom:
    try:
        return PHANTOMS[name]
    except KeyError:
        raise ValueError(f"unknown phantom {name!r}; choose from {sorted(PHANTOMS)}") from None


def make_phantom(name: str, mesh: fem.Mesh2D) -> OpticalMedium:
    return get_phantom(name).medium(mesh)


# --------------------------------------------------------- noise and errors


@dataclass(frozen=True)
class NoiseModel:
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("noise level must be non-negative")


def add_noise(data, nm: NoiseModel):
    """Multiply every datum by ``1 + sqrt(3) * eta/100 * u`` with ``u ~ U[-1, 1]``."""
    if nm.eta == 0:
        return data
    rng = np.random.default_rng(nm.seed)
    amp = np.sqrt(3.0) * nm.eta * 1e-2

    def one(a):
        return a * (1.0 + amp * rng.uniform(-1.0, 1.0, np.shape(a)))

    if isinstance(data, WaveRecord):
        return data.like(one(data.samples))
    if isinstance(data, (list, tuple)):
        return [d.like(one(d.samples)) if isinstance(d, WaveRecord) else one(np.asarray(d, dtype=float))
                for d in data]
    return one(np.asarray(data, dtype=float))


def relative_l2_error(reconstructed, truth, mesh: fem.Mesh2D) -> float:
    M = fem.mass(mesh)
    d = np.asarray(reconstructed, dtype=float) - truth
    return float(np.sqrt(d @ (M @ d) / (truth @ (M @ truth))))


# ------------------------------------------------------------ configuration


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    phantom: str = "exp1"
    data_model: str = "sp2"
    inversion_model: str = "sp2"
    data_type: str = "acoustic"  # acoustic | internal
    unknowns: str = "a"  # a | as
    n_inv: int = 48
    n_data: int = 0  # 0 or n_inv: same mesh for data and inversion
    T: float = 20.0
    wave_mass: str = "lumped"
    noise: list = field(default_factory=lambda: [0.0])
    seed: int = 0
    alpha: float = 1e-9
    beta: float = 0.0
    data_weight: float = 1.0
    normalize: bool = False  # divide the mismatch by the measured-data energy
    bounds: list = field(default_factory=lambda: [1e-3, 0.5, 10.0, 500.0])
    start_a: float = 0.1
    start_s: float = 0.0  # 0: scattering known/fixed at the truth
    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    output: str = ""

    def __post_init__(self):
        get_phantom(self.phantom)
        for key, allowed in [("data_model", ("sp2", "p1")), ("inversion_model", ("sp2", "p1")),
                             ("data_type", ("acoustic", "internal")), ("unknowns", ("a", "as")),
                             ("wave_mass", ("lumped", "consistent"))]:
            if getattr(self, key) not in allowed:
                raise ValueError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.unknowns == "as" and self.start_s <= 0:
            raise ValueError("joint inversion needs a positive start_s")
        if self.n_data and self.n_data < self.n_inv:
            raise ValueError("data mesh must not be coarser than the inversion mesh")

    @property
    def inverse_crime(self) -> bool:
        return self.n_data in (0, self.n_inv)


def _convert(value: str, default):
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        return [float(v) for v in value.replace(",", " ").split()]
    return value


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a config."""
    base = base or ExperimentConfig()
    values = dataclasses.asdict(base)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in values:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(value, values[key])
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------- data generation


def sample_internal_data(phantom: Phantom, fine: fem.Mesh2D, coarse: fem.Mesh2D, model: str = "sp2") -> np.ndarray:
    """Internal data for ``coarse`` computed with the light model on ``fine``.

    The smooth photon density is interpolated; the absorption and
    Grueneisen factors are evaluated exactly at the coarse nodes.
    """
    med = phantom.medium(fine)
    traces = source_traces(fine, side_midpoint_sources(fine))
    if model == "sp2":
        op = Sp2Operator(med)
        X = op.solve(op.source_rhs(traces))
        dens = X[: fine.node_count] - (2.0 / 3.0) * X[fine.node_count:]
    else:
        op = DiffusionOperator(med)
        dens = op.solve(op.source_rhs(traces))
    x, y = coarse.nodes.T
    dens_c = np.column_stack([fem.interpolate(fine, dens[:, j], coarse.nodes) for j in range(dens.shape[1])])
    return (phantom.xi * phantom.sigma_a(x, y))[:, None] * dens_c


def internal_data(phantom: Phantom, mesh: fem.Mesh2D, model: str = "sp2") -> np.ndarray:
    """Internal data generated and sampled on the same mesh."""
    return simulate_internal_data(phantom.medium(mesh), side_midpoint_sources(mesh), model)


def generate_data(cfg: ExperimentConfig, mesh: fem.Mesh2D, wave: WaveSolver | None):
    """Clean data on the inversion grid (internal fields or wave records)."""
    ph = get_phantom(cfg.phantom)
    if cfg.inverse_crime:
        H = internal_data(ph, mesh, cfg.data_model)
        return H if cfg.data_type == "internal" else wave.forward(H)
    fine = ph.mesh(cfg.n_data)
    if cfg.data_type == "internal":
        return sample_internal_data(ph, fine, mesh, cfg.data_model)
    Hf = internal_data(ph, fine, cfg.data_model)
    wf = WaveSolver(AcousticMedium(fine, 1.0, cfg.T, mass=cfg.wave_mass))
    return [resample_record(r, fine, mesh, wave.medium.dt, cfg.T) for r in wf.forward(Hf)]


# ---------------------------------------------------------------- inversion


@dataclass
class FitResult:
    sigma_a: np.ndarray
    sigma_s: np.ndarray
    trace: object
    seconds: float


def fit_coefficients(problem: ReconstructionProblem, reference: OpticalMedium, unknowns: str,
                     start_a: float, start_s: float | None, opt: OptimizerConfig) -> FitResult:
    """Bound-constrained fit of interior coefficients; boundary values come from ``reference``."""
    I = problem.interior
    n = len(I)
    la, ua, ls, us = problem.cfg.bounds
    sa = reference.sigma_a.copy()
    ss = reference.sigma_s.copy()
    joint = unknowns == "as"

    def unpack(x):
        a, s = sa.copy(), ss.copy()
        a[I] = x[:n]
        if joint:
            s[I] = x[n:]
        return a, s

    def f_and_grad(x):
        ev = problem.evaluate(*unpack(x))
        g = ev.gradient.grad_sigma_a[I]
        if joint:
            g = np.concatenate([g, ev.gradient.grad_sigma_s[I]])
        return ev.value, g

    x0 = np.full(n, start_a)
    bounds = np.tile([la, ua], (n, 1))
    scale = np.ones(n)
    if joint:
        x0 = np.concatenate([x0, np.full(n, start_s)])
        bounds = np.vstack([bounds, np.tile([ls, us], (n, 1))])
        scale = np.concatenate([scale, np.full(n, 1e-2)])
    x0 = np.clip(x0, bounds[:, 0], bounds[:, 1])
    t0 = time.perf_counter()
    x, trace = minimize(f_and_grad, x0, bounds, opt, scale=scale)
    a, s = unpack(x)
    return FitResult(a, s, trace, time.perf_counter() - t0)


@dataclass
class Report:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def table(self) -> list[tuple[float, float, float]]:
        return [(r["eta"], r["E_a"], r["E_s"]) for r in self.rows]


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Generate data, add noise for each level, invert, and collect errors."""
    ph = get_phantom(cfg.phantom)
    try:
        mesh = ph.mesh(cfg.n_inv)
        truth = ph.medium(mesh)
        sources = side_midpoint_sources(mesh)
        wave = WaveSolver(AcousticMedium(mesh, 1.0, cfg.T, mass=cfg.wave_mass)) if cfg.data_type == "acoustic" else None
    except Exception as exc:
        raise ExperimentError("setup", str(exc)) from exc
    try:
        clean = generate_data(cfg, mesh, wave)
    except Exception as exc:
        raise ExperimentError("data", str(exc)) from exc
    report = Report(cfg)
    obj = ObjectiveConfig(cfg.alpha, cfg.beta, cfg.inversion_model, tuple(cfg.bounds),
                          data_weight=cfg.data_weight, normalize=cfg.normalize)
    opt = OptimizerConfig(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol, step_tol=cfg.step_tol)
    for eta in cfg.noise:
        data = add_noise(clean, NoiseModel(eta, cfg.seed))
        try:
            prob = ReconstructionProblem(mesh, sources, data, obj, ph.xi, ph.g, wave)
            fit = fit_coefficients(prob, truth, cfg.unknowns, cfg.start_a, cfg.start_s or None, opt)
        except Exception as exc:
            raise ExperimentError(f"inversion eta={eta:g}", str(exc)) from exc
        row = {
            "eta": eta,
            "E_a": relative_l2_error(fit.sigma_a, truth.sigma_a, mesh),
            "E_s": relative_l2_error(fit.sigma_s, truth.sigma_s, mesh) if cfg.unknowns == "as" else 0.0,
            "iterations": len(fit.trace.values) - 1,
            "evaluations": fit.trace.evaluations,
            "status": fit.trace.status,
            "seconds": fit.seconds,
        }
        log.info("%s eta=%g E_a=%.4f E_s=%.4f (%s, %d it)", cfg.name, eta, row["E_a"], row["E_s"],
                 row["status"], row["iterations"])
        report.rows.append(row)
        report.fields[eta] = (fit.sigma_a, fit.sigma_s)
        report.traces[eta] = fit.trace
    if cfg.output:
        write_report(report, mesh, cfg.output)
    return report


def write_error_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["eta", "E_a", "E_s", "iterations", "evaluations", "status", "seconds"])
        for r in rows:
            wr.writerow([r["eta"], f"{r['E_a']:.6g}", f"{r['E_s']:.6g}", r["iterations"],
                         r["evaluations"], r["status"], f"{r['seconds']:.2f}"])


def write_report(report: Report, mesh: fem.Mesh2D, outdir) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_error_table(report.rows, out / "errors.csv")
    (out / "config.json").write_text(json.dumps(dataclasses.asdict(report.config), indent=2))
    for eta, (a, s) in report.fields.items():
        tag = f"eta{eta:g}"
        io.write_field_csv(mesh, np.column_stack([a, s]), out / f"fields_{tag}.csv", "sigma")
        io.write_grid(mesh, a, out / f"sigma_a_{tag}.txt")
        io.write_grid(mesh, s, out / f"sigma_s_{tag}.txt")
        report.traces[eta].to_csv(out / f"trace_{tag}.csv")
    return out


# ---------------------------------------------------------- linearized runs


def default_perturbations(mesh: fem.Mesh2D) -> dict[str, np.ndarray]:
    """Smooth interior bumps used for the linearized round trips."""
    x, y = mesh.nodes.T
    W, Hh = mesh.x1 - mesh.x0, mesh.y1 - mesh.y0
    inside = (~mesh.boundary_node_flags).astype(float)

    def bump(cx, cy, r):
        cx, cy, r = mesh.x0 + cx * W, mesh.y0 + cy * Hh, r * W
        return np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / r**2) * inside

    return {
        "sigma_a": 0.02 * bump(0.4, 0.55, 0.15),
        "sigma_s": 10.0 * bump(0.6, 0.4, 0.15),
        "xi": 0.05 * bump(0.55, 0.65, 0.15),
    }


def taylor_remainders(phantom: str, n: int, which: str, steps=(1e-1, 1e-2, 1e-3)) -> np.ndarray:
    """Norms of ``w(m + eps d) - w(m) - eps dw`` for the tangent-linear model.

    ``which`` selects the perturbed coefficient ("sigma_a" or "sigma_s"); the
    remainders should fall by two decades per decade of ``eps``.
    """
    ph = get_phantom(phantom)
    mesh = ph.mesh(n)
    med = ph.medium(mesh)
    bg = qt.make_background(med, side_midpoint_sources(mesh))
    pert = default_perturbations(mesh)
    zero = np.zeros(mesh.node_count)
    if which not in ("sigma_a", "sigma_s"):
        raise ValueError("which must be 'sigma_a' or 'sigma_s'")
    da, ds = (pert["sigma_a"], zero) if which == "sigma_a" else (zero, pert["sigma_s"])
    lin = qt.solve_perturbation(bg, da, ds)
    rems = []
    for eps in steps:
        op = Sp2Operator(med.replace(sigma_a=med.sigma_a + eps * da, sigma_s=med.sigma_s + eps * ds))
        p1, p2 = op.split(op.solve(op.source_rhs(bg.traces)))
        rems.append(np.linalg.norm(p1 - (2 / 3) * p2 - bg.w - eps * lin.delta_w))
    return np.array(rems)


def run_linearized(phantom: str, n: int, unknowns: str, beta: float = 1e-6, method: str = "optimizer",
                   eta: float = 0.0, seed: int = 0) -> dict:
    """Linearized two-stage round trip on synthetic perturbations of a phantom."""
    ph = get_phantom(phantom)
    mesh = ph.mesh(n)
    bg = qt.make_background(ph.medium(mesh), side_midpoint_sources(mesh))
    pert = default_perturbations(mesh)
    if unknowns == "xi-a":
        lin = qt.solve_perturbation(bg, pert["sigma_a"], np.zeros(mesh.node_count))
        dH = add_noise(qt.perturbed_data(bg, lin, pert["xi"]), NoiseModel(eta, seed))
        res = qt.reconstruct_xi_sigma_a(bg, dH, beta, method)
        return {"mesh": mesh, "delta_xi": res.first, "delta_sigma_a": res.second,
                "E_xi": relative_l2_error(res.first, pert["xi"], mesh),
                "E_a": relative_l2_error(res.second, pert["sigma_a"], mesh)}
    if unknowns == "a-s":
        lin = qt.solve_perturbation(bg, pert["sigma_a"], pert["sigma_s"])
        dH = add_noise(qt.perturbed_data(bg, lin), NoiseModel(eta, seed))
        res = qt.reconstruct_sigma_a_sigma_s(bg, dH, beta, method)
        return {"mesh": mesh, "delta_sigma_a": res.first, "delta_sigma_s": res.second,
                "E_a": relative_l2_error(res.first, pert["sigma_a"], mesh),
                "E_s": relative_l2_error(res.second, pert["sigma_s"], mesh)}
    raise ValueError("unknowns must be 'xi-a' or 'a-s'")
