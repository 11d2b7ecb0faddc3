"""Reduced objective and adjoint-state gradients for both light models.

One evaluation runs, per source: optical solve, initial pressure, wave
propagation (or direct comparison of internal data), data residual, adjoint
wave solve, adjoint optical solve and gradient accumulation.  The optical
adjoints are transposes of the assembled forward matrices, so gradients are
exact derivatives of the discrete objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import mesh as fem
from .acoustic import WaveRecord, WaveSolver
from .optical import DiffusionOperator, OpticalMedium, Sp2Operator, source_traces

MODELS = ("sp2", "p1")


@dataclass
class ObjectiveConfig:
    alpha: float = 0.0
    beta: float = 0.0
    model: str = "sp2"
    bounds: tuple[float, float, float, float] = (1e-3, 1.0, 10.0, 500.0)
    method: str = "direct"
    data_weight: float = 1.0
    normalize: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        la, ua, ls, us = self.bounds
        if not (la < ua and ls < us):
            raise ValueError(f"inconsistent bounds {self.bounds}")
        if self.alpha < 0 or self.beta < 0 or not np.isfinite(self.alpha + self.beta):
            raise ValueError("regularization weights must be finite and non-negative")
        if not self.data_weight > 0:
            raise ValueError("data_weight must be positive")


@dataclass
class GradientPair:
    grad_sigma_a: np.ndarray
    grad_sigma_s: np.ndarray


@dataclass
class AdjointOpticalState:
    psi1: np.ndarray | None = None
    psi2: np.ndarray | None = None
    eta: np.ndarray | None = None


@dataclass
class Evaluation:
    value: float
    gradient: GradientPair
    mismatch: list[float]
    reg_a: float
    reg_s: float
    pressure: np.ndarray = field(repr=False)


def regularization(K1, sigma) -> tuple[float, np.ndarray]:
    """``0.5 * |grad sigma|^2`` integrated, and its gradient."""
    Ks = K1 @ sigma
    return 0.5 * float(sigma @ Ks), Ks


def solve_adjoint_sp2(op: Sp2Operator, source_term) -> AdjointOpticalState:
    """Transpose SP2 solve for the data sensitivity ``source_term = dO/dH``."""
    med = op.medium
    s = (med.xi * med.sigma_a)[:, None] * _cols(source_term)
    rhs = -np.vstack([s, -(2.0 / 3.0) * s])
    psi = op.solve_transpose(rhs)
    p1, p2 = op.split(psi)
    return AdjointOpticalState(psi1=_uncols(p1, source_term), psi2=_uncols(p2, source_term))


def solve_adjoint_p1(op: DiffusionOperator, source_term) -> AdjointOpticalState:
    med = op.medium
    s = (med.xi * med.sigma_a)[:, None] * _cols(source_term)
    return AdjointOpticalState(eta=_uncols(op.solve_transpose(-s), source_term))


def _cols(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _uncols(a, like):
    return a[:, 0] if np.ndim(like) == 1 else a


def gradients_sp2(op: Sp2Operator, phi1, phi2, adj: AdjointOpticalState, data_sens) -> GradientPair:
    """Coefficient gradients from forward/adjoint SP2 fields (columns summed)."""
    med, m = op.medium, op.medium.mesh
    phi1, phi2, lam = _cols(phi1), _cols(phi2), _cols(data_sens)
    psi1, psi2 = _cols(adj.psi1), _cols(adj.psi2)
    w = phi1 - (2.0 / 3.0) * phi2
    ga = med.xi * np.sum(lam * w, axis=1)
    ga += m.lumped_mass * np.sum(w * (psi1 - (2.0 / (3.0 * med.kappa)) * psi2), axis=1)
    ks = fem.stiffness_sensitivity(m, psi1, phi1) + fem.stiffness_sensitivity(m, psi2, phi2)
    gs = med.dD_dsigma_s * ks + med.dreaction2_dsigma_s * fem.mass_sensitivity(m, psi2, phi2)
    return GradientPair(ga, gs)


def gradients_p1(op: DiffusionOperator, phi, adj: AdjointOpticalState, data_sens) -> GradientPair:
    med, m = op.medium, op.medium.mesh
    phi, eta, lam = _cols(phi), _cols(adj.eta), _cols(data_sens)
    ga = med.xi * np.sum(lam * phi, axis=1) + m.lumped_mass * np.sum(phi * eta, axis=1)
    gs = med.dD_dsigma_s * fem.stiffness_sensitivity(m, eta, phi)
    return GradientPair(ga, gs)


@dataclass(eq=False)
class ReconstructionProblem:
    """Everything fixed during an inversion: mesh, sources, data, wave solver.

    ``measured`` is a list of :class:`WaveRecord` (boundary acoustic data) or
    an ``(n, J)`` array of internal pressure fields.  The mismatch is
    multiplied by ``cfg.data_weight`` and, with ``cfg.normalize``, divided by
    the energy of the measured data.
    """

    mesh: fem.Mesh2D
    sources: object
    measured: object
    cfg: ObjectiveConfig
    xi: np.ndarray | float = 0.5
    g: float = 0.9
    wave: WaveSolver | None = None

    def __post_init__(self):
        self.traces = source_traces(self.mesh, self.sources)
        J = self.traces.shape[1]
        if isinstance(self.measured, np.ndarray):
            self.data_type = "internal"
            self.measured = _cols(self.measured)
            if self.measured.shape != (self.mesh.node_count, J):
                raise ValueError("internal data must have one column per source")
            self.M = fem.mass(self.mesh)
        else:
            self.data_type = "acoustic"
            self.measured = list(self.measured)
            if len(self.measured) != J:
                raise ValueError(f"{J} sources but {len(self.measured)} measured records")
            if self.wave is None:
                raise ValueError("acoustic data needs a wave solver")
        self.K1 = fem.stiffness(self.mesh, 1.0)
        self.interior = self.mesh.interior_nodes
        self.weight = self.cfg.data_weight
        if self.cfg.normalize:
            energy = self.data_energy()
            if energy > 0:
                self.weight /= energy

    def data_energy(self) -> float:
        """Half the squared norm of the measured data, summed over sources."""
        if self.data_type == "internal":
            return 0.5 * float(np.einsum("ij,ij->", self.measured, self.M @ self.measured))
        return sum(0.5 * self.wave.inner(r, r) for r in self.measured)

    def medium(self, sigma_a, sigma_s) -> OpticalMedium:
        return OpticalMedium(self.mesh, sigma_a, sigma_s, self.xi, self.g, warn_regime=False)

    def evaluate(self, sigma_a, sigma_s) -> Evaluation:
        cfg = self.cfg
        med = self.medium(sigma_a, sigma_s)
        if cfg.model == "sp2":
            op = Sp2Operator(med, cfg.method)
            phi1, phi2 = op.split(op.solve(op.source_rhs(self.traces)))
            density = phi1 - (2.0 / 3.0) * phi2
        else:
            op = DiffusionOperator(med, cfg.method)
            density = op.solve(op.source_rhs(self.traces))
        H = (med.xi * med.sigma_a)[:, None] * density
        mismatch, lam = self._data_term(H)
        mismatch = [self.weight * v for v in mismatch]
        lam = self.weight * lam
        if cfg.model == "sp2":
            adj = solve_adjoint_sp2(op, lam)
            grad = gradients_sp2(op, phi1, phi2, adj, lam)
        else:
            adj = solve_adjoint_p1(op, lam)
            grad = gradients_p1(op, density, adj, lam)
        ra, ga = regularization(self.K1, med.sigma_a)
        rs, gs = regularization(self.K1, med.sigma_s)
        grad.grad_sigma_a = grad.grad_sigma_a + cfg.alpha * ga
        grad.grad_sigma_s = grad.grad_sigma_s + cfg.beta * gs
        bnd = self.mesh.boundary_nodes
        grad.grad_sigma_a[bnd] = 0.0
        grad.grad_sigma_s[bnd] = 0.0
        value = sum(mismatch) + cfg.alpha * ra + cfg.beta * rs
        return Evaluation(value, grad, mismatch, ra, rs, H)

    def _data_term(self, H):
        """Per-source mismatch values and ``dO/dH`` columns."""
        J = H.shape[1]
        lam = np.empty_like(H)
        mismatch = []
        if self.data_type == "internal":
            R = H - self.measured
            MR = self.M @ R
            for j in range(J):
                mismatch.append(0.5 * float(R[:, j] @ MR[:, j]))
            return mismatch, MR
        samples = self.wave.propagate(H)
        for j in range(J):
            pred = WaveRecord(samples[:, :, j], self.wave.bnodes, self.wave.medium.dt, self.wave.medium.T)
            r = pred - self.measured[j]
            mismatch.append(0.5 * self.wave.inner(r, r))
            lam[:, j] = self.wave.M @ self.wave.adjoint(r)
        return mismatch, lam


def evaluate_objective(media: OpticalMedium, sources, measured, cfg: ObjectiveConfig, wave: WaveSolver | None = None):
    """Objective value and :class:`GradientPair` at ``media``."""
    prob = ReconstructionProblem(media.mesh, sources, measured, cfg, media.xi, media.g, wave)
    ev = prob.evaluate(media.sigma_a, media.sigma_s)
    return ev.value, ev.gradient


def gradient_check(problem: ReconstructionProblem, sigma_a, sigma_s, which: str, directions: int = 10,
                   eps: float | None = None, seed: int = 0) -> np.ndarray:
    """Relative mismatch between ``g . d`` and central differences along random interior ``d``.

    ``which`` is "sigma_a" or "sigma_s". The default step is 1e-3 of the mean
    coefficient value.
    """
    if which not in ("sigma_a", "sigma_s"):
        raise ValueError("which must be 'sigma_a' or 'sigma_s'")
    base = np.asarray(sigma_a if which == "sigma_a" else sigma_s, dtype=float)
    eps = 1e-3 * float(np.mean(np.abs(base))) if eps is None else eps
    ev = problem.evaluate(sigma_a, sigma_s)
    g = ev.gradient.grad_sigma_a if which == "sigma_a" else ev.gradient.grad_sigma_s
    rng = np.random.default_rng(seed)
    out = np.empty(directions)
    for k in range(directions):
        d = rng.standard_normal(problem.mesh.node_count)
        d[problem.mesh.boundary_nodes] = 0.0
        if which == "sigma_a":
            fp = problem.evaluate(sigma_a + eps * d, sigma_s).value
            fm = problem.evaluate(sigma_a - eps * d, sigma_s).value
        else:
            fp = problem.evaluate(sigma_a, sigma_s + eps * d).value
            fm = problem.evaluate(sigma_a, sigma_s - eps * d).value
        fd = (fp - fm) / (2 * eps)
        out[k] = abs(fd - g @ d) / abs(fd)
    return out


def write_diagnostics(path, evaluations: list[Evaluation]) -> None:
    """One row per evaluation: total value, per-source mismatch, gradient norms."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        J = len(evaluations[0].mismatch) if evaluations else 0
        wr.writerow(["evaluation", "value", *[f"mismatch_{j}" for j in range(J)], "grad_a_norm", "grad_s_norm"])
        for k, ev in enumerate(evaluations):
            wr.writerow([k, ev.value, *ev.mismatch,
                         np.linalg.norm(ev.gradient.grad_sigma_a), np.linalg.norm(ev.gradient.grad_sigma_s)])
