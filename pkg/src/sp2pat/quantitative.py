"""Inversions that start from internal pressure data.

* direct absorption reconstruction when scattering and Grueneisen are known,
* tangent-linear SP2 perturbations and the perturbed data they produce,
* two-stage linearized reconstructions of ``(dXi, dsigma_a)`` and
  ``(dsigma_a, dsigma_s)`` from pairwise difference data,
* the Q-field injectivity diagnostic,
* the SP2 versus diffusion absorption gap.

All linear maps are exact derivatives of the assembled SP2 system, so
inverse-crime round trips are limited only by regularization and solver
tolerances.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from . import mesh as fem
from .optical import OpticalMedium, Sp2Operator, source_traces
from .optimizer import OptimizerConfig, minimize
from .sparse import Factorized

log = logging.getLogger(__name__)

MASK_REL = 1e-8


# ------------------------------------------------------------------ helpers


def mask_small(values, denom, rel: float = MASK_REL, mesh: fem.Mesh2D | None = None):
    """Replace entries where ``|denom| < rel * max|denom|`` by the nearest kept value.

    Returns ``(filled, mask)`` with ``mask`` true at replaced nodes.
    """
    values = np.array(values, dtype=float)
    denom = np.asarray(denom, dtype=float)
    scale = np.abs(denom).max()
    mask = np.abs(denom) < rel * scale if scale > 0 else np.ones(denom.shape, bool)
    if mask.any() and not mask.all() and mesh is not None:
        tree = cKDTree(mesh.nodes[~mask])
        _, idx = tree.query(mesh.nodes[mask])
        values[mask] = values[~mask][idx]
    return values, mask


def _safe_div(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def absorption_free_operator(medium: OpticalMedium) -> Sp2Operator:
    """SP2 operator with every absorption term removed."""
    return Sp2Operator(medium.replace(sigma_a=np.zeros(medium.mesh.node_count), warn_regime=False))


def _absorbed_load(mesh: fem.Mesh2D, kappa: float, energy) -> np.ndarray:
    """Right-hand-side contribution of the absorbed energy ``sigma_a * w``."""
    e = mesh.lumped_mass[:, None] * _cols(energy)
    return np.vstack([e, -(2.0 / (3.0 * kappa)) * e])


def _cols(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


# ------------------------------------------------------- direct absorption


@dataclass
class DirectResult:
    sigma_a: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    mask: np.ndarray

    @property
    def w(self):
        return self.phi1 - (2.0 / 3.0) * self.phi2


def direct_sigma_a(mesh: fem.Mesh2D, xi, sigma_s, g: float, H, sources) -> DirectResult:
    """Absorption from internal data with known scattering and Grueneisen.

    Replaces the absorbed energy by ``H / Xi`` so the SP2 system becomes
    independent of ``sigma_a``; then ``sigma_a = sum H / (Xi sum w)``.
    """
    H = _cols(H)
    med = OpticalMedium(mesh, 0.0, sigma_s, xi, g, warn_regime=False)
    op = Sp2Operator(med)
    traces = source_traces(mesh, sources)
    if traces.shape[1] != H.shape[1]:
        raise ValueError("one data column per source is required")
    energy = H / med.xi[:, None]
    X = op.solve(op.source_rhs(traces) - _absorbed_load(mesh, med.kappa, energy))
    phi1, phi2 = op.split(X)
    wsum = np.sum(phi1 - (2.0 / 3.0) * phi2, axis=1)
    raw = _safe_div(np.sum(energy, axis=1), wsum)
    sigma_a, mask = mask_small(raw, wsum, mesh=mesh)
    if mask.mean() > 0.01:
        log.warning("absorption denominator vanishes at %d nodes: %s", mask.sum(), np.flatnonzero(mask)[:20])
    return DirectResult(sigma_a, phi1, phi2, mask)


# ------------------------------------------------------- background states


@dataclass(eq=False)
class Background:
    """SP2 background fields for ``J`` sources (columns)."""

    medium: OpticalMedium
    traces: np.ndarray
    phi1: np.ndarray = field(init=False)
    phi2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.op = Sp2Operator(self.medium)
        self.phi1, self.phi2 = self.op.split(self.op.solve(self.op.source_rhs(self.traces)))

    @property
    def w(self) -> np.ndarray:
        return self.phi1 - (2.0 / 3.0) * self.phi2

    @property
    def H(self) -> np.ndarray:
        return (self.medium.xi * self.medium.sigma_a)[:, None] * self.w

    @property
    def J(self) -> int:
        return self.traces.shape[1]


def make_background(medium: OpticalMedium, sources) -> Background:
    return Background(medium, source_traces(medium.mesh, sources))


def variable_change(n: int) -> sp.csr_matrix:
    """Map ``[w; phi2] -> [phi1; phi2]``."""
    I = sp.identity(n, format="csr")
    return sp.bmat([[I, (2.0 / 3.0) * I], [None, I]], format="csr")


def solve_background_linearized(medium: OpticalMedium, source):
    """Background ``(w, phi2)`` solved directly in the changed variables."""
    op = Sp2Operator(medium)
    n = medium.mesh.node_count
    A = op.matrix @ variable_change(n)
    trace = source_traces(medium.mesh, source)[:, 0]
    y = Factorized(A).solve(op.source_rhs(trace))
    return y[:n], y[n:]


# ---------------------------------------------------------- perturbations


@dataclass
class LinearizedState:
    delta_w: np.ndarray
    delta_phi2: np.ndarray
    delta_sigma_a: np.ndarray
    delta_sigma_s: np.ndarray
    delta_D: np.ndarray
    delta_xi: np.ndarray | None = None


def operator_derivative_action(medium: OpticalMedium, phi1, phi2, dsa, dD) -> np.ndarray:
    """``(dA) X`` for absorption change ``dsa`` and diffusion change ``dD``.

    The second-equation reaction ``5 / (9 kappa' D)`` moves by
    ``-5 dD / (9 kappa' D^2)``.
    """
    m = medium.mesh
    phi1, phi2 = _cols(phi1), _cols(phi2)
    w = phi1 - (2.0 / 3.0) * phi2
    out = _absorbed_load(m, medium.kappa, np.asarray(dsa)[:, None] * w)
    if np.any(dD):
        KdD = fem.stiffness(m, dD)
        dc2 = -5.0 * dD / (9.0 * medium.kappa_prime * medium.D**2)
        n = m.node_count
        out[:n] += KdD @ phi1
        out[n:] += KdD @ phi2 + fem.mass(m, dc2) @ phi2
    return out


def solve_perturbation(bg: Background, dsa, dss) -> LinearizedState:
    """Tangent-linear response ``(dw, dphi2)`` to ``(dsigma_a, dsigma_s)``."""
    m, med = bg.medium.mesh, bg.medium
    dsa = m.check_field(dsa, "delta_sigma_a")
    dss = m.check_field(dss, "delta_sigma_s")
    dD = med.dD_dsigma_s * dss
    rhs = -operator_derivative_action(med, bg.phi1, bg.phi2, dsa, dD)
    d1, d2 = bg.op.split(bg.op.solve(rhs))
    return LinearizedState(d1 - (2.0 / 3.0) * d2, d2, dsa, dss, dD)


def perturbed_data(bg: Background, lin: LinearizedState, dxi=None) -> np.ndarray:
    med = bg.medium
    dxi = np.zeros(med.mesh.node_count) if dxi is None else med.mesh.check_field(dxi, "delta_xi")
    coef = (dxi * med.sigma_a + med.xi * lin.delta_sigma_a)[:, None]
    return coef * bg.w + (med.xi * med.sigma_a)[:, None] * lin.delta_w


def difference_data(w_i, w_j, dH_i, dH_j, sigma_a, xi) -> np.ndarray:
    """Pairwise data combination that cancels the Grueneisen perturbation."""
    s = np.asarray(xi) * np.asarray(sigma_a)
    return _safe_div(w_j * dH_i - w_i * dH_j, s)


def source_pairs(J: int):
    return list(itertools.combinations(range(J), 2))


# ------------------------------------------------- pairwise least squares


class _PairLeastSquares:
    """``Psi(u) = sum_{i<j} |w_j dw_i - w_i dw_j - d_ij|^2 + beta |grad u|^2``.

    ``dw = G u + h`` columnwise; ``u`` lives on interior nodes.  ``Psi`` is
    divided by the data energy, so ``beta`` weighs the regularizer relative to
    the size of the data.
    """

    def __init__(self, mesh, w, apply_G, apply_GT, h, d, beta):
        self.mesh, self.w = mesh, w
        self.apply_G, self.apply_GT = apply_G, apply_GT
        self.h = h
        self.d = d
        self.pairs = source_pairs(w.shape[1])
        self.M = fem.mass(mesh)
        self.K1 = fem.stiffness(mesh, 1.0)
        self.interior = mesh.interior_nodes
        energy = sum(float(d[k] @ (self.M @ d[k])) for k in range(len(self.pairs)))
        self.norm = energy if energy > 0 else 1.0
        self.beta = beta

    def _full(self, u):
        x = np.zeros(self.mesh.node_count)
        x[self.interior] = u
        return x

    def residuals(self, dw, affine=True):
        out = []
        for k, (i, j) in enumerate(self.pairs):
            r = self.w[:, j] * dw[:, i] - self.w[:, i] * dw[:, j]
            out.append(r - self.d[k] if affine else r)
        return out

    def value_grad(self, u, affine=True):
        x = self._full(u)
        dw = self.apply_G(x) + (self.h if affine else 0.0)
        res = self.residuals(dw, affine)
        Z = np.zeros_like(dw)
        val = 0.0
        for k, (i, j) in enumerate(self.pairs):
            Mr = self.M @ res[k]
            val += float(res[k] @ Mr)
            Z[:, i] += self.w[:, j] * Mr
            Z[:, j] -= self.w[:, i] * Mr
        Kx = self.K1 @ x
        grad = 2.0 * (self.apply_GT(Z)[self.interior] / self.norm + self.beta * Kx[self.interior])
        return val / self.norm + self.beta * float(x @ Kx), grad

    def solve(self, method="optimizer", cfg=None):
        n = len(self.interior)
        if method == "optimizer":
            cfg = cfg or OptimizerConfig(max_iters=2000, grad_tol=1e-12, step_tol=1e-14)
            u, trace = minimize(self.value_grad, np.zeros(n), np.tile([-np.inf, np.inf], (n, 1)), cfg)
            return self._full(u), trace
        if method == "normal":
            _, g0 = self.value_grad(np.zeros(n))
            op = spla.LinearOperator((n, n), matvec=lambda v: self.value_grad(v, affine=False)[1], dtype=float)
            u, info = spla.cg(op, -g0, rtol=1e-10, atol=0.0, maxiter=20 * n)
            return self._full(u), info
        raise ValueError(f"unknown least-squares method {method!r}")


@dataclass
class TwoStageResult:
    first: np.ndarray
    second: np.ndarray
    delta_w: np.ndarray
    mask: np.ndarray
    info: object = None


def reconstruct_xi_sigma_a(bg: Background, dH, beta: float = 1e-6, method: str = "optimizer",
                           cfg: OptimizerConfig | None = None) -> TwoStageResult:
    """Two-stage ``(dXi, dsigma_a)`` recovery with scattering known.

    Returns ``TwoStageResult(first=dXi, second=dsigma_a, ...)``.
    """
    med, m = bg.medium, bg.medium.mesh
    dH = _cols(dH)
    if dH.shape[1] < 2 or dH.shape[1] != bg.J:
        raise ValueError("need one data column per background source and at least two sources")
    w, n = bg.w, m.node_count
    kap = med.kappa
    Pw = np.array([1.0, -2.0 / 3.0])

    def G(x):
        rhs = -_absorbed_load(m, kap, x[:, None] * w)
        X = bg.op.solve(rhs)
        return X[:n] + Pw[1] * X[n:]

    def GT(Z):
        Y = bg.op.solve_transpose(-np.vstack([Z, Pw[1] * Z]))
        return m.lumped_mass * np.sum(w * (Y[:n] - (2.0 / (3.0 * kap)) * Y[n:]), axis=1)

    pairs = source_pairs(bg.J)
    d = [difference_data(w[:, i], w[:, j], dH[:, i], dH[:, j], med.sigma_a, med.xi) for i, j in pairs]
    ls = _PairLeastSquares(m, w, G, GT, np.zeros_like(w), d, beta)
    dsa, info = ls.solve(method, cfg)
    dw = G(dsa)
    wsum = w.sum(axis=1)
    num = dH.sum(axis=1) - med.xi * dsa * wsum - med.xi * med.sigma_a * dw.sum(axis=1)
    den = med.sigma_a * wsum
    dxi, mask = mask_small(_safe_div(num, den), den, mesh=m)
    return TwoStageResult(dxi, dsa, dw, mask, info)


def reconstruct_sigma_a_sigma_s(bg: Background, dH, beta: float = 1e-6, method: str = "optimizer",
                                cfg: OptimizerConfig | None = None) -> TwoStageResult:
    """Two-stage ``(dsigma_a, dsigma_s)`` recovery with Grueneisen known.

    The absorbed-energy perturbation equals ``dH / Xi``, which removes
    ``dsigma_a`` from the linearized system; ``dD`` is fitted first.
    Returns ``TwoStageResult(first=dsigma_a, second=dsigma_s, ...)``.
    """
    med, m = bg.medium, bg.medium.mesh
    dH = _cols(dH)
    if dH.shape[1] < 2 or dH.shape[1] != bg.J:
        raise ValueError("need one data column per background source and at least two sources")
    w, n = bg.w, m.node_count
    free = absorption_free_operator(med)
    phi1, phi2 = bg.phi1, bg.phi2
    zero = np.zeros(n)
    dc2_coef = -5.0 / (9.0 * med.kappa_prime * med.D**2)

    def to_w(X):
        return X[:n] - (2.0 / 3.0) * X[n:]

    def G(x):
        return to_w(free.solve(-operator_derivative_action(med, phi1, phi2, zero, x)))

    def GT(Z):
        Y = free.solve_transpose(-np.vstack([Z, -(2.0 / 3.0) * Z]))
        y1, y2 = Y[:n], Y[n:]
        return (fem.stiffness_sensitivity(m, y1, phi1) + fem.stiffness_sensitivity(m, y2, phi2)
                + dc2_coef * fem.mass_sensitivity(m, y2, phi2))

    energy = dH / med.xi[:, None]
    h = to_w(free.solve(-_absorbed_load(m, med.kappa, energy)))
    pairs = source_pairs(bg.J)
    d = [difference_data(w[:, i], w[:, j], dH[:, i], dH[:, j], med.sigma_a, med.xi) for i, j in pairs]
    ls = _PairLeastSquares(m, w, G, GT, h, d, beta)
    dD, info = ls.solve(method, cfg)
    dw = G(dD) + h
    dss = dD / med.dD_dsigma_s
    wsum = w.sum(axis=1)
    num = energy.sum(axis=1) - med.sigma_a * dw.sum(axis=1)
    dsa, mask = mask_small(_safe_div(num, wsum), wsum, mesh=m)
    return TwoStageResult(dsa, dss, dw, mask, info)


# -------------------------------------------------------------- Q diagnostic


@dataclass
class QDiagnostic:
    Q: np.ndarray
    threshold: np.ndarray
    satisfied: np.ndarray
    min_grad_w: float

    @property
    def fraction(self) -> float:
        return float(self.satisfied.mean())


def q_diagnostic(medium: OpticalMedium, w, phi2) -> QDiagnostic:
    """Nodal Q field of one background solution and where ``Q > -gamma phi2^2``."""
    m = medium.mesh
    k, D = medium.kappa, medium.D
    gamma = 10.0 / (27.0 * medium.kappa_prime * D)
    gw = fem.nodal_gradients(m, w)
    gp = fem.nodal_gradients(m, phi2)
    u = D[:, None] * gw
    Q = (((1.0 + 4.0 / (9.0 * k)) * medium.sigma_a * w - 4.0 * gamma * phi2) * phi2
         - np.sum(u * gp, axis=1) - D * np.sum(gp * gp, axis=1) / 3.0)
    thr = -gamma * phi2**2
    tg = fem.triangle_gradients(m, w)
    return QDiagnostic(Q, thr, Q > thr, float(np.min(np.linalg.norm(tg, axis=1))))


# ----------------------------------------------------------- model gap


@dataclass
class ModelGap:
    sigma_a_sp2: np.ndarray
    sigma_a_p1: np.ndarray
    gap: np.ndarray
    gap_phi2: np.ndarray
    gap_full: np.ndarray
    phi2: np.ndarray
    phi_p1: np.ndarray
    phi1: np.ndarray
    mask: np.ndarray

    def discrepancy(self, mesh: fem.Mesh2D, full: bool = False) -> float:
        """Relative L2 distance between the direct gap and the closed form."""
        other = self.gap_full if full else self.gap_phi2
        keep = (~self.mask).astype(float)
        M = fem.mass(mesh)
        diff = (self.gap - other) * keep
        ref = self.gap * keep
        return float(np.sqrt(diff @ (M @ diff) / (ref @ (M @ ref))))


def p1_sigma_a(mesh: fem.Mesh2D, xi, sigma_s, g: float, H, source):
    """Diffusion-model absorption from one internal datum; returns ``(sigma_a, phi)``."""
    med = OpticalMedium(mesh, 0.0, sigma_s, xi, g, warn_regime=False)
    A = (fem.stiffness(mesh, med.D) + 0.5 * fem.boundary_mass(mesh)).tocsc()
    trace = source_traces(mesh, source)[:, 0]
    energy = np.asarray(H) / med.xi
    rhs = 0.5 * fem.boundary_load(mesh, trace) - mesh.lumped_mass * energy
    phi = spla.spsolve(A, rhs)
    return _safe_div(energy, phi), phi


def phi2_from_data(mesh: fem.Mesh2D, xi, sigma_s, g: float, H, source, sigma_a_boundary) -> np.ndarray:
    """Second moment from internal data alone, using known boundary absorption."""
    med = OpticalMedium(mesh, 0.0, sigma_s, xi, g, warn_regime=False)
    k = med.kappa
    B = fem.boundary_mass(mesh)
    A = (fem.stiffness(mesh, med.D) + fem.mass(mesh, med.reaction2) + (5.0 / (24.0 * k)) * B).tocsc()
    energy = np.asarray(H) / med.xi
    trace = source_traces(mesh, source)[:, 0]
    wb = np.zeros(mesh.node_count)
    bn = mesh.boundary_nodes
    sab = np.broadcast_to(np.asarray(sigma_a_boundary, dtype=float), (mesh.node_count,))
    wb[bn] = _safe_div(energy[bn], sab[bn])
    rhs = (2.0 / (3.0 * k)) * mesh.lumped_mass * energy + fem.boundary_load(mesh, wb - trace) / (8.0 * k)
    return spla.spsolve(A, rhs)


def cross_model_sigma_a_gap(mesh: fem.Mesh2D, xi, sigma_s, g: float, H, source, sigma_a_boundary,
                            rel: float = 1e-3) -> ModelGap:
    """SP2 minus diffusion absorption from the same internal datum.

    ``gap_phi2`` keeps only the second-moment term of the closed form;
    ``gap_full`` also carries the first-moment difference ``phi - phi1``.
    Nodes where ``H``, ``phi`` or ``w`` fall below ``rel`` times their maximum
    are masked.
    """
    H = np.asarray(H, dtype=float)
    direct = direct_sigma_a(mesh, xi, sigma_s, g, H[:, None], [source])
    phi1, phi2_sp2 = direct.phi1[:, 0], direct.phi2[:, 0]
    w = phi1 - (2.0 / 3.0) * phi2_sp2
    sa_p1, phi = p1_sigma_a(mesh, xi, sigma_s, g, H, source)
    sa_p2 = direct.sigma_a
    phi2 = phi2_from_data(mesh, xi, sigma_s, g, H, source, sigma_a_boundary)
    xi_f = np.broadcast_to(np.asarray(xi, dtype=float), H.shape)
    mask = np.zeros(H.shape, bool)
    for f in (H, phi, w):
        mask |= np.abs(f) < rel * np.abs(f).max() if np.abs(f).max() > 0 else True
    coef = _safe_div(xi_f * sa_p2 * sa_p1, H)
    gap = sa_p2 - sa_p1
    return ModelGap(
        sigma_a_sp2=sa_p2, sigma_a_p1=sa_p1, gap=gap,
        gap_phi2=coef * (2.0 / 3.0) * phi2,
        gap_full=coef * ((2.0 / 3.0) * phi2 + (phi - phi1)),
        phi2=phi2, phi_p1=phi, phi1=phi1, mask=mask,
    )
