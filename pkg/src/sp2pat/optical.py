"""Light propagation: simplified P2 system, diffusion (P1) model, initial pressure.

Discretization notes
--------------------
The diffusion and Robin terms use exact P1 quadrature.  Every term that
carries the absorption coefficient is written as a lumped reaction term
``m_k * sigma_a_k * u_k`` (``m`` the lumped nodal areas).  In the SP2 system
both equations see ``sigma_a`` only through ``sigma_a * (phi1 - 2/3 phi2)``,
so the discrete absorbed energy is exactly the nodal product ``H / Xi`` and
the inversions that replace it by data are algebraically exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import mesh as fem
from .sparse import BlockSystem2x2, make_solver

log = logging.getLogger(__name__)

REGIME_RATIO = 0.1


def derived_constants(g: float) -> tuple[float, float]:
    """Return ``(kappa, kappa_prime)`` for anisotropy factor ``g``."""
    if not (0.0 <= g < 1.0):
        raise ValueError(f"anisotropy factor must satisfy 0 <= g < 1, got {g}")
    kappa = 3.0 / (7.0 * (1.0 + g + g * g))
    return kappa, 3.0 * kappa / (1.0 + g)


def full_sp2_coefficients(sigma_a, sigma_s, g: float) -> dict:
    """Un-simplified coefficients ``sigma_an`` (n = 0..3), ``D`` and ``D~``.

    Kept for reference; the solvers use the small-absorption forms.
    """
    sigma_a = np.asarray(sigma_a, dtype=float)
    sigma_s = np.asarray(sigma_s, dtype=float)
    san = {n: sigma_a + (1.0 - g**n) * sigma_s for n in range(4)}
    return {
        "sigma_an": san,
        "D": 1.0 / (3.0 * san[1]),
        "D_tilde": 1.0 / (7.0 * san[3]),
    }


@dataclass(eq=False)
class OpticalMedium:
    mesh: fem.Mesh2D
    sigma_a: np.ndarray
    sigma_s: np.ndarray
    xi: np.ndarray
    g: float = 0.9
    warn_regime: bool = True

    def __post_init__(self):
        m = self.mesh
        self.sigma_a = _as_field(m, self.sigma_a, "sigma_a")
        self.sigma_s = _as_field(m, self.sigma_s, "sigma_s")
        self.xi = _as_field(m, self.xi, "xi")
        if np.any(self.sigma_s <= 0):
            raise ValueError("sigma_s must be positive")
        if np.any(self.sigma_a < 0):
            raise ValueError("sigma_a must be non-negative")
        self.kappa, self.kappa_prime = derived_constants(self.g)
        ratio = self.sigma_a / ((1.0 - self.g) * self.sigma_s)
        if self.warn_regime and ratio.max() > REGIME_RATIO:
            log.warning(
                "sigma_a / ((1-g) sigma_s) reaches %.3g; small-absorption regime assumed",
                ratio.max(),
            )

    @property
    def D(self) -> np.ndarray:
        return 1.0 / (3.0 * (1.0 - self.g) * self.sigma_s)

    @property
    def dD_dsigma_s(self) -> np.ndarray:
        return -1.0 / (3.0 * (1.0 - self.g) * self.sigma_s**2)

    @property
    def reaction2(self) -> np.ndarray:
        """The ``5 / (9 kappa' D)`` coefficient of the second SP2 equation."""
        return 5.0 / (9.0 * self.kappa_prime * self.D)

    @property
    def dreaction2_dsigma_s(self) -> float:
        return 5.0 * (1.0 - self.g) / (3.0 * self.kappa_prime)

    def replace(self, **changes) -> "OpticalMedium":
        kw = dict(mesh=self.mesh, sigma_a=self.sigma_a, sigma_s=self.sigma_s, xi=self.xi, g=self.g,
                  warn_regime=self.warn_regime)
        kw.update(changes)
        return OpticalMedium(**kw)


def _as_field(mesh, values, name):
    if np.isscalar(values):
        return np.full(mesh.node_count, float(values))
    return mesh.check_field(values, name).copy()


@dataclass(frozen=True)
class Illumination:
    """Gaussian boundary source, parameterized by arc length from ``center``."""

    center: tuple[float, float]
    std: float = 0.5
    amplitude: float = 1.0

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("illumination std must be positive")

    def trace(self, mesh: fem.Mesh2D) -> np.ndarray:
        """Nodal field equal to ``f`` on boundary nodes and zero inside."""
        s0 = boundary_coordinate(mesh, self.center)
        s = mesh.boundary_arclength
        P = mesh.perimeter
        d = np.abs(s - s0)
        d = np.minimum(d, P - d)
        out = np.zeros(mesh.node_count)
        out[mesh.boundary_nodes] = self.amplitude * np.exp(-0.5 * (d / self.std) ** 2)
        return out


def boundary_coordinate(mesh: fem.Mesh2D, point) -> float:
    """Arc-length coordinate (counter-clockwise from ``(x0, y0)``) of the
    boundary point closest to ``point``."""
    x, y = point
    W, Hh = mesh.x1 - mesh.x0, mesh.y1 - mesh.y0
    x = min(max(x, mesh.x0), mesh.x1)
    y = min(max(y, mesh.y0), mesh.y1)
    dists = [y - mesh.y0, mesh.x1 - x, mesh.y1 - y, x - mesh.x0]
    side = int(np.argmin(dists))
    return [x - mesh.x0, W + (y - mesh.y0), W + Hh + (mesh.x1 - x), 2 * W + Hh + (mesh.y1 - y)][side]


def side_midpoint_sources(mesh: fem.Mesh2D, std: float = 0.5) -> list[Illumination]:
    """Four sources centred on the midpoints of the left, right, bottom and top sides."""
    xm, ym = 0.5 * (mesh.x0 + mesh.x1), 0.5 * (mesh.y0 + mesh.y1)
    centers = [(mesh.x0, ym), (mesh.x1, ym), (xm, mesh.y0), (xm, mesh.y1)]
    return [Illumination(c, std) for c in centers]


def source_traces(mesh: fem.Mesh2D, sources) -> np.ndarray:
    """Stack boundary traces of ``sources`` into an ``(n, J)`` array."""
    if isinstance(sources, (Illumination, np.ndarray)) and not (
        isinstance(sources, np.ndarray) and sources.ndim == 2
    ):
        sources = [sources]
    cols = [s.trace(mesh) if isinstance(s, Illumination) else mesh.check_field(s, "source") for s in sources]
    return np.column_stack(cols)


# ------------------------------------------------------------------ states


@dataclass
class Sp2State:
    phi1: np.ndarray
    phi2: np.ndarray

    @property
    def w(self) -> np.ndarray:
        return self.phi1 - (2.0 / 3.0) * self.phi2


@dataclass
class DiffusionState:
    phi: np.ndarray


# --------------------------------------------------------------- operators


@dataclass(eq=False)
class Sp2Operator:
    """Assembled simplified-P2 operator for one medium.

    The unknown is ``[phi1; phi2]`` (length ``2n``).  ``coupling=False`` drops
    the off-diagonal ``phi2`` terms of the first equation and the ``phi1``
    terms of the second.
    """

    medium: OpticalMedium
    method: str = "direct"
    coupling: bool = True
    _solver: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        med, m = self.medium, self.medium.mesh
        k = med.kappa
        self.K = fem.stiffness(m, med.D)
        self.B = fem.boundary_mass(m)
        self.M2 = fem.mass(m, med.reaction2)
        self.Ma = sp.diags(m.lumped_mass * med.sigma_a)
        c = 1.0 if self.coupling else 0.0
        self.system = BlockSystem2x2(
            a11=self.K + self.Ma + 0.5 * self.B,
            a12=c * (-(2.0 / 3.0) * self.Ma - 0.125 * self.B),
            a21=c * (-(2.0 / (3.0 * k)) * self.Ma - self.B / (8.0 * k)),
            a22=self.K + self.M2 + (4.0 / (9.0 * k)) * self.Ma + (7.0 / (24.0 * k)) * self.B,
        )
        self.matrix = self.system.matrix()

    @property
    def solver(self):
        if self._solver is None:
            self._solver = make_solver(self.matrix, self.method)
        return self._solver

    @property
    def n(self) -> int:
        return self.medium.mesh.node_count

    def source_rhs(self, traces) -> np.ndarray:
        """Right-hand side for boundary sources (``traces`` is ``(n,)`` or ``(n, J)``)."""
        b = fem.boundary_load(self.medium.mesh, traces)
        k = self.medium.kappa
        return np.concatenate([0.5 * b, -b / (8.0 * k)], axis=0)

    def solve(self, rhs) -> np.ndarray:
        return self.solver.solve(rhs)

    def solve_transpose(self, rhs) -> np.ndarray:
        return self.solver.solve_transpose(rhs)

    def split(self, x):
        n = self.n
        return x[:n], x[n:]


@dataclass(eq=False)
class DiffusionOperator:
    medium: OpticalMedium
    method: str = "direct"
    _solver: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        med, m = self.medium, self.medium.mesh
        self.K = fem.stiffness(m, med.D)
        self.B = fem.boundary_mass(m)
        self.Ma = sp.diags(m.lumped_mass * med.sigma_a)
        self.matrix = (self.K + self.Ma + 0.5 * self.B).tocsr()

    @property
    def solver(self):
        if self._solver is None:
            self._solver = make_solver(self.matrix, self.method, symmetric=True)
        return self._solver

    def source_rhs(self, traces) -> np.ndarray:
        return 0.5 * fem.boundary_load(self.medium.mesh, traces)

    def solve(self, rhs) -> np.ndarray:
        return self.solver.solve(rhs)

    solve_transpose = solve


# ------------------------------------------------------------- public API


def solve_sp2(medium: OpticalMedium, source, method: str = "direct") -> Sp2State:
    op = Sp2Operator(medium, method)
    trace = source_traces(medium.mesh, source)[:, 0]
    x = op.solve(op.source_rhs(trace))
    return Sp2State(*op.split(x))


def solve_diffusion(medium: OpticalMedium, source, method: str = "direct") -> DiffusionState:
    op = DiffusionOperator(medium, method)
    trace = source_traces(medium.mesh, source)[:, 0]
    return DiffusionState(op.solve(op.source_rhs(trace)))


def pressure_data(medium: OpticalMedium, state) -> np.ndarray:
    """Nodal initial pressure ``Xi * sigma_a * density``."""
    if isinstance(state, Sp2State):
        density = state.w
    elif isinstance(state, DiffusionState):
        density = state.phi
    else:
        density = np.asarray(state, dtype=float)
    if density.shape[0] != medium.mesh.node_count:
        raise fem.MeshError("state and medium live on different meshes")
    scale = medium.xi * medium.sigma_a
    return scale[:, None] * density if density.ndim == 2 else scale * density


def simulate_internal_data(medium: OpticalMedium, sources, model: str = "sp2", method: str = "direct") -> np.ndarray:
    """Initial pressure fields for every source, shape ``(n, J)``."""
    traces = source_traces(medium.mesh, sources)
    if model == "sp2":
        op = Sp2Operator(medium, method)
        phi1, phi2 = op.split(op.solve(op.source_rhs(traces)))
        density = phi1 - (2.0 / 3.0) * phi2
    elif model == "p1":
        op = DiffusionOperator(medium, method)
        density = op.solve(op.source_rhs(traces))
    else:
        raise ValueError(f"unknown light model {model!r}")
    return pressure_data(medium, density.reshape(traces.shape))
