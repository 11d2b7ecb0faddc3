"""Acoustic wave propagation with Neumann walls and its discrete adjoint.

Semi-discrete system ``M p'' + K p = 0`` with ``M`` the ``1/c^2``-weighted mass
and ``K`` the unit stiffness.  Time stepping is leapfrog with the
zero-velocity start ``p1 = p0 - dt^2/2 L p0`` (``L = M^{-1} K``).  The adjoint
routine is the exact transpose of this recursion, so the pairing between a
forward trace and a residual is reproduced to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import mesh as fem

CFL_FACTOR = {"lumped": 0.5, "consistent": 0.3}


class CFLError(ValueError):
    """Time step exceeds the leapfrog stability limit."""


@dataclass(eq=False)
class AcousticMedium:
    mesh: fem.Mesh2D
    c: np.ndarray | float = 1.0
    T: float = 40.0
    dt: float | None = None
    mass: str = "lumped"

    def __post_init__(self):
        m = self.mesh
        self.c = np.full(m.node_count, float(self.c)) if np.isscalar(self.c) else m.check_field(self.c, "c").copy()
        if np.any(self.c <= 0):
            raise ValueError("sound speed must be positive")
        if self.mass not in CFL_FACTOR:
            raise ValueError(f"mass must be one of {sorted(CFL_FACTOR)}")
        if self.T <= 0:
            raise ValueError("final time must be positive")
        target = CFL_FACTOR[self.mass] * m.h_min / self.c.max() if self.dt is None else self.dt
        self.steps = max(1, math.ceil(self.T / target - 1e-9))
        self.dt = self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)


@dataclass
class WaveRecord:
    """Boundary pressure samples, shape ``(boundary nodes, steps + 1)``."""

    samples: np.ndarray
    boundary_nodes: np.ndarray
    dt: float
    T: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape[0] != len(self.boundary_nodes):
            raise ValueError("samples rows must match boundary nodes")
        steps = round(self.T / self.dt)
        if self.samples.shape[1] != steps + 1:
            raise ValueError(f"expected {steps + 1} time samples, got {self.samples.shape[1]}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("wave record contains non-finite values")

    @property
    def steps(self) -> int:
        return self.samples.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def like(self, samples) -> "WaveRecord":
        return WaveRecord(samples, self.boundary_nodes, self.dt, self.T)

    def __sub__(self, other: "WaveRecord") -> "WaveRecord":
        _check_grid(self, other)
        return self.like(self.samples - other.samples)


def _check_grid(a: WaveRecord, b: WaveRecord):
    if a.samples.shape != b.samples.shape or not np.array_equal(a.boundary_nodes, b.boundary_nodes):
        raise ValueError("wave records live on different boundary/time grids")
    if not math.isclose(a.dt, b.dt, rel_tol=1e-12):
        raise ValueError("wave records use different time steps")


def trapezoid_weights(steps: int, dt: float) -> np.ndarray:
    w = np.full(steps + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(eq=False)
class WaveSolver:
    """Precomputed operators for repeated forward and adjoint wave solves."""

    medium: AcousticMedium
    check_cfl: bool = True
    _lmax: float | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        ac, m = self.medium, self.medium.mesh
        self.K = fem.stiffness(m, 1.0)
        Mc = fem.mass(m, 1.0 / ac.c**2)
        if ac.mass == "lumped":
            self.M = sp.diags(np.asarray(Mc.sum(axis=1)).ravel()).tocsr()
            inv = 1.0 / self.M.diagonal()
            self._minv = lambda v: inv[:, None] * v if v.ndim == 2 else inv * v
        else:
            self.M = Mc
            lu = spla.splu(sp.csc_matrix(Mc))
            self._minv = lu.solve
        self.bnodes = m.boundary_nodes
        Bfull = fem.boundary_mass(m)
        self.Bb = Bfull[self.bnodes][:, self.bnodes].tocsr()
        self.weights = trapezoid_weights(ac.steps, ac.dt)
        if self.check_cfl:
            self.check_stability()

    @property
    def lambda_max(self) -> float:
        if self._lmax is None:
            vals = spla.eigsh(self.K, k=1, M=sp.csc_matrix(self.M), which="LA",
                              return_eigenvectors=False, tol=1e-6)
            self._lmax = float(vals[0])
        return self._lmax

    def stable_dt(self) -> float:
        """Largest leapfrog step for which ``dt^2 lambda_max < 4``."""
        return 2.0 / math.sqrt(self.lambda_max)

    def check_stability(self):
        limit = self.stable_dt()
        if self.medium.dt >= limit:
            raise CFLError(f"dt={self.medium.dt:.4g} exceeds stability limit {limit:.4g} ({self.medium.mass} mass)")

    def _L(self, p):
        return self._minv(self.K @ p)

    def propagate(self, H, keep_final: bool = False):
        """Run the leapfrog scheme from ``p(0) = H``.

        Returns boundary samples of shape ``(nb, steps+1)`` (or
        ``(nb, steps+1, J)`` for 2-D ``H``) and optionally the final field.
        """
        ac = self.medium
        p0 = np.array(H, dtype=float)
        if p0.shape[0] != ac.mesh.node_count:
            raise fem.MeshError("initial pressure and acoustic medium use different meshes")
        dt2 = ac.dt**2
        out = np.empty((len(self.bnodes), ac.steps + 1) + p0.shape[1:])
        out[:, 0] = p0[self.bnodes]
        p1 = p0 - 0.5 * dt2 * self._L(p0)
        out[:, 1] = p1[self.bnodes]
        prev, cur = p0, p1
        for n in range(1, ac.steps):
            nxt = 2.0 * cur - prev - dt2 * self._L(cur)
            out[:, n + 1] = nxt[self.bnodes]
            prev, cur = cur, nxt
        return (out, cur) if keep_final else out

    def forward(self, H) -> WaveRecord | list[WaveRecord]:
        ac = self.medium
        samples = self.propagate(H)
        if samples.ndim == 3:
            return [WaveRecord(samples[:, :, j], self.bnodes, ac.dt, ac.T) for j in range(samples.shape[2])]
        return WaveRecord(samples, self.bnodes, ac.dt, ac.T)

    def inner(self, a: WaveRecord, b: WaveRecord) -> float:
        """Space-time pairing: boundary mass in space, trapezoid in time."""
        _check_grid(a, b)
        return float(np.einsum("it,it,t->", a.samples, self.Bb @ b.samples, self.weights))

    def mismatch(self, predicted: WaveRecord, measured: WaveRecord) -> float:
        r = predicted - measured
        return 0.5 * self.inner(r, r)

    def adjoint(self, residual: WaveRecord) -> np.ndarray:
        """Nodal field ``dtq0`` with ``<trace(Ht), r> = Ht^T M dtq0`` for every ``Ht``."""
        ac = self.medium
        if residual.samples.shape != (len(self.bnodes), ac.steps + 1):
            raise ValueError("residual does not match the solver's boundary/time grid")
        if not math.isclose(residual.dt, ac.dt, rel_tol=1e-12):
            raise ValueError("residual time step differs from solver time step")
        n_nodes, N, dt2 = ac.mesh.node_count, ac.steps, ac.dt**2
        load = (self.Bb @ residual.samples) * self.weights

        def src(k):
            v = np.zeros(n_nodes)
            v[self.bnodes] = load[:, k]
            return self._minv(v)

        mu_next2 = np.zeros(n_nodes)  # mu_{n+2}
        mu_next = src(N)  # mu_{n+1}
        for k in range(N - 1, 0, -1):
            mu = src(k) + 2.0 * mu_next - dt2 * self._L(mu_next) - mu_next2
            mu_next2, mu_next = mu_next, mu
        if N == 1:
            return src(0) + mu_next - 0.5 * dt2 * self._L(mu_next)
        return src(0) + mu_next - 0.5 * dt2 * self._L(mu_next) - mu_next2

    def energy(self, H, staggered: bool = True) -> np.ndarray:
        """Discrete energy history for ``p(0) = H``.

        ``staggered=True`` gives the quantity the leapfrog scheme conserves
        exactly; otherwise central-difference velocities are used.
        """
        ac = self.medium
        dt, dt2 = ac.dt, ac.dt**2
        p = [np.asarray(H, dtype=float)]
        p.append(p[0] - 0.5 * dt2 * self._L(p[0]))
        for n in range(1, ac.steps):
            p.append(2.0 * p[n] - p[n - 1] - dt2 * self._L(p[n]))
        E = []
        if staggered:
            for n in range(ac.steps):
                v = (p[n + 1] - p[n]) / dt
                E.append(0.5 * v @ (self.M @ v) + 0.5 * p[n] @ (self.K @ p[n + 1]))
        else:
            E.append(0.5 * p[0] @ (self.K @ p[0]))
            for n in range(1, ac.steps):
                v = (p[n + 1] - p[n - 1]) / (2 * dt)
                E.append(0.5 * v @ (self.M @ v) + 0.5 * p[n] @ (self.K @ p[n]))
        return np.array(E)


def wave_forward(ac: AcousticMedium, H) -> WaveRecord | list[WaveRecord]:
    return WaveSolver(ac).forward(H)


def wave_adjoint(ac: AcousticMedium, residual: WaveRecord) -> np.ndarray:
    return WaveSolver(ac).adjoint(residual)


def resample_record(record: WaveRecord, src: fem.Mesh2D, dst: fem.Mesh2D, dt: float, T: float) -> WaveRecord:
    """Move a record onto another mesh's boundary nodes and time grid.

    Linear interpolation along periodic arc length, then in time.
    """
    s_src = src.boundary_arclength
    s_dst = dst.boundary_arclength
    if not math.isclose(src.perimeter, dst.perimeter, rel_tol=1e-12):
        raise ValueError("meshes describe different rectangles")
    P = src.perimeter
    s_ext = np.concatenate([s_src, [P]])
    vals = np.vstack([record.samples, record.samples[:1]])
    spatial = np.empty((len(s_dst), record.samples.shape[1]))
    for k in range(vals.shape[1]):
        spatial[:, k] = np.interp(s_dst, s_ext, vals[:, k])
    steps = round(T / dt)
    t_dst = dt * np.arange(steps + 1)
    if t_dst[-1] > record.T * (1 + 1e-12):
        raise ValueError("target time window exceeds the record")
    t_src = record.times
    out = np.empty((len(s_dst), steps + 1))
    for i in range(len(s_dst)):
        out[i] = np.interp(t_dst, t_src, spatial[i])
    return WaveRecord(out, dst.boundary_nodes, dt, T)
