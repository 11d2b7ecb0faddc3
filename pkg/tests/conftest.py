"""Shared fixtures and manufactured-solution helpers."""

import sys

import numpy as np
import pytest
import sympy as sy

from sp2pat import mesh as fem

X, Y = sy.symbols("x y", real=True)


def lambdify(expr):
    f = sy.lambdify((X, Y), expr, "numpy")
    return lambda x, y: np.broadcast_to(np.asarray(f(x, y), dtype=float), np.shape(x)).copy()


def flux_divergence(D, u):
    """``div(D grad u)`` as a sympy expression."""
    return sy.diff(D * sy.diff(u, X), X) + sy.diff(D * sy.diff(u, Y), Y)


def robin_load(mesh, per_side):
    """Edge-wise boundary load ``int g v dS`` with a side-dependent datum.

    ``per_side(nx, ny)`` returns a callable ``g(x, y)`` for the outward
    normal ``(nx, ny)``; corners get the value of each adjacent side on the
    corresponding edge, so no corner averaging error enters.
    """
    out = np.zeros(mesh.node_count)
    for e, (a, b) in enumerate(mesh.boundary_edges):
        nrm = tuple(mesh.boundary_normals[e])
        g = per_side(*nrm)
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        ga, gb = g(pa[0], pa[1]), g(pb[0], pb[1])
        L = mesh.edge_lengths[e]
        out[a] += L * (2 * ga + gb) / 6
        out[b] += L * (ga + 2 * gb) / 6
    return out


def normal_flux(D, u):
    """Return ``(nx, ny) -> callable`` for ``D du/dn``."""
    ux, uy = sy.diff(u, X), sy.diff(u, Y)

    def per_side(nx, ny):
        return lambdify(D * (nx * ux + ny * uy))

    return per_side


def l2_error(mesh, approx, exact):
    e = approx - exact
    return float(np.sqrt(e @ (fem.mass(mesh) @ e)))


def observed_order(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


@pytest.fixture
def unit_mesh():
    return fem.build_rect_mesh(0.0, 1.0, 0.0, 1.0, 8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
