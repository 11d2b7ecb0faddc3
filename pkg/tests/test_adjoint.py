import numpy as np
import pytest

from sp2pat import adjoint as ad
from sp2pat import mesh as fem
from sp2pat.acoustic import AcousticMedium, WaveSolver
from sp2pat.optical import DiffusionOperator, OpticalMedium, Sp2Operator, side_midpoint_sources, simulate_internal_data


def _setup(n=12, T=4.0):
    m = fem.build_rect_mesh(0, 2, 0, 2, n, n)
    x, y = m.nodes.T
    sa = 0.1 + 0.1 * np.exp(-((x - 1) ** 2 + (y - 1.2) ** 2) / 0.1)
    ss = 80 + 20 * np.exp(-((x - 0.8) ** 2 + (y - 1) ** 2) / 0.1)
    truth = OpticalMedium(m, sa, ss, 0.5)
    return m, truth, side_midpoint_sources(m), WaveSolver(AcousticMedium(m, 1.0, T))


def _problem(model, kind, alpha=1e-6, beta=1e-9, **kw):
    m, truth, srcs, wave = _setup()
    H = simulate_internal_data(truth, srcs, model)
    meas = wave.forward(H) if kind == "acoustic" else H
    cfg = ad.ObjectiveConfig(alpha=alpha, beta=beta, model=model, **kw)
    return ad.ReconstructionProblem(m, srcs, meas, cfg, 0.5, 0.9, wave), truth


@pytest.mark.parametrize("model", ["sp2", "p1"])
@pytest.mark.parametrize("kind", ["acoustic", "internal"])
def test_gradient_matches_central_differences(model, kind):
    prob, truth = _problem(model, kind)
    m = prob.mesh
    a0 = np.full(m.node_count, 0.12)
    s0 = np.full(m.node_count, 90.0)
    ev = prob.evaluate(a0, s0)
    rng = np.random.default_rng(7)
    for which, eps in (("a", 1e-4), ("s", 1e-2)):
        d = rng.standard_normal(m.node_count)
        d[m.boundary_nodes] = 0.0
        if which == "a":
            fp, fm = prob.evaluate(a0 + eps * d, s0).value, prob.evaluate(a0 - eps * d, s0).value
            g = ev.gradient.grad_sigma_a
        else:
            fp, fm = prob.evaluate(a0, s0 + eps * d).value, prob.evaluate(a0, s0 - eps * d).value
            g = ev.gradient.grad_sigma_s
        fd = (fp - fm) / (2 * eps)
        assert abs(fd - g @ d) <= 1e-4 * abs(fd)


@pytest.mark.parametrize("model", ["sp2", "p1"])
def test_zero_misfit_at_truth(model):
    prob, truth = _problem(model, "acoustic", alpha=0.0, beta=0.0)
    ev = prob.evaluate(truth.sigma_a, truth.sigma_s)
    assert ev.value == 0.0
    assert not np.any(ev.gradient.grad_sigma_a) and not np.any(ev.gradient.grad_sigma_s)


def test_regularization_of_constants_vanishes():
    m = fem.build_rect_mesh(0, 1, 0, 1, 6, 6)
    K1 = fem.stiffness(m)
    val, grad = ad.regularization(K1, np.full(m.node_count, 3.0))
    assert abs(val) < 1e-12 and np.abs(grad).max() < 1e-12
    # integral of |grad x|^2 / 2 over the unit square
    assert ad.regularization(K1, m.nodes[:, 0])[0] == pytest.approx(0.5)


def test_objective_decomposition_and_boundary_lock():
    prob, truth = _problem("sp2", "internal", alpha=1e-3, beta=1e-7)
    ev = prob.evaluate(np.full(prob.mesh.node_count, 0.15), truth.sigma_s * 1.1)
    assert ev.value == pytest.approx(sum(ev.mismatch) + 1e-3 * ev.reg_a + 1e-7 * ev.reg_s, rel=1e-13)
    assert not np.any(ev.gradient.grad_sigma_a[prob.mesh.boundary_nodes])
    assert not np.any(ev.gradient.grad_sigma_s[prob.mesh.boundary_nodes])


def test_data_weight_and_normalization():
    prob, truth = _problem("p1", "internal", alpha=0.0, beta=0.0)
    a = np.full(prob.mesh.node_count, 0.15)
    base = prob.evaluate(a, truth.sigma_s).value
    w, _ = _problem("p1", "internal", alpha=0.0, beta=0.0, data_weight=4.0)
    assert w.evaluate(a, truth.sigma_s).value == pytest.approx(4 * base, rel=1e-12)
    nrm, _ = _problem("p1", "internal", alpha=0.0, beta=0.0, normalize=True)
    assert nrm.evaluate(a, truth.sigma_s).value == pytest.approx(base / prob.data_energy(), rel=1e-12)
    with pytest.raises(ValueError):
        ad.ObjectiveConfig(data_weight=0.0)


def test_p1_scattering_gradient_by_quadrature():
    """Scattering gradient equals dD/dsigma_s times a hand-assembled gradient pairing."""
    m, truth, srcs, _ = _setup(6)
    op = DiffusionOperator(truth)
    f = srcs[0].trace(m)
    phi = op.solve(op.source_rhs(f))
    lam = np.random.default_rng(2).standard_normal(m.node_count)
    adj = ad.solve_adjoint_p1(op, lam)
    gs = ad.gradients_p1(op, phi, adj, lam).grad_sigma_s
    ref = np.zeros(m.node_count)
    for t, tri in enumerate(m.triangles):
        G = m.tri_grads[t]
        val = (G.T @ adj.eta[tri]) @ (G.T @ phi[tri]) * m.tri_areas[t] / 3
        ref[tri] += val
    np.testing.assert_allclose(gs, truth.dD_dsigma_s * ref, rtol=1e-10, atol=1e-16)


def test_sp2_adjoint_is_transpose_solve():
    m, truth, _, _ = _setup(6)
    op = Sp2Operator(truth)
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((2, 2 * m.node_count))
    assert op.solve(a) @ b == pytest.approx(a @ op.solve_transpose(b), rel=1e-10)
    st = ad.solve_adjoint_sp2(op, np.zeros(m.node_count))
    assert not np.any(st.psi1) and not np.any(st.psi2)


def test_config_validation():
    with pytest.raises(ValueError):
        ad.ObjectiveConfig(model="p3")
    with pytest.raises(ValueError):
        ad.ObjectiveConfig(bounds=(1.0, 0.0, 10.0, 500.0))
    with pytest.raises(ValueError):
        ad.ObjectiveConfig(alpha=-1.0)
    m, truth, srcs, wave = _setup(6)
    with pytest.raises(ValueError):
        ad.ReconstructionProblem(m, srcs, np.zeros((m.node_count, 2)), ad.ObjectiveConfig())
    with pytest.raises(ValueError):
        ad.ReconstructionProblem(m, srcs, [], ad.ObjectiveConfig(), wave=wave)


def test_evaluate_objective_and_diagnostics(tmp_path):
    prob, truth = _problem("sp2", "internal")
    med = truth.replace(sigma_a=np.full(prob.mesh.node_count, 0.1))
    val, grad = ad.evaluate_objective(med, prob.sources, prob.measured, prob.cfg)
    ev = prob.evaluate(med.sigma_a, med.sigma_s)
    assert val == pytest.approx(ev.value)
    np.testing.assert_allclose(grad.grad_sigma_a, ev.gradient.grad_sigma_a)
    ad.write_diagnostics(tmp_path / "diag.csv", [ev, ev])
    rows = (tmp_path / "diag.csv").read_text().splitlines()
    assert rows[0].startswith("evaluation,value,mismatch_0") and len(rows) == 3


def test_gradient_check_helper():
    prob, _ = _problem("sp2", "internal")
    n = prob.mesh.node_count
    a0, s0 = np.full(n, 0.12), np.full(n, 90.0)
    errs = ad.gradient_check(prob, a0, s0, "sigma_s", directions=3, seed=1)
    assert errs.shape == (3,) and errs.max() <= 1e-4
    np.testing.assert_array_equal(errs, ad.gradient_check(prob, a0, s0, "sigma_s", directions=3, seed=1))
    with pytest.raises(ValueError):
        ad.gradient_check(prob, a0, s0, "xi")
