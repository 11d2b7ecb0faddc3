import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sp2pat import harness as hz
from sp2pat import mesh as fem
from sp2pat.acoustic import AcousticMedium, WaveSolver


@pytest.mark.parametrize("name,point,a,s", [
    ("exp1", (1.0, 1.5), 0.2, 80.0),
    ("exp1", (1.5, 1.0), 0.3, 80.0),
    ("exp1", (0.2, 0.2), 0.1, 80.0),
    ("exp2", (0.5, 0.8), 0.1, 345.0),
    ("exp3", (0.5, 0.25), 0.3, 20.0),
    ("exp3", (0.25, 0.75), 0.2, 80.0),
    ("exp3", (0.05, 0.05), 0.2, 20.0),
])
def test_phantom_values(name, point, a, s):
    ph = hz.get_phantom(name)
    x, y = np.array([point[0]]), np.array([point[1]])
    assert ph.sigma_a(x, y)[0] == pytest.approx(a)
    assert ph.sigma_s(x, y)[0] == pytest.approx(s)


def test_unknown_phantom():
    with pytest.raises(ValueError):
        hz.get_phantom("exp9")
    m = hz.make_phantom("exp3", hz.get_phantom("exp3").mesh(8))
    assert m.mesh.node_count == 81


def test_zero_noise_is_identity():
    data = np.random.default_rng(0).standard_normal((50, 3))
    out = hz.add_noise(data, hz.NoiseModel(0.0, 4))
    assert out is data


@settings(deadline=None, max_examples=25)
@given(st.floats(0.1, 20.0), st.integers(0, 2**31 - 1))
def test_noise_bounded_multiplicative(eta, seed):
    data = np.random.default_rng(seed).uniform(0.5, 2.0, 1000)
    out = hz.add_noise(data, hz.NoiseModel(eta, seed))
    assert np.all(np.abs(out / data - 1) <= np.sqrt(3) * eta / 100 + 1e-15)


def test_noise_relative_std_and_reproducibility():
    data = np.ones(100_000)
    out = hz.add_noise(data, hz.NoiseModel(5.0, 11))
    assert np.std(out - 1.0) == pytest.approx(0.05, abs=0.002)
    np.testing.assert_array_equal(out, hz.add_noise(data, hz.NoiseModel(5.0, 11)))
    assert not np.array_equal(out, hz.add_noise(data, hz.NoiseModel(5.0, 12)))
    with pytest.raises(ValueError):
        hz.NoiseModel(-1.0)


def test_noise_on_records():
    m = fem.build_rect_mesh(0, 1, 0, 1, 6, 6)
    ws = WaveSolver(AcousticMedium(m, 1.0, 1.0))
    recs = ws.forward(np.column_stack([np.ones(m.node_count), m.nodes[:, 0]]))
    noisy = hz.add_noise(recs, hz.NoiseModel(2.0, 0))
    assert len(noisy) == 2 and noisy[0].samples.shape == recs[0].samples.shape
    assert not np.array_equal(noisy[0].samples, recs[0].samples)


def test_relative_l2_error_examples():
    m = fem.build_rect_mesh(0, 2, 0, 2, 10, 10)
    t = np.full(m.node_count, 0.1)
    assert hz.relative_l2_error(t, t, m) == 0.0
    assert hz.relative_l2_error(1.1 * t, t, m) == pytest.approx(0.1)
    assert hz.relative_l2_error(np.zeros(m.node_count), t, m) == pytest.approx(1.0)
    # linear error field e = x against a unit truth: ||x|| / ||1|| = sqrt(4/3)
    x = m.nodes[:, 0]
    assert hz.relative_l2_error(1 + x, np.ones(m.node_count), m) == pytest.approx(np.sqrt(4 / 3), rel=1e-12)


def test_parse_config():
    text = """
    # joint inversion
    name = demo
    phantom = exp2
    unknowns = as
    start_s = 120
    noise = 0, 2 5
    n-inv = 16
    normalize = true
    bounds = 0 1 10 500
    """
    cfg = hz.parse_config(text)
    assert cfg.name == "demo" and cfg.phantom == "exp2" and cfg.n_inv == 16
    assert cfg.noise == [0.0, 2.0, 5.0]
    assert cfg.bounds == [0.0, 1.0, 10.0, 500.0]
    assert cfg.normalize is True and cfg.inverse_crime
    for bad in ("unknowns = ab", "colour = red", "no equals sign", "phantom = nope"):
        with pytest.raises((ValueError, KeyError)):
            hz.parse_config(bad)
    with pytest.raises(ValueError):
        hz.ExperimentConfig(unknowns="as", start_s=0.0)
    with pytest.raises(ValueError):
        hz.ExperimentConfig(n_inv=32, n_data=16)


def test_sample_internal_data_matches_inverse_crime_on_same_mesh():
    ph = hz.get_phantom("exp1")
    m = ph.mesh(16)
    np.testing.assert_allclose(hz.sample_internal_data(ph, m, m), hz.internal_data(ph, m), rtol=1e-12)


def _tiny(**kw):
    base = dict(name="tiny", phantom="exp1", n_inv=12, T=3.0, max_iters=8, noise=[0.0, 5.0], alpha=1e-9)
    base.update(kw)
    return hz.ExperimentConfig(**base)


def test_run_experiment_reproducible_and_written(tmp_path):
    cfg = _tiny(output=str(tmp_path / "run"))
    r1 = hz.run_experiment(cfg)
    r2 = hz.run_experiment(_tiny())
    assert r1.table() == r2.table()
    assert r1.rows[0]["E_a"] < 0.5
    files = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert "errors.csv" in files and "fields_eta5.csv" in files and "trace_eta0.csv" in files
    assert json.loads((tmp_path / "run" / "config.json").read_text())["n_inv"] == 12


def test_run_experiment_internal_joint():
    cfg = _tiny(phantom="exp3", data_type="internal", unknowns="as", start_s=50.0, bounds=[0, 1, 10, 100],
                alpha=1e-3, beta=1e-8, noise=[0.0])
    rep = hz.run_experiment(cfg)
    assert rep.rows[0]["E_s"] > 0
    a, s = rep.fields[0.0]
    assert np.all((a >= 0) & (a <= 1)) and np.all((s >= 10) & (s <= 100))


def test_experiment_error_stage():
    cfg = _tiny(n_inv=1)
    with pytest.raises(hz.ExperimentError) as info:
        hz.run_experiment(cfg)
    assert info.value.stage == "setup"


def test_run_linearized_small():
    res = hz.run_linearized("exp1", 16, "xi-a", method="normal")
    assert res["E_a"] < 0.1
    with pytest.raises(ValueError):
        hz.run_linearized("exp1", 16, "a-xi")
