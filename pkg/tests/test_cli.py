import numpy as np

from sp2pat import io
from sp2pat.cli import main


def test_phantom_and_forward(tmp_path, capsys):
    assert main(["phantom", "exp3", "--n", "8", "--out", str(tmp_path / "ph")]) == 0
    truth = io.read_field_csv(tmp_path / "ph" / "truth.csv")
    assert truth.shape == (81, 2)
    assert main(["forward", "--phantom", "exp3", "--n", "8", "--T", "0.5", "--noise", "1",
                 "--out", str(tmp_path / "fw")]) == 0
    rec = io.read_record_binary(tmp_path / "fw" / "record_3.bin")
    assert rec.samples.shape[0] == 32
    assert "4 sources" in capsys.readouterr().out


def test_direct_and_linearized(capsys):
    assert main(["direct", "--phantom", "exp1", "--n", "16"]) == 0
    out = capsys.readouterr().out
    err = float(out.split("relative L2 error ")[1].split()[0])
    assert err < 1e-10
    assert main(["linearized", "--unknowns", "xi-a", "--n", "16", "--method", "normal"]) == 0
    assert "E_a=" in capsys.readouterr().out


def test_invert_with_config_and_report(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("phantom = exp1\nn_inv = 10\nT = 3\nmax_iters = 5\n")
    out = tmp_path / "inv"
    assert main(["invert", "--config", str(cfg), "--noise", "0", "2", "--out", str(out)]) == 0
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "eta,E_a,E_s" in text
    rows = np.loadtxt(out / "errors.csv", delimiter=",", skiprows=1, usecols=(0, 1))
    assert rows.shape == (2, 2)


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["report", str(tmp_path / "missing")]) == 1
    assert "error: [report]" in capsys.readouterr().err
    assert main(["invert", "--phantom", "exp1", "--n-inv", "1", "--max-iters", "2"]) == 2
    assert "[setup]" in capsys.readouterr().err


def test_compare_models_small(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare-models", "--n", "8", "--n-data", "16", "--max-iters", "3", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert " sp2 eta=0" in text and "  p1 eta=0" in text and "first-moment term" in text
    assert (out / "errors.csv").read_text().splitlines()[0] == "model,eta,E_a,E_s"
    assert io.read_field_csv(out / "gap.csv").shape == (81, 4)
